#pragma once

// PCA and weighted ridge regression.

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "comet/errors.hpp"
#include "comet/types.hpp"

namespace comet {

struct PcaProjection {
    Vector mean;                       // input dimension d
    Matrix components;                 // d x k, orthonormal columns
    Vector eigenvalues;                // k, non-increasing
    Vector explained_variance_ratio;   // k
    double total_variance = 0.0;       // trace of the sample covariance

    std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
    std::size_t output_dim() const { return static_cast<std::size_t>(components.cols()); }
};

// Sample covariance (ddof = 1) of the rows of X about `mean`.
inline Matrix sample_covariance(const Matrix& X, const Vector& mean) {
    const Matrix centered = X.rowwise() - mean.transpose();
    Matrix cov = centered.transpose() * centered;
    cov /= static_cast<double>(X.rows() - 1);
    return cov;
}

// Top-k eigenvectors of the sample covariance, k = min(target_dim, d, n - 1).
// Each component's largest-magnitude entry is made non-negative.
inline PcaProjection fit_pca(const Matrix& X, std::size_t target_dim) {
    const auto n = static_cast<std::size_t>(X.rows());
    const auto d = static_cast<std::size_t>(X.cols());
    if (n < 2) throw DataError("PCA needs at least 2 samples, got " + std::to_string(n));
    if (!X.allFinite()) throw DataError("PCA input contains NaN or Inf");
    const std::size_t k = std::min({target_dim, d, n - 1});

    PcaProjection p;
    p.mean = X.colwise().mean().transpose();
    const Matrix cov = sample_covariance(X, p.mean);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) throw DataError("covariance eigendecomposition failed");

    // Eigen returns ascending order.
    p.components.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
    p.eigenvalues.resize(static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < k; ++j) {
        const auto src = static_cast<Eigen::Index>(d - 1 - j);
        Vector v = eig.eigenvectors().col(src);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        p.components.col(static_cast<Eigen::Index>(j)) = v;
        p.eigenvalues(static_cast<Eigen::Index>(j)) = std::max(0.0, eig.eigenvalues()(src));
    }
    p.total_variance = cov.trace();
    p.explained_variance_ratio = p.total_variance > 0.0 ? Vector(p.eigenvalues / p.total_variance)
                                                        : Vector(Vector::Zero(static_cast<Eigen::Index>(k)));
    return p;
}

inline Matrix project(const PcaProjection& p, const Matrix& X) {
    if (static_cast<std::size_t>(X.cols()) != p.input_dim())
        throw DataError("projection expects dimension " + std::to_string(p.input_dim()) + ", got " +
                        std::to_string(X.cols()));
    return (X.rowwise() - p.mean.transpose()) * p.components;
}

inline FeatureMatrix project(const PcaProjection& p, const FeatureMatrix& X) {
    FeatureMatrix out = X;
    out.values = project(p, X.values);
    return out;
}

struct RidgeSolution {
    Vector theta;
    double lambda = 0.0;
};

// Accumulated normal equations (Z^T W Z, Z^T W s) so large token sets can be
// streamed without materializing Z.
struct NormalEquations {
    Matrix gram;
    Vector rhs;
    Vector weighted_sum;  // Z^T w, kept so targets can be centered after accumulation
    double weight_total = 0.0;
    double weighted_target_total = 0.0;

    explicit NormalEquations(std::size_t d)
        : gram(Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))),
          rhs(Vector::Zero(static_cast<Eigen::Index>(d))),
          weighted_sum(Vector::Zero(static_cast<Eigen::Index>(d))) {}

    template <typename RowExpr>
    void add(const RowExpr& z, double target, double weight) {
        gram.noalias() += weight * z.transpose() * z;
        rhs.noalias() += (weight * target) * z.transpose();
        weighted_sum.noalias() += weight * z.transpose();
        weight_total += weight;
        weighted_target_total += weight * target;
    }

    void add_block(const Matrix& Z, const Vector& s, const Vector& w) {
        const Matrix wz = w.asDiagonal() * Z;
        gram.noalias() += Z.transpose() * wz;
        rhs.noalias() += wz.transpose() * s;
        weighted_sum.noalias() += wz.colwise().sum().transpose();
        weight_total += w.sum();
        weighted_target_total += w.dot(s);
    }

    double target_mean() const { return weight_total > 0.0 ? weighted_target_total / weight_total : 0.0; }

    // Right-hand side for targets s - mean(s), weighted.
    Vector centered_rhs() const { return rhs - target_mean() * weighted_sum; }
};

// theta = (Z^T W Z + lambda I)^{-1} Z^T W s via Cholesky (LDL^T when lambda = 0).
inline RidgeSolution solve_normal_equations(const NormalEquations& ne, double lambda, bool center_targets = false) {
    if (lambda < 0.0 || !std::isfinite(lambda)) throw DataError("ridge lambda must be finite and >= 0");
    Matrix a = ne.gram;
    a.diagonal().array() += lambda;
    RidgeSolution sol;
    sol.lambda = lambda;
    Eigen::LDLT<Matrix> ldlt(a);
    const Vector diag = ldlt.vectorD();
    const double scale = std::max(a.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    if (ldlt.info() != Eigen::Success || diag.minCoeff() <= scale * 1e-13)
        throw SingularError("normal matrix is singular; use lambda > 0");
    sol.theta = ldlt.solve(center_targets ? ne.centered_rhs() : ne.rhs);
    if (!sol.theta.allFinite()) throw SingularError("ridge solution is not finite");
    return sol;
}

inline RidgeSolution ridge_solve(const Matrix& Z, const Vector& s, const std::optional<Vector>& w, double lambda) {
    if (Z.rows() < 1) throw DataError("ridge needs at least one row");
    if (s.size() != Z.rows()) throw DataError("ridge target length does not match rows");
    NormalEquations ne(static_cast<std::size_t>(Z.cols()));
    if (w) {
        if (w->size() != Z.rows()) throw DataError("ridge weight length does not match rows");
        if ((w->array() <= 0.0).any()) throw DataError("ridge weights must be positive");
        ne.add_block(Z, s, *w);
    } else {
        ne.gram.noalias() = Z.transpose() * Z;
        ne.rhs.noalias() = Z.transpose() * s;
    }
    return solve_normal_equations(ne, lambda);
}

}  // namespace comet
