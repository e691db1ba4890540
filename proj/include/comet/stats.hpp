#pragma once

// Distribution utilities, feature scaling and spectrum diagnostics.
// Logarithms are natural throughout, so JSD is bounded by ln 2.

#include <Eigen/SVD>

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "comet/errors.hpp"
#include "comet/types.hpp"

namespace comet {

inline Vector softmax(const Vector& v) {
    if (v.size() == 0) return v;
    const double m = v.maxCoeff();
    Vector e = (v.array() - m).exp();
    return e / e.sum();
}

inline double xlogy_ratio(double p, double q) {
    // p ln(p / q) with 0 ln 0 = 0.
    return p > 0.0 ? p * std::log(p / q) : 0.0;
}

inline void check_distribution(std::span<const double> p, const char* what) {
    for (double x : p)
        if (x < 0.0 || !std::isfinite(x)) throw DataError(std::string(what) + " has a negative or non-finite entry");
}

// Jensen-Shannon divergence, 0 <= jsd <= ln 2.
inline double jsd(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw DataError("jsd: distributions differ in length");
    check_distribution(p, "jsd: p");
    check_distribution(q, "jsd: q");
    double kl_p = 0.0, kl_q = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        kl_p += xlogy_ratio(p[i], m);
        kl_q += xlogy_ratio(q[i], m);
    }
    const double v = 0.5 * kl_p + 0.5 * kl_q;
    return std::clamp(v, 0.0, std::log(2.0));
}

inline double jsd(const Vector& p, const Vector& q) {
    return jsd(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())),
               std::span<const double>(q.data(), static_cast<std::size_t>(q.size())));
}

inline double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * std::log(x);
    return h;
}

struct Standardization {
    Vector mean;
    Vector std;  // ddof = 0
};

inline Standardization fit_standardization(const Matrix& X) {
    Standardization s;
    s.mean = X.colwise().mean().transpose();
    const Matrix c = X.rowwise() - s.mean.transpose();
    s.std = (c.colwise().squaredNorm() / static_cast<double>(std::max<Eigen::Index>(X.rows(), 1))).cwiseSqrt().transpose();
    return s;
}

// Columns with std < 1e-12 are centered only.
inline Matrix apply_standardization(const Matrix& X, const Standardization& s) {
    if (X.cols() != s.mean.size()) throw DataError("standardize: dimension mismatch");
    Matrix out = X.rowwise() - s.mean.transpose();
    for (Eigen::Index j = 0; j < out.cols(); ++j)
        if (s.std(j) >= 1e-12) out.col(j) /= s.std(j);
    return out;
}

inline std::pair<Matrix, Standardization> standardize(const Matrix& X,
                                                      const std::optional<Standardization>& stats = std::nullopt) {
    const Standardization s = stats ? *stats : fit_standardization(X);
    return {apply_standardization(X, s), s};
}

struct RankDiagnostics {
    double effective_rank = 0.0;
    double normalized_effective_rank = 0.0;
    double explained_variance = 1.0;
    double product = 0.0;
    // False when no reference spectrum was given and explained_variance
    // defaults to 1.
    bool explained_variance_measured = false;
};

// Effective rank = exp(entropy of sigma / sum(sigma)) over the singular values
// of the column-centered matrix. When `reference_total_variance` is given
// (the covariance trace of the data before projection) explained_variance is
// this matrix's covariance trace divided by it.
inline RankDiagnostics rank_diagnostics(const Matrix& X, std::optional<double> reference_total_variance = std::nullopt) {
    if (X.rows() < 2) throw DataError("rank diagnostics need at least 2 rows");
    const Matrix c = X.rowwise() - X.colwise().mean();
    Eigen::BDCSVD<Matrix> svd(c);
    const Vector sigma = svd.singularValues();
    const double total = sigma.sum();
    if (!(total > 0.0)) throw DataError("rank diagnostics of a constant matrix are undefined");
    double h = 0.0;
    for (Eigen::Index k = 0; k < sigma.size(); ++k) {
        const double p = sigma(k) / total;
        if (p > 0.0) h -= p * std::log(p);
    }
    RankDiagnostics r;
    r.effective_rank = std::exp(h);
    r.normalized_effective_rank = r.effective_rank / static_cast<double>(X.cols());
    if (reference_total_variance) {
        const double var = c.squaredNorm() / static_cast<double>(X.rows() - 1);
        r.explained_variance = *reference_total_variance > 0.0 ? std::min(1.0, var / *reference_total_variance) : 0.0;
        r.explained_variance_measured = true;
    }
    r.product = r.explained_variance * r.normalized_effective_rank;
    return r;
}

}  // namespace comet
