#pragma once

// In-context classifier contract and the built-in kernel reference predictor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "comet/errors.hpp"
#include "comet/parallel.hpp"
#include "comet/rng.hpp"
#include "comet/stats.hpp"
#include "comet/types.hpp"

namespace comet {

struct PredictorCapabilities {
    std::optional<std::size_t> max_support;
    std::optional<std::size_t> max_classes;
    std::optional<std::size_t> max_dim;
};

// Maps (query rows, labeled support rows) to an m x C row-stochastic matrix
// whose column c is the posterior mass of class c. No state is updated.
class InContextClassifier {
public:
    virtual ~InContextClassifier() = default;

    virtual Matrix predict(const Matrix& query, const Matrix& support, const Labels& support_labels,
                           int num_classes) const = 0;

    virtual PredictorCapabilities capabilities() const { return {}; }
    virtual std::string name() const = 0;
};

inline void check_predict_inputs(const Matrix& query, const Matrix& support, const Labels& support_labels,
                                 int num_classes) {
    if (support.rows() == 0) throw DataError("predict: empty support set");
    if (query.cols() != support.cols())
        throw DataError("predict: query dimension " + std::to_string(query.cols()) + " != support dimension " +
                        std::to_string(support.cols()));
    if (static_cast<Eigen::Index>(support_labels.size()) != support.rows())
        throw DataError("predict: support label count does not match support rows");
    if (num_classes < 2) throw DataError("predict: need at least 2 classes");
    for (int y : support_labels)
        if (y < 0 || y >= num_classes) throw DataError("predict: support label out of range");
}

// Contract check shared by every backend.
inline void check_row_stochastic(const Matrix& p, Eigen::Index rows, int num_classes, double tol) {
    if (p.rows() != rows || p.cols() != num_classes)
        throw PredictorError("prediction shape " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) +
                             ", expected " + std::to_string(rows) + "x" + std::to_string(num_classes));
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        if (!p.row(i).allFinite() || (p.row(i).array() < 0.0).any())
            throw PredictorError("prediction row " + std::to_string(i) + " has negative or non-finite entries");
        const double s = p.row(i).sum();
        if (std::abs(s - 1.0) > tol)
            throw PredictorError("prediction row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
}

inline int argmax_row(const Matrix& p, Eigen::Index row) {
    // Ties resolve to the lowest index.
    int best = 0;
    for (Eigen::Index c = 1; c < p.cols(); ++c)
        if (p(row, c) > p(row, best)) best = static_cast<int>(c);
    return best;
}

inline Labels argmax_rows(const Matrix& p) {
    Labels out(static_cast<std::size_t>(p.rows()));
    for (Eigen::Index i = 0; i < p.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_row(p, i);
    return out;
}

struct ReferencePredictorConfig {
    double bandwidth_scale = 1.0;
    double smoothing_alpha = 1.0;
    bool standardize = true;
    std::uint64_t seed = 0;
    std::size_t bandwidth_sample = 2000;  // rows used for the median-distance bandwidth
};

// Gaussian-kernel class posterior:
//   p_c(x) ∝ alpha + sum_{i: y_i = c} exp(-|x - x_i|^2 / (2 h^2))
// with h = bandwidth_scale * median pairwise support distance, computed after
// z-scoring with support statistics.
class ReferencePredictor final : public InContextClassifier {
public:
    explicit ReferencePredictor(ReferencePredictorConfig cfg = {}) : cfg_(cfg) {
        if (!(cfg_.bandwidth_scale > 0.0)) throw DataError("bandwidth_scale must be > 0");
        if (!(cfg_.smoothing_alpha >= 0.0)) throw DataError("smoothing_alpha must be >= 0");
    }

    std::string name() const override { return "reference"; }
    const ReferencePredictorConfig& config() const { return cfg_; }

    Matrix predict(const Matrix& query, const Matrix& support, const Labels& support_labels,
                   int num_classes) const override {
        check_predict_inputs(query, support, support_labels, num_classes);
        Matrix sup = support;
        Matrix qry = query;
        if (cfg_.standardize) {
            const auto stats = fit_standardization(support);
            sup = apply_standardization(support, stats);
            qry = apply_standardization(query, stats);
        }
        const double h = bandwidth(sup);
        const double inv_two_h2 = 1.0 / (2.0 * h * h);
        const Vector sup_sq = sup.rowwise().squaredNorm();

        Matrix out(query.rows(), num_classes);
        constexpr std::size_t kBlock = 256;
        const auto m = static_cast<std::size_t>(query.rows());
        const std::size_t blocks = (m + kBlock - 1) / kBlock;
        parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
            std::vector<double> mass(static_cast<std::size_t>(num_classes));
            for (std::size_t b = b0; b < b1; ++b) {
                const auto r0 = static_cast<Eigen::Index>(b * kBlock);
                const auto rn = static_cast<Eigen::Index>(std::min(kBlock, m - b * kBlock));
                const Matrix q = qry.middleRows(r0, rn);
                Matrix d2 = -2.0 * (q * sup.transpose());
                d2.colwise() += q.rowwise().squaredNorm();
                d2.rowwise() += sup_sq.transpose();
                for (Eigen::Index i = 0; i < rn; ++i) {
                    double min_d2 = std::max(0.0, d2.row(i).minCoeff());
                    std::fill(mass.begin(), mass.end(), 0.0);
                    for (Eigen::Index j = 0; j < d2.cols(); ++j) {
                        const double dist = std::max(0.0, d2(i, j));
                        mass[static_cast<std::size_t>(support_labels[static_cast<std::size_t>(j)])] +=
                            std::exp(-(dist - min_d2) * inv_two_h2);
                    }
                    // mass_c is scaled by exp(+min_d2 / 2h^2) relative to the kernel sum.
                    const double scale = std::exp(-min_d2 * inv_two_h2);
                    double total = 0.0;
                    for (auto& v : mass) {
                        v = cfg_.smoothing_alpha > 0.0 ? cfg_.smoothing_alpha + scale * v : v;
                        total += v;
                    }
                    for (int c = 0; c < num_classes; ++c)
                        out(r0 + i, c) = total > 0.0 ? mass[static_cast<std::size_t>(c)] / total
                                                     : 1.0 / static_cast<double>(num_classes);
                }
            }
        }, 1);
        return out;
    }

    // Median pairwise distance over at most bandwidth_sample rows, times
    // bandwidth_scale; falls back to 1 when that median is zero.
    double bandwidth(const Matrix& sup) const {
        const auto n = static_cast<std::size_t>(sup.rows());
        Rng rng(cfg_.seed);
        const auto rows = rng.sample_without_replacement(n, std::min(n, cfg_.bandwidth_sample));
        Matrix sub(static_cast<Eigen::Index>(rows.size()), sup.cols());
        for (std::size_t a = 0; a < rows.size(); ++a)
            sub.row(static_cast<Eigen::Index>(a)) = sup.row(static_cast<Eigen::Index>(rows[a]));
        const Matrix gram = sub * sub.transpose();
        std::vector<double> dists;
        dists.reserve(rows.size() * (rows.size() - 1) / 2);
        for (Eigen::Index a = 0; a < gram.rows(); ++a)
            for (Eigen::Index b = a + 1; b < gram.cols(); ++b)
                dists.push_back(std::sqrt(std::max(0.0, gram(a, a) + gram(b, b) - 2.0 * gram(a, b))));
        double med = 0.0;
        if (!dists.empty()) {
            const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
            std::nth_element(dists.begin(), mid, dists.end());
            med = *mid;
            if (dists.size() % 2 == 0) {
                const double lower = *std::max_element(dists.begin(), mid);
                med = 0.5 * (med + lower);
            }
        }
        if (!(med > 0.0)) med = 1.0;
        return cfg_.bandwidth_scale * med;
    }

private:
    ReferencePredictorConfig cfg_;
};

}  // namespace comet
