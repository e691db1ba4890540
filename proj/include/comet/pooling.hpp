#pragma once

// Token-to-vector pooling: mean, CLS selection, local grid coarsening and
// softmax-weighted (PAL) pooling with a linear token scorer.

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "comet/errors.hpp"
#include "comet/parallel.hpp"
#include "comet/stats.hpp"
#include "comet/types.hpp"

namespace comet {

// Linear token scorer. A zero theta gives uniform weights, i.e. mean pooling.
struct PalPooler {
    Vector theta;
    int fitted_iteration = 0;

    static PalPooler mean_pooling(std::size_t d) { return {Vector::Zero(static_cast<Eigen::Index>(d)), 0}; }
    std::size_t d() const { return static_cast<std::size_t>(theta.size()); }
};

inline nlohmann::json to_json(const PalPooler& p) {
    return {{"d", p.d()}, {"fitted_iteration", p.fitted_iteration},
            {"theta", std::vector<double>(p.theta.data(), p.theta.data() + p.theta.size())}};
}

inline PalPooler pal_pooler_from_json(const nlohmann::json& j) {
    try {
        const auto theta = j.at("theta").get<std::vector<double>>();
        PalPooler p;
        p.theta = Eigen::Map<const Vector>(theta.data(), static_cast<Eigen::Index>(theta.size()));
        p.fitted_iteration = j.value("fitted_iteration", 0);
        if (j.contains("d") && j.at("d").get<std::size_t>() != theta.size())
            throw DataError("pooler 'd' does not match theta length");
        if (!p.theta.allFinite()) throw DataError("pooler theta is not finite");
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed pooler: ") + e.what());
    }
}

namespace pooling_detail {

inline FeatureMatrix pooled_shell(const TokenEmbeddingSet& tokens, std::size_t d) {
    FeatureMatrix out;
    out.values.resize(static_cast<Eigen::Index>(tokens.n()), static_cast<Eigen::Index>(d));
    out.sample_ids = tokens.sample_ids;
    out.labels = tokens.labels;
    out.num_classes = tokens.num_classes;
    return out;
}

}  // namespace pooling_detail

inline FeatureMatrix mean_pool(const TokenEmbeddingSet& tokens) {
    auto out = pooling_detail::pooled_shell(tokens, tokens.d);
    for (std::size_t i = 0; i < tokens.n(); ++i) {
        const auto& t = tokens.tokens[i];
        if (t.rows() == 0) throw DataError("sample " + tokens.sample_ids[i] + " has no tokens");
        out.values.row(static_cast<Eigen::Index>(i)) = t.colwise().mean();
    }
    return out;
}

inline FeatureMatrix cls_select(const TokenEmbeddingSet& tokens, std::size_t index = 0) {
    auto out = pooling_detail::pooled_shell(tokens, tokens.d);
    for (std::size_t i = 0; i < tokens.n(); ++i) {
        const auto& t = tokens.tokens[i];
        if (index >= static_cast<std::size_t>(t.rows()))
            throw DataError("token index " + std::to_string(index) + " out of range for sample " +
                            tokens.sample_ids[i] + " with " + std::to_string(t.rows()) + " tokens");
        out.values.row(static_cast<Eigen::Index>(i)) = t.row(static_cast<Eigen::Index>(index));
    }
    return out;
}

// Mean over non-overlapping g x g blocks. Edge blocks average only the tokens
// that exist; the output grid is ceil(H/g) x ceil(W/g).
inline Matrix grid_pool_sample(const Matrix& t, const Grid& grid, std::size_t g) {
    const std::size_t oh = (grid.height + g - 1) / g;
    const std::size_t ow = (grid.width + g - 1) / g;
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(oh * ow), t.cols());
    std::vector<double> counts(oh * ow, 0.0);
    for (std::size_t r = 0; r < grid.height; ++r) {
        for (std::size_t c = 0; c < grid.width; ++c) {
            const std::size_t cell = (r / g) * ow + (c / g);
            out.row(static_cast<Eigen::Index>(cell)) += t.row(static_cast<Eigen::Index>(r * grid.width + c));
            counts[cell] += 1.0;
        }
    }
    for (std::size_t k = 0; k < counts.size(); ++k) out.row(static_cast<Eigen::Index>(k)) /= counts[k];
    return out;
}

inline TokenEmbeddingSet grid_pool(const TokenEmbeddingSet& tokens, std::size_t g) {
    if (!tokens.grid) throw DataError("grid pooling needs grid metadata");
    if (g == 0) throw DataError("grid group size must be >= 1");
    if (g == 1) return tokens;
    TokenEmbeddingSet out;
    out.d = tokens.d;
    out.sample_ids = tokens.sample_ids;
    out.labels = tokens.labels;
    out.num_classes = tokens.num_classes;
    out.grid = Grid{(tokens.grid->height + g - 1) / g, (tokens.grid->width + g - 1) / g};
    out.tokens.resize(tokens.n());
    parallel_for(tokens.n(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) out.tokens[i] = grid_pool_sample(tokens.tokens[i], *tokens.grid, g);
    });
    return out;
}

// softmax(X theta) for one sample.
inline Vector pal_weights(const Matrix& tokens, const Vector& theta) {
    return softmax(tokens * theta);
}

inline FeatureMatrix pal_pool(const TokenEmbeddingSet& tokens, const PalPooler& pooler) {
    if (pooler.d() != tokens.d)
        throw DataError("pooler dimension " + std::to_string(pooler.d()) + " != token dimension " +
                        std::to_string(tokens.d));
    auto out = pooling_detail::pooled_shell(tokens, tokens.d);
    parallel_for(tokens.n(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto& t = tokens.tokens[i];
            if (t.rows() == 0) throw DataError("sample " + tokens.sample_ids[i] + " has no tokens");
            const Vector w = pal_weights(t, pooler.theta);
            out.values.row(static_cast<Eigen::Index>(i)) = w.transpose() * t;
        }
    });
    return out;
}

enum class Scorer { jsd_prior, correct_class, entropy };

inline Scorer scorer_from_string(const std::string& s) {
    if (s == "jsd_prior") return Scorer::jsd_prior;
    if (s == "correct_class") return Scorer::correct_class;
    if (s == "entropy") return Scorer::entropy;
    throw SchemaError("unknown scorer '" + s + "' (expected jsd_prior, correct_class or entropy)");
}

inline std::string to_string(Scorer s) {
    switch (s) {
        case Scorer::jsd_prior: return "jsd_prior";
        case Scorer::correct_class: return "correct_class";
        case Scorer::entropy: return "entropy";
    }
    return "jsd_prior";
}

inline constexpr double kScoreEpsilon = 1e-12;

// Pseudo attention labels for token-level predictions, divided by tau:
//   jsd_prior:     ln(max(JSD(y_hat, prior), eps))
//   correct_class: ln(max(y_hat[y], eps))       (needs labels)
//   entropy:       -H(y_hat)
inline Vector score_tokens(const Matrix& predictions, const Vector& prior, Scorer scorer, double tau,
                           const Labels* labels = nullptr) {
    if (!(tau > 0.0)) throw DataError("temperature tau must be > 0");
    if (prior.size() != predictions.cols()) throw DataError("prior length does not match prediction columns");
    const std::span<const double> prior_span(prior.data(), static_cast<std::size_t>(prior.size()));
    check_distribution(prior_span, "prior");
    if (std::abs(prior.sum() - 1.0) > 1e-6) throw DataError("prior does not sum to 1");
    if (scorer == Scorer::correct_class && (!labels || labels->size() != static_cast<std::size_t>(predictions.rows())))
        throw DataError("correct_class scorer needs one label per prediction row");

    Vector scores(predictions.rows());
    std::vector<double> row(static_cast<std::size_t>(predictions.cols()));
    for (Eigen::Index i = 0; i < predictions.rows(); ++i) {
        for (Eigen::Index c = 0; c < predictions.cols(); ++c) row[static_cast<std::size_t>(c)] = predictions(i, c);
        check_distribution(row, "prediction row");
        double sum = 0.0;
        for (double v : row) sum += v;
        if (std::abs(sum - 1.0) > 1e-6)
            throw DataError("prediction row " + std::to_string(i) + " is not a distribution (sum " + std::to_string(sum) + ")");
        double s = 0.0;
        switch (scorer) {
            case Scorer::jsd_prior: s = std::log(std::max(jsd(row, prior_span), kScoreEpsilon)); break;
            case Scorer::correct_class: s = std::log(std::max(row[static_cast<std::size_t>((*labels)[static_cast<std::size_t>(i)])], kScoreEpsilon)); break;
            case Scorer::entropy: s = -entropy(row); break;
        }
        scores(i) = s / tau;
    }
    return scores;
}

// Per-sample raw scores theta^T x and softmax weights, for external plotting.
inline nlohmann::json pal_heatmap(const TokenEmbeddingSet& tokens, const PalPooler& pooler) {
    if (pooler.d() != tokens.d) throw DataError("pooler dimension does not match token dimension");
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < tokens.n(); ++i) {
        const Vector raw = tokens.tokens[i] * pooler.theta;
        const Vector w = softmax(raw);
        out.push_back({{"sample_id", tokens.sample_ids[i]},
                       {"grid", tokens.grid ? nlohmann::json::array({tokens.grid->height, tokens.grid->width})
                                            : nlohmann::json(nullptr)},
                       {"raw_scores", std::vector<double>(raw.data(), raw.data() + raw.size())},
                       {"weights", std::vector<double>(w.data(), w.data() + w.size())}});
    }
    return out;
}

}  // namespace comet
