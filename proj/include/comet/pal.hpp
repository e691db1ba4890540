#pragma once

// Fitting a PAL pooler: pseudo attention labels from token-level in-context
// predictions, regressed onto raw tokens with closed-form ridge.
//
// Each iteration splits the (non-validation) training samples in half, pools
// one half with the current scorer to build a support set, asks the predictor
// about individual tokens of the other half, scores those predictions against
// the class prior and refits theta. Candidates (including theta = 0) are
// compared on a held-out validation slice and the best one is returned.

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "comet/errors.hpp"
#include "comet/linalg.hpp"
#include "comet/metrics.hpp"
#include "comet/pooling.hpp"
#include "comet/predictor.hpp"
#include "comet/rng.hpp"
#include "comet/split.hpp"
#include "comet/types.hpp"

namespace comet {

struct PalFitConfig {
    int iterations = 3;
    std::size_t q_max = 500000;
    double lambda = 1e4;
    std::optional<double> tau;                 // unset: 0.5 for grid (image) sets, 1.0 otherwise
    std::size_t pal_pca_dim = 128;
    Scorer scorer = Scorer::jsd_prior;
    std::vector<std::size_t> group_schedule;   // empty: {4, 2, 1} for grids, {1, 1, 1} otherwise
    std::optional<bool> length_weighting;      // unset: on for ragged sets
    double validation_fraction = 0.1;
    bool ridge_in_pca_space = false;
    bool center_scores = true;                 // regress score deviations from their weighted mean
    std::size_t predict_chunk = 8192;          // query tokens per predictor call
    std::uint64_t seed = 0;

    double resolved_tau(bool has_grid) const { return tau.value_or(has_grid ? 0.5 : 1.0); }
    bool resolved_length_weighting(bool has_grid) const { return length_weighting.value_or(!has_grid); }
    std::size_t group_for(int iteration, bool has_grid) const {
        if (!has_grid) return 1;
        const std::vector<std::size_t> def{4, 2, 1};
        const auto& s = group_schedule.empty() ? def : group_schedule;
        return s[std::min(static_cast<std::size_t>(iteration - 1), s.size() - 1)];
    }

    void validate() const {
        if (iterations < 1) throw SchemaError("pal iterations must be >= 1");
        if (tau && !(*tau > 0.0)) throw SchemaError("pal tau must be > 0");
        if (!(lambda >= 0.0)) throw SchemaError("pal lambda must be >= 0");
        if (q_max < 1) throw SchemaError("pal q_max must be >= 1");
        if (pal_pca_dim < 1) throw SchemaError("pal_pca_dim must be >= 1");
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
            throw SchemaError("pal validation_fraction must lie in (0, 1)");
        for (auto g : group_schedule)
            if (g < 1) throw SchemaError("group sizes must be >= 1");
        if (predict_chunk < 1) throw SchemaError("predict_chunk must be >= 1");
    }
};

struct PalCandidate {
    int iteration = 0;
    double validation_accuracy = 0.0;
    double wall_seconds = 0.0;      // fit time of this iteration alone
    std::size_t group = 1;
    std::size_t query_tokens = 0;   // flattened query tokens before the q_max cap
    std::size_t query_tokens_used = 0;
    double theta_norm = 0.0;
};

struct PalFitReport {
    std::vector<PalCandidate> candidates;  // candidates[0] is theta = 0
    int best_iteration = 0;
    double tau = 1.0;
    std::size_t validation_size = 0;
    std::size_t fit_size = 0;
};

struct PalFitResult {
    PalPooler pooler;
    PalFitReport report;
    std::vector<Vector> thetas;  // theta per candidate, index = iteration
};

// Report without timings (deterministic); timings are emitted separately.
inline nlohmann::json to_json(const PalFitReport& r) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : r.candidates)
        cands.push_back({{"iteration", c.iteration},
                         {"validation_accuracy", c.validation_accuracy},
                         {"group", c.group},
                         {"query_tokens", c.query_tokens},
                         {"query_tokens_used", c.query_tokens_used},
                         {"theta_norm", c.theta_norm}});
    return {{"best_iteration", r.best_iteration}, {"tau", r.tau}, {"validation_size", r.validation_size},
            {"fit_size", r.fit_size}, {"candidates", cands}};
}

inline nlohmann::json timings_json(const PalFitReport& r) {
    nlohmann::json out = nlohmann::json::array();
    double cumulative = 0.0;
    for (const auto& c : r.candidates) {
        cumulative += c.wall_seconds;
        out.push_back({{"iteration", c.iteration}, {"seconds", c.wall_seconds}, {"cumulative_seconds", cumulative}});
    }
    return out;
}

// Empirical class frequencies.
inline Vector class_prior(const Labels& labels, int num_classes) {
    Vector p = Vector::Zero(num_classes);
    for (int y : labels) p(y) += 1.0;
    return p / static_cast<double>(labels.size());
}

// Stratified hold-out that leaves at least two samples of every class behind.
inline SplitIndices carve_validation(const Labels& labels, double fraction, std::uint64_t seed) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    Rng rng(seed);
    SplitIndices out;  // first = fit, second = validation
    for (auto& [cls, rows] : by_class) {
        if (rows.size() < 2)
            throw SplitError("class " + std::to_string(cls) + " has fewer than 2 samples");
        rng.shuffle(rows);
        auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
        k = std::min(k, rows.size() - 2);
        out.second.insert(out.second.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k));
        out.first.insert(out.first.end(), rows.begin() + static_cast<std::ptrdiff_t>(k), rows.end());
    }
    if (out.second.empty()) throw SplitError("training set too small to hold out a validation slice");
    std::sort(out.first.begin(), out.first.end());
    std::sort(out.second.begin(), out.second.end());
    return out;
}

// Accuracy on `eval` when both sides are pooled with theta and projected by a
// PCA fitted on the pooled support.
inline double pooled_accuracy(const TokenEmbeddingSet& support, const TokenEmbeddingSet& eval, const PalPooler& pooler,
                              std::size_t pca_dim, const InContextClassifier& predictor, int num_classes) {
    const auto sup = pal_pool(support, pooler);
    const auto qry = pal_pool(eval, pooler);
    const auto pca = fit_pca(sup.values, pca_dim);
    const Matrix probs = predictor.predict(project(pca, qry.values), project(pca, sup.values), *sup.labels, num_classes);
    return accuracy(*qry.labels, argmax_rows(probs));
}

inline PalFitResult fit_pal_pooler(const TokenEmbeddingSet& train, const InContextClassifier& predictor,
                                   const PalFitConfig& cfg) {
    cfg.validate();
    train.validate();
    if (!train.labels) throw DataError("PAL fitting needs labeled token sets");
    const Labels& labels = *train.labels;
    const int num_classes = count_classes(labels);
    if (num_classes < 2) throw DataError("PAL fitting needs at least 2 classes");
    const bool has_grid = train.grid.has_value();
    const double tau = cfg.resolved_tau(has_grid);
    const bool length_weighting = cfg.resolved_length_weighting(has_grid);
    const Vector prior = class_prior(labels, num_classes);

    const auto holdout = carve_validation(labels, cfg.validation_fraction, derive_seed(cfg.seed, 0));
    TokenEmbeddingSet fit_set = select_rows(train, holdout.first);
    fit_set.num_classes = num_classes;
    TokenEmbeddingSet val_set = select_rows(train, holdout.second);
    val_set.num_classes = num_classes;

    PalFitResult result;
    result.report.tau = tau;
    result.report.validation_size = val_set.n();
    result.report.fit_size = fit_set.n();

    using clock = std::chrono::steady_clock;
    PalPooler current = PalPooler::mean_pooling(train.d);
    {
        const auto t0 = clock::now();
        PalCandidate c;
        c.iteration = 0;
        c.validation_accuracy = pooled_accuracy(fit_set, val_set, current, cfg.pal_pca_dim, predictor, num_classes);
        c.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        result.report.candidates.push_back(c);
        result.thetas.push_back(current.theta);
    }

    for (int t = 1; t <= cfg.iterations; ++t) {
        const auto t0 = clock::now();
        PalCandidate cand;
        cand.iteration = t;
        cand.group = cfg.group_for(t, has_grid);

        const auto halves = split_indices(*fit_set.labels, 0.5, true, derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(t)));
        TokenEmbeddingSet sup_tokens = select_rows(fit_set, halves.first);
        TokenEmbeddingSet qry_tokens = select_rows(fit_set, halves.second);
        if (has_grid && cand.group > 1) {
            sup_tokens = grid_pool(sup_tokens, cand.group);
            qry_tokens = grid_pool(qry_tokens, cand.group);
        }

        const auto support = pal_pool(sup_tokens, current);
        const auto pca = fit_pca(support.values, cfg.pal_pca_dim);
        const Matrix support_proj = project(pca, support.values);

        // Flattened token index -> (sample, token row).
        std::vector<std::pair<std::uint32_t, std::uint32_t>> flat;
        flat.reserve(qry_tokens.total_tokens());
        for (std::size_t i = 0; i < qry_tokens.n(); ++i)
            for (Eigen::Index p = 0; p < qry_tokens.tokens[i].rows(); ++p)
                flat.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(p));
        cand.query_tokens = flat.size();
        Rng sampler(derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(t) + 1));
        const auto picked = sampler.sample_without_replacement(flat.size(), cfg.q_max);
        cand.query_tokens_used = picked.size();

        const std::size_t fit_dim = cfg.ridge_in_pca_space ? pca.output_dim() : train.d;
        NormalEquations ne(fit_dim);
        for (std::size_t start = 0; start < picked.size(); start += cfg.predict_chunk) {
            const std::size_t len = std::min(cfg.predict_chunk, picked.size() - start);
            Matrix raw(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(train.d));
            Vector weight(static_cast<Eigen::Index>(len));
            Labels token_labels(len);
            for (std::size_t k = 0; k < len; ++k) {
                const auto [i, p] = flat[picked[start + k]];
                raw.row(static_cast<Eigen::Index>(k)) = qry_tokens.tokens[i].row(p);
                weight(static_cast<Eigen::Index>(k)) =
                    length_weighting ? 1.0 / std::sqrt(static_cast<double>(qry_tokens.tokens[i].rows())) : 1.0;
                token_labels[k] = (*qry_tokens.labels)[i];
            }
            const Matrix proj = project(pca, raw);
            const Matrix probs = predictor.predict(proj, support_proj, *support.labels, num_classes);
            check_row_stochastic(probs, proj.rows(), num_classes, 1e-4);
            const Vector scores = score_tokens(probs, prior, cfg.scorer, tau, &token_labels);
            ne.add_block(cfg.ridge_in_pca_space ? proj : raw, scores, weight);
        }
        // Scores are log-scale and far from zero; without an intercept their mean
        // would leak onto whichever token dimensions have a nonzero mean. The
        // softmax ignores a common shift, so only deviations are regressed.
        const auto sol = solve_normal_equations(ne, cfg.lambda, cfg.center_scores);
        // A PCA-space scorer equals the raw-space scorer U theta up to a
        // per-token constant, which the softmax ignores.
        current.theta = cfg.ridge_in_pca_space ? Vector(pca.components * sol.theta) : sol.theta;
        current.fitted_iteration = t;
        cand.theta_norm = current.theta.norm();
        cand.validation_accuracy = pooled_accuracy(fit_set, val_set, current, cfg.pal_pca_dim, predictor, num_classes);
        cand.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        result.report.candidates.push_back(cand);
        result.thetas.push_back(current.theta);
    }

    int best = 0;
    for (const auto& c : result.report.candidates)
        if (c.validation_accuracy > result.report.candidates[static_cast<std::size_t>(best)].validation_accuracy)
            best = c.iteration;
    result.report.best_iteration = best;
    result.pooler.theta = result.thetas[static_cast<std::size_t>(best)];
    result.pooler.fitted_iteration = best;
    return result;
}

}  // namespace comet
