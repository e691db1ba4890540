#include <gtest/gtest.h>

#include "comet/pal.hpp"
#include "comet/pooling.hpp"
#include "comet/predictor.hpp"
#include "comet/synthetic.hpp"

using namespace comet;

namespace {

TokenEmbeddingSet one_sample(const Matrix& t) {
    TokenEmbeddingSet s;
    s.d = static_cast<std::size_t>(t.cols());
    s.tokens = {t};
    s.sample_ids = {"s0"};
    return s;
}

TokenEmbeddingSet ragged(std::uint64_t seed, std::size_t n, std::size_t d) {
    Rng rng(seed);
    TokenEmbeddingSet s;
    s.d = d;
    for (std::size_t i = 0; i < n; ++i) {
        const auto p = static_cast<Eigen::Index>(1 + rng.below(12));
        s.tokens.push_back(synth::gaussian(rng, p, static_cast<Eigen::Index>(d)));
        s.sample_ids.push_back("r" + std::to_string(i));
    }
    return s;
}

}  // namespace

TEST(MeanPool, Examples) {
    const auto out = mean_pool(one_sample((Matrix(2, 2) << 0, 2, 2, 0).finished()));
    EXPECT_EQ(out.values, (Matrix(1, 2) << 1, 1).finished());
    const Matrix tok = (Matrix(1, 3) << 4, -1, 0.5).finished();
    EXPECT_EQ(mean_pool(one_sample(tok)).values, tok);
    EXPECT_THROW(mean_pool(one_sample(Matrix(0, 3))), DataError);
}

TEST(ClsSelect, Examples) {
    const auto s = one_sample((Matrix(2, 2) << 1, 1, 9, 9).finished());
    EXPECT_EQ(cls_select(s, 0).values, (Matrix(1, 2) << 1, 1).finished());
    EXPECT_EQ(cls_select(s, 1).values, (Matrix(1, 2) << 9, 9).finished());
    EXPECT_THROW(cls_select(s, 2), DataError);
}

TEST(GridPool, GlobalAndIdentity) {
    Rng rng(1);
    auto s = one_sample(synth::gaussian(rng, 16, 3));
    s.grid = Grid{4, 4};
    const auto g4 = grid_pool(s, 4);
    ASSERT_EQ(g4.tokens[0].rows(), 1);
    EXPECT_LE((g4.tokens[0] - s.tokens[0].colwise().mean()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(*g4.grid, (Grid{1, 1}));
    EXPECT_EQ(grid_pool(s, 1).tokens[0], s.tokens[0]);
    s.grid.reset();
    EXPECT_THROW(grid_pool(s, 2), DataError);
}

TEST(GridPool, ThreeByThreeHandEnumeration) {
    // Token p holds value p in both dimensions. Layout:
    //   0 1 2
    //   3 4 5
    //   6 7 8
    Matrix t(9, 2);
    for (int p = 0; p < 9; ++p) t.row(p).setConstant(p);
    auto s = one_sample(t);
    s.grid = Grid{3, 3};
    const auto out = grid_pool(s, 2);
    EXPECT_EQ(*out.grid, (Grid{2, 2}));
    const double expected[4] = {(0 + 1 + 3 + 4) / 4.0, (2 + 5) / 2.0, (6 + 7) / 2.0, 8.0};
    for (int k = 0; k < 4; ++k) {
        EXPECT_DOUBLE_EQ(out.tokens[0](k, 0), expected[k]);
        EXPECT_DOUBLE_EQ(out.tokens[0](k, 1), expected[k]);
    }
}

TEST(PalPool, ZeroThetaIsMeanPooling) {
    const auto s = ragged(2, 50, 6);
    const auto pal = pal_pool(s, PalPooler::mean_pooling(6));
    EXPECT_LE((pal.values - mean_pool(s).values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PalPool, SaturatedThetaPicksTopToken) {
    Rng rng(3);
    const Matrix t = synth::gaussian(rng, 7, 4);
    const Vector theta = synth::gaussian(rng, 4, 1).col(0) * 1e3;
    const Vector w = pal_weights(t, theta);
    Eigen::Index top;
    (t * theta).maxCoeff(&top);
    EXPECT_GT(w(top), 0.999);
}

TEST(PalPool, TwoTokenHandValue) {
    PalPooler p{(Vector(2) << 1, 0).finished(), 1};
    const auto out = pal_pool(one_sample((Matrix(2, 2) << 1, 0, 0, 1).finished()), p);
    const double e = std::exp(1.0);
    EXPECT_NEAR(out.values(0, 0), e / (e + 1), 1e-12);
    EXPECT_NEAR(out.values(0, 1), 1 / (e + 1), 1e-12);
    EXPECT_NEAR(out.values(0, 0), 0.7311, 1e-4);
}

TEST(PalPool, OutputInsideConvexHullBox) {
    const auto s = ragged(4, 30, 3);
    Rng rng(5);
    PalPooler p{synth::gaussian(rng, 3, 1).col(0) * 3.0, 1};
    const auto out = pal_pool(s, p);
    for (std::size_t i = 0; i < s.n(); ++i) {
        const auto& t = s.tokens[i];
        for (Eigen::Index j = 0; j < 3; ++j) {
            EXPECT_GE(out.values(static_cast<Eigen::Index>(i), j), t.col(j).minCoeff() - 1e-12);
            EXPECT_LE(out.values(static_cast<Eigen::Index>(i), j), t.col(j).maxCoeff() + 1e-12);
        }
    }
    EXPECT_THROW(pal_pool(s, PalPooler::mean_pooling(4)), DataError);
}

TEST(PalPool, JsonRoundTrip) {
    PalPooler p{(Vector(3) << 0.25, -1.5, 3.0).finished(), 2};
    const auto back = pal_pooler_from_json(to_json(p));
    EXPECT_EQ(back.theta, p.theta);
    EXPECT_EQ(back.fitted_iteration, 2);
    EXPECT_THROW(pal_pooler_from_json(nlohmann::json{{"d", 3}}), SchemaError);
}

TEST(ScoreTokens, Examples) {
    const Vector prior = (Vector(2) << 0.5, 0.5).finished();
    const Matrix same = prior.transpose();
    EXPECT_NEAR(score_tokens(same, prior, Scorer::jsd_prior, 1.0)(0), std::log(1e-12), 1e-9);
    const Matrix hard = (Matrix(1, 2) << 1, 0).finished();
    EXPECT_NEAR(score_tokens(hard, prior, Scorer::jsd_prior, 1.0)(0), -1.5336, 1e-4);
    EXPECT_NEAR(score_tokens(hard, prior, Scorer::jsd_prior, 0.5)(0), 2.0 * score_tokens(hard, prior, Scorer::jsd_prior, 1.0)(0),
                1e-12);
    const Matrix soft = (Matrix(1, 2) << 0.8, 0.2).finished();
    EXPECT_NEAR(score_tokens(soft, prior, Scorer::entropy, 1.0)(0), 0.8 * std::log(0.8) + 0.2 * std::log(0.2), 1e-12);
    const Labels y{1};
    EXPECT_NEAR(score_tokens(soft, prior, Scorer::correct_class, 1.0, &y)(0), std::log(0.2), 1e-12);
    EXPECT_THROW(score_tokens((Matrix(1, 2) << 0.9, 0.3).finished(), prior, Scorer::jsd_prior, 1.0), DataError);
    EXPECT_THROW(score_tokens(soft, prior, Scorer::correct_class, 1.0), DataError);
}

TEST(Heatmap, WeightsAndArgmax) {
    auto s = ragged(6, 5, 3);
    const auto zero = pal_heatmap(s, PalPooler::mean_pooling(3));
    for (const auto& row : zero) {
        const auto w = row["weights"].get<std::vector<double>>();
        for (double v : w) EXPECT_NEAR(v, 1.0 / static_cast<double>(w.size()), 1e-12);
    }
    Rng rng(7);
    PalPooler p{synth::gaussian(rng, 3, 1).col(0), 1};
    for (const auto& row : pal_heatmap(s, p)) {
        const auto w = row["weights"].get<std::vector<double>>();
        const auto raw = row["raw_scores"].get<std::vector<double>>();
        double sum = 0;
        for (double v : w) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-12);
        EXPECT_EQ(std::max_element(w.begin(), w.end()) - w.begin(), std::max_element(raw.begin(), raw.end()) - raw.begin());
    }
}

// PAL fitting on small planted data keeps the tests quick; the full-size
// directional check lives in the acceptance suite.
namespace {

TokenEmbeddingSet small_planted(std::uint64_t seed) {
    synth::PlantedTokenParams p;
    p.n = 400;
    p.seed = seed;
    return synth::planted_tokens(p);
}

PalFitConfig quick_config() {
    PalFitConfig cfg;
    cfg.iterations = 2;
    cfg.pal_pca_dim = 16;
    return cfg;
}

}  // namespace

TEST(FitPal, ReportBookkeeping) {
    const ReferencePredictor ref;
    auto cfg = quick_config();
    cfg.iterations = 1;
    const auto fit = fit_pal_pooler(small_planted(1), ref, cfg);
    ASSERT_EQ(fit.report.candidates.size(), 2u);
    EXPECT_EQ(fit.report.candidates[0].iteration, 0);
    EXPECT_DOUBLE_EQ(fit.report.candidates[0].theta_norm, 0.0);
    EXPECT_GT(fit.thetas[1].norm(), 0.0);
    const auto j = to_json(fit.report);
    EXPECT_EQ(j["candidates"].size(), 2u);
    EXPECT_FALSE(j.dump().find("seconds") != std::string::npos);
}

TEST(FitPal, SelectionNeverWorseThanMeanPooling) {
    const ReferencePredictor ref;
    for (std::uint64_t seed : {2, 3}) {
        const auto fit = fit_pal_pooler(small_planted(seed), ref, quick_config());
        const auto& c = fit.report.candidates;
        const auto best = static_cast<std::size_t>(fit.report.best_iteration);
        EXPECT_GE(c[best].validation_accuracy, c[0].validation_accuracy);
        for (const auto& other : c) EXPECT_GE(c[best].validation_accuracy, other.validation_accuracy);
        EXPECT_EQ(fit.pooler.theta, fit.thetas[best]);
    }
}

TEST(FitPal, DeterministicForSeed) {
    const ReferencePredictor ref;
    const auto data = small_planted(4);
    const auto a = fit_pal_pooler(data, ref, quick_config());
    const auto b = fit_pal_pooler(data, ref, quick_config());
    EXPECT_EQ(a.pooler.theta, b.pooler.theta);
    EXPECT_EQ(to_json(a.report), to_json(b.report));
}

TEST(FitPal, ScorerChoiceChangesTheta) {
    const ReferencePredictor ref;
    const auto data = small_planted(5);
    auto cfg = quick_config();
    cfg.iterations = 1;
    const auto jsd_fit = fit_pal_pooler(data, ref, cfg);
    cfg.scorer = Scorer::entropy;
    const auto ent_fit = fit_pal_pooler(data, ref, cfg);
    EXPECT_GT((jsd_fit.thetas[1] - ent_fit.thetas[1]).norm(), 1e-6);
}

TEST(FitPal, IdenticalTokensPoolToMean) {
    auto data = small_planted(6);
    for (auto& t : data.tokens) {
        const Matrix first = t.row(0);
        t = first.replicate(t.rows(), 1);
    }
    const ReferencePredictor ref;
    auto cfg = quick_config();
    cfg.iterations = 1;
    const auto fit = fit_pal_pooler(data, ref, cfg);
    const PalPooler p{fit.thetas[1], 1};
    EXPECT_LE((pal_pool(data, p).values - mean_pool(data).values).cwiseAbs().maxCoeff(), 1e-6);
    // Scores still differ between samples, so theta only shrinks with lambda.
    cfg.lambda = 1.0;
    EXPECT_LT(fit.thetas[1].norm(), fit_pal_pooler(data, ref, cfg).thetas[1].norm());
}

TEST(FitPal, GridScheduleCoarsensTokens) {
    synth::PlantedTokenParams p;
    p.n = 240;
    p.grid = Grid{4, 4};
    p.seed = 7;
    auto cfg = quick_config();
    cfg.iterations = 3;
    const ReferencePredictor ref;
    const auto fit = fit_pal_pooler(synth::planted_tokens(p), ref, cfg);
    EXPECT_EQ(fit.report.candidates[1].group, 4u);
    EXPECT_EQ(fit.report.candidates[2].group, 2u);
    EXPECT_EQ(fit.report.candidates[3].group, 1u);
    EXPECT_DOUBLE_EQ(fit.report.tau, 0.5);
    EXPECT_LT(fit.report.candidates[1].query_tokens, fit.report.candidates[3].query_tokens);
}

TEST(FitPal, QmaxCapsQueryTokens) {
    auto cfg = quick_config();
    cfg.iterations = 1;
    cfg.q_max = 100;
    const ReferencePredictor ref;
    const auto fit = fit_pal_pooler(small_planted(8), ref, cfg);
    EXPECT_EQ(fit.report.candidates[1].query_tokens_used, 100u);
    EXPECT_GT(fit.report.candidates[1].query_tokens, 100u);
}

TEST(FitPal, Errors) {
    const ReferencePredictor ref;
    auto data = small_planted(9);
    (*data.labels)[0] = 4;  // a class with one sample
    data.num_classes = 5;
    EXPECT_THROW(fit_pal_pooler(data, ref, quick_config()), SplitError);
    auto cfg = quick_config();
    cfg.iterations = 0;
    EXPECT_THROW(fit_pal_pooler(small_planted(9), ref, cfg), SchemaError);
}

namespace {

class FailingPredictor final : public InContextClassifier {
public:
    Matrix predict(const Matrix& q, const Matrix&, const Labels&, int num_classes) const override {
        if (q.rows() > 200) throw PredictorError("token batch refused");
        return Matrix::Constant(q.rows(), num_classes, 1.0 / num_classes);
    }
    std::string name() const override { return "failing"; }
};

}  // namespace

TEST(FitPal, PredictorFailurePropagates) {
    const FailingPredictor bad;
    EXPECT_THROW(fit_pal_pooler(small_planted(10), bad, quick_config()), PredictorError);
}
