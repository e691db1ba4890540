#include <gtest/gtest.h>

#include "comet/hierarchy.hpp"
#include "comet/synthetic.hpp"

#include <set>

using namespace comet;

namespace {

LabelTree toy_tree() {
    return LabelTree::build({{"root", "root", ""},
                             {"A", "A", "root"},
                             {"B", "B", "root"},
                             {"a1", "a1", "A"},
                             {"a2", "a2", "A"},
                             {"b1", "b1", "B"},
                             {"b2", "b2", "B"}},
                            {{"a1", 0}, {"a2", 1}, {"b1", 2}, {"b2", 3}});
}

LabelTree flat_tree(int classes) {
    std::vector<std::tuple<std::string, std::string, std::string>> nodes{{"r", "r", ""}};
    std::vector<std::pair<std::string, int>> leaves;
    for (int c = 0; c < classes; ++c) {
        nodes.emplace_back("c" + std::to_string(c), "c" + std::to_string(c), "r");
        leaves.emplace_back("c" + std::to_string(c), c);
    }
    return LabelTree::build(nodes, leaves);
}

// Features: one-hot-ish class means plus noise, 4 classes.
LabeledDataset toy_data(std::size_t n, std::uint64_t seed, double sep = 4.0) {
    Rng rng(seed);
    LabeledDataset ds;
    ds.sample_ids = synth::numbered_ids(n, "q" + std::to_string(seed) + "_");
    ds.class_names = {"a1", "a2", "b1", "b2"};
    FeatureMatrix fm;
    fm.values = synth::gaussian(rng, static_cast<Eigen::Index>(n), 4);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 4);
        ds.labels.push_back(y);
        fm.values(static_cast<Eigen::Index>(i), y) += sep;
        fm.values(static_cast<Eigen::Index>(i), y < 2 ? 0 : 2) += sep;
    }
    fm.sample_ids = ds.sample_ids;
    ds.modalities.emplace("f", fm);
    return ds;
}

FusionSpec plain_spec() {
    FusionSpec s;
    s.modalities.push_back({"f", PoolingKind::mean, 0, std::nullopt, 0});
    return s;
}

}  // namespace

TEST(Subtasks, FlatTreeIsOneSubtask) {
    const auto tasks = build_subtasks(Labels{0, 1, 2, 0}, flat_tree(3), 100, 0);
    ASSERT_EQ(tasks.size(), 1u);
    EXPECT_EQ(tasks[0].child_labels, (Labels{0, 1, 2, 0}));
}

TEST(Subtasks, ToyTreeHandCount) {
    Labels y;
    for (int i = 0; i < 40; ++i) y.push_back(i % 4);
    const auto tree = toy_tree();
    const auto tasks = build_subtasks(y, tree, 1000, 0);
    ASSERT_EQ(tasks.size(), 3u);
    EXPECT_EQ(tasks[0].node, tree.root());
    EXPECT_EQ(tasks[0].support_indices.size(), 40u);
    for (std::size_t k = 0; k < 40; ++k) EXPECT_EQ(tasks[0].child_labels[k], y[k] < 2 ? 0 : 1);
    EXPECT_EQ(tasks[1].support_indices.size(), 20u);
    EXPECT_EQ(tasks[2].support_indices.size(), 20u);
}

TEST(Subtasks, BudgetIsProportional) {
    Labels y;
    for (int i = 0; i < 80; ++i) y.push_back(0);
    for (int i = 0; i < 20; ++i) y.push_back(1);
    const auto tasks = build_subtasks(y, flat_tree(2), 10, 3);
    ASSERT_EQ(tasks[0].support_indices.size(), 10u);
    EXPECT_TRUE(tasks[0].budget_applied);
    EXPECT_EQ(std::count(tasks[0].child_labels.begin(), tasks[0].child_labels.end(), 0), 8);
    EXPECT_EQ(std::count(tasks[0].child_labels.begin(), tasks[0].child_labels.end(), 1), 2);
    EXPECT_EQ(proportional_quota({99, 1}, 10), (std::vector<std::size_t>{9, 1}));
}

TEST(Subtasks, SingleChildIsDegenerate) {
    const auto tree = LabelTree::build({{"r", "r", ""}, {"m", "m", "r"}, {"x", "x", "m"}, {"y", "y", "r"}},
                                       {{"x", 0}, {"y", 1}});
    const auto tasks = build_subtasks(Labels{0, 1, 0, 1}, tree, 10, 0);
    ASSERT_EQ(tasks.size(), 2u);
    EXPECT_TRUE(tasks[1].degenerate());
}

TEST(Hier, DepthOneEqualsFlat) {
    const auto train = toy_data(200, 1, 1.0), test = toy_data(80, 2, 1.0);
    const ReferencePredictor ref;
    const auto model = fit_hier(train, flat_tree(4), plain_spec(), {});
    const auto hp = hier_predict(model, test, ref);
    const auto flat = comet_predict(fit_fusion(train, plain_spec()), train, test, ref);
    EXPECT_EQ(hp.leaf_class, flat.predicted);
}

TEST(Hier, PathsReachableAndContained) {
    const auto train = toy_data(200, 3, 1.5), test = toy_data(100, 4, 1.5);
    const auto tree = toy_tree();
    const auto model = fit_hier(train, tree, plain_spec(), {});
    const auto hp = hier_predict(model, test, ReferencePredictor());
    for (std::size_t q = 0; q < test.n(); ++q) {
        const auto& path = hp.paths[q];
        EXPECT_EQ(path.front(), tree.root());
        for (std::size_t k = 1; k < path.size(); ++k) EXPECT_EQ(tree.node(path[k]).parent, path[k - 1]);
        EXPECT_EQ(path.back(), tree.leaf_of_class(hp.leaf_class[q]));
        // Routed to A means the leaf is a1 or a2.
        if (tree.node(path[1]).id == "A") EXPECT_LT(hp.leaf_class[q], 2);
        else EXPECT_GE(hp.leaf_class[q], 2);
    }
}

namespace {

// Column 0: true child slot at the root, column 1: slot below it. The
// subtask fusion has no projection so the columns survive.
struct OracleFixture {
    LabeledDataset train, test;
};

OracleFixture oracle_fixture() {
    OracleFixture f;
    for (auto* ds : {&f.train, &f.test}) {
        const std::size_t n = 40;
        ds->sample_ids = synth::numbered_ids(n, ds == &f.train ? "t" : "q");
        ds->class_names = {"a1", "a2", "b1", "b2"};
        FeatureMatrix fm;
        fm.values = Matrix::Zero(static_cast<Eigen::Index>(n), 2);
        for (std::size_t i = 0; i < n; ++i) {
            const int y = static_cast<int>((i * 3) % 4);
            ds->labels.push_back(y);
            fm.values(static_cast<Eigen::Index>(i), 0) = y < 2 ? 0 : 1;
            fm.values(static_cast<Eigen::Index>(i), 1) = y % 2;
        }
        fm.sample_ids = ds->sample_ids;
        ds->modalities.emplace("f", fm);
    }
    return f;
}

// The root support holds both values of column 0, lower supports only one.
class RoutedOracle final : public InContextClassifier {
public:
    explicit RoutedOracle(bool root_wrong) : root_wrong_(root_wrong) {}
    Matrix predict(const Matrix& q, const Matrix& sup, const Labels&, int num_classes) const override {
        const bool at_root = sup.col(0).minCoeff() != sup.col(0).maxCoeff();
        Matrix p = Matrix::Zero(q.rows(), num_classes);
        for (Eigen::Index i = 0; i < q.rows(); ++i) {
            int slot = static_cast<int>(at_root ? q(i, 0) : q(i, 1));
            if (at_root && root_wrong_) slot = 1 - slot;
            p(i, slot) = 1.0;
        }
        return p;
    }
    std::string name() const override { return "routed-oracle"; }

private:
    bool root_wrong_;
};

}  // namespace

TEST(Hier, PerfectOracleScoresOne) {
    const auto f = oracle_fixture();
    const auto model = fit_hier(f.train, toy_tree(), plain_spec(), {});
    const auto report = evaluate_hier(model, f.test, RoutedOracle(false));
    EXPECT_DOUBLE_EQ(report.leaf_accuracy, 1.0);
    for (double a : report.level_accuracy) EXPECT_DOUBLE_EQ(a, 1.0);
}

TEST(Hier, WrongRootMeansWrongLeaf) {
    const auto f = oracle_fixture();
    const auto model = fit_hier(f.train, toy_tree(), plain_spec(), {});
    const auto report = evaluate_hier(model, f.test, RoutedOracle(true));
    EXPECT_DOUBLE_EQ(report.leaf_accuracy, 0.0);
    EXPECT_DOUBLE_EQ(report.level_accuracy[0], 0.0);
}

TEST(Hier, ReportTimingsAndJson) {
    const auto train = toy_data(120, 5), test = toy_data(40, 6);
    const auto tree = toy_tree();
    const auto model = fit_hier(train, tree, plain_spec(), {});
    const auto report = evaluate_hier(model, test, ReferencePredictor());
    double sum = 0;
    for (const auto& s : report.subtasks) sum += s.fit_seconds + s.predict_seconds;
    EXPECT_NEAR(sum, report.total_seconds, 1e-12);
    const auto j = to_json(report, tree, 1000);
    EXPECT_EQ(j.dump().find("seconds"), std::string::npos);
    EXPECT_EQ(timings_json(report, tree)["subtasks"].size(), 3u);
    std::size_t routed_root = report.subtasks[0].routed;
    EXPECT_EQ(routed_root, test.n());
}

TEST(Hier, PredictorErrorsNameTheNode) {
    class Broken final : public InContextClassifier {
    public:
        Matrix predict(const Matrix&, const Matrix&, const Labels&, int) const override { throw PredictorError("down"); }
        std::string name() const override { return "broken"; }
    };
    const auto train = toy_data(60, 7), test = toy_data(10, 8);
    const auto model = fit_hier(train, toy_tree(), plain_spec(), {});
    try {
        hier_predict(model, test, Broken());
        FAIL() << "expected PredictorError";
    } catch (const PredictorError& e) {
        EXPECT_NE(std::string(e.what()).find("root"), std::string::npos);
    }
}
