#pragma once

// Local-classifier-per-node inference over a label tree. Every internal node
// is a subtask over its children whose support holds only training samples
// from that subtree; queries descend greedily from the root.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "comet/errors.hpp"
#include "comet/fusion.hpp"
#include "comet/label_tree.hpp"
#include "comet/metrics.hpp"
#include "comet/predictor.hpp"
#include "comet/rng.hpp"
#include "comet/types.hpp"

namespace comet {

struct Subtask {
    int node = -1;
    std::vector<int> children;                // child node indices, tree order
    std::vector<std::size_t> support_indices; // training rows, ascending
    Labels child_labels;                      // child slot per support row
    bool budget_applied = false;
    std::size_t available = 0;                // support size before the budget cap

    bool degenerate() const { return children.size() == 1; }
};

// Largest-remainder allocation of `budget` proportional to `counts`, with a
// floor of one for every non-empty group.
inline std::vector<std::size_t> proportional_quota(const std::vector<std::size_t>& counts, std::size_t budget) {
    std::size_t total = 0, nonempty = 0;
    for (auto c : counts) {
        total += c;
        nonempty += c > 0 ? 1 : 0;
    }
    if (total <= budget) return counts;
    if (budget < nonempty)
        throw DataError("support budget " + std::to_string(budget) + " is smaller than the number of non-empty children (" +
                        std::to_string(nonempty) + ")");
    std::vector<std::size_t> quota(counts.size(), 0);
    std::vector<double> remainder(counts.size(), 0.0);
    std::size_t used = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 0) continue;
        const double exact = static_cast<double>(budget) * static_cast<double>(counts[i]) / static_cast<double>(total);
        quota[i] = std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(exact)), 1, counts[i]);
        remainder[i] = exact - std::floor(exact);
        used += quota[i];
    }
    while (used < budget) {
        std::size_t best = counts.size();
        for (std::size_t i = 0; i < counts.size(); ++i)
            if (quota[i] < counts[i] && (best == counts.size() || remainder[i] > remainder[best])) best = i;
        if (best == counts.size()) break;
        ++quota[best];
        remainder[best] = -1.0;
        ++used;
    }
    while (used > budget) {
        std::size_t best = counts.size();
        for (std::size_t i = 0; i < counts.size(); ++i)
            if (quota[i] > 1 && (best == counts.size() || quota[i] > quota[best])) best = i;
        --quota[best];
        --used;
    }
    return quota;
}

inline std::vector<Subtask> build_subtasks(const Labels& train_labels, const LabelTree& tree, std::size_t budget,
                                           std::uint64_t seed) {
    if (budget < 1) throw DataError("support budget must be >= 1");
    std::map<int, std::size_t> slot_of_node;
    std::vector<Subtask> tasks;
    for (int node : tree.internal_nodes()) {
        slot_of_node[node] = tasks.size();
        Subtask t;
        t.node = node;
        t.children = tree.node(node).children;
        tasks.push_back(std::move(t));
    }
    // Root-to-leaf path per class, computed once.
    std::vector<std::vector<int>> class_paths(static_cast<std::size_t>(tree.num_classes()));
    for (int c = 0; c < tree.num_classes(); ++c) class_paths[static_cast<std::size_t>(c)] = tree.path_to(tree.leaf_of_class(c));

    for (std::size_t i = 0; i < train_labels.size(); ++i) {
        const int y = train_labels[i];
        if (y < 0 || y >= tree.num_classes())
            throw TreeError("training label " + std::to_string(y) + " has no leaf in the tree");
        const auto& path = class_paths[static_cast<std::size_t>(y)];
        for (std::size_t k = 0; k + 1 < path.size(); ++k) {
            auto& t = tasks[slot_of_node.at(path[k])];
            const auto slot = std::find(t.children.begin(), t.children.end(), path[k + 1]) - t.children.begin();
            t.support_indices.push_back(i);
            t.child_labels.push_back(static_cast<int>(slot));
        }
    }

    for (auto& t : tasks) {
        t.available = t.support_indices.size();
        if (t.support_indices.size() <= budget) continue;
        std::vector<std::vector<std::size_t>> by_child(t.children.size());
        for (std::size_t k = 0; k < t.support_indices.size(); ++k)
            by_child[static_cast<std::size_t>(t.child_labels[k])].push_back(k);
        std::vector<std::size_t> counts;
        for (const auto& v : by_child) counts.push_back(v.size());
        const auto quota = proportional_quota(counts, budget);
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t.node)));
        std::vector<std::size_t> keep;
        for (std::size_t c = 0; c < by_child.size(); ++c) {
            const auto picked = rng.sample_without_replacement(by_child[c].size(), quota[c]);
            for (auto p : picked) keep.push_back(by_child[c][p]);
        }
        std::sort(keep.begin(), keep.end());
        std::vector<std::size_t> rows;
        Labels lab;
        for (auto k : keep) {
            rows.push_back(t.support_indices[k]);
            lab.push_back(t.child_labels[k]);
        }
        t.support_indices = std::move(rows);
        t.child_labels = std::move(lab);
        t.budget_applied = true;
    }
    return tasks;
}

struct HierConfig {
    std::size_t budget = 200000;
    bool shared_pca = false;  // one fusion fitted on the whole training set
    std::uint64_t seed = 0;
};

struct FittedSubtask {
    Subtask task;
    FittedFusion fusion;
    Matrix support_features;
    double fit_seconds = 0.0;
};

struct HierModel {
    LabelTree tree;
    HierConfig config;
    std::vector<FittedSubtask> subtasks;  // internal nodes, breadth-first
    std::map<int, std::size_t> subtask_of_node;

    std::size_t max_support() const {
        std::size_t m = 0;
        for (const auto& s : subtasks) m = std::max(m, s.task.support_indices.size());
        return m;
    }
};

inline LabeledDataset subtask_dataset(const LabeledDataset& train, const Subtask& task, const LabelTree& tree) {
    LabeledDataset ds = select_rows(train, task.support_indices);
    ds.labels = task.child_labels;
    ds.class_names.clear();
    for (int c : task.children) ds.class_names.push_back(tree.node(c).name);
    return ds;
}

inline HierModel fit_hier(const LabeledDataset& train, const LabelTree& tree, const FusionSpec& spec,
                          const HierConfig& cfg) {
    using clock = std::chrono::steady_clock;
    HierModel model{tree, cfg, {}, {}};
    const auto tasks = build_subtasks(train.labels, tree, cfg.budget, cfg.seed);
    std::optional<FittedFusion> shared;
    if (cfg.shared_pca) shared = fit_fusion(train, spec);
    for (const auto& task : tasks) {
        const auto t0 = clock::now();
        FittedSubtask fs;
        fs.task = task;
        if (!task.degenerate() && !task.support_indices.empty()) {
            const auto ds = subtask_dataset(train, task, tree);
            fs.fusion = shared ? *shared : fit_fusion(ds, spec);
            fs.fusion.num_classes = static_cast<int>(task.children.size());
            fs.fusion.class_names = ds.class_names;
            fs.support_features = transform(fs.fusion, ds).values;
        }
        fs.fit_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        model.subtask_of_node[task.node] = model.subtasks.size();
        model.subtasks.push_back(std::move(fs));
    }
    return model;
}

struct HierPrediction {
    Labels leaf_class;
    std::vector<std::vector<int>> paths;  // node indices, root first, ending at a leaf
    std::vector<double> predict_seconds;  // per subtask
};

inline HierPrediction hier_predict(const HierModel& model, const LabeledDataset& qry,
                                   const InContextClassifier& predictor) {
    using clock = std::chrono::steady_clock;
    const auto& tree = model.tree;
    HierPrediction out;
    out.paths.assign(qry.n(), std::vector<int>{tree.root()});
    out.predict_seconds.assign(model.subtasks.size(), 0.0);

    // Parents precede children in breadth-first order, so every query has
    // reached its node before that node is processed.
    for (std::size_t s = 0; s < model.subtasks.size(); ++s) {
        const auto& fs = model.subtasks[s];
        const auto& task = fs.task;
        std::vector<std::size_t> here;
        for (std::size_t q = 0; q < qry.n(); ++q)
            if (out.paths[q].back() == task.node) here.push_back(q);
        if (here.empty()) continue;
        const auto t0 = clock::now();
        if (task.degenerate() || task.support_indices.empty()) {
            // Single child (or nothing to learn from): route without a predictor call.
            for (auto q : here) out.paths[q].push_back(task.children.front());
        } else {
            const auto sub = select_rows(qry, here);
            const auto xq = transform(fs.fusion, sub);
            Matrix probs;
            try {
                probs = predictor.predict(xq.values, fs.support_features, task.child_labels,
                                          static_cast<int>(task.children.size()));
                check_row_stochastic(probs, xq.values.rows(), static_cast<int>(task.children.size()), 1e-4);
            } catch (const PredictorError& e) {
                throw PredictorError("node '" + tree.node(task.node).id + "': " + e.what());
            }
            for (std::size_t k = 0; k < here.size(); ++k)
                out.paths[here[k]].push_back(task.children[static_cast<std::size_t>(argmax_row(probs, static_cast<Eigen::Index>(k)))]);
        }
        out.predict_seconds[s] = std::chrono::duration<double>(clock::now() - t0).count();
    }
    out.leaf_class.resize(qry.n());
    for (std::size_t q = 0; q < qry.n(); ++q) {
        const int leaf = out.paths[q].back();
        if (!tree.is_leaf(leaf)) throw TreeError("query " + std::to_string(q) + " stopped at internal node");
        out.leaf_class[q] = tree.node(leaf).class_index;
    }
    return out;
}

struct SubtaskReport {
    int node = -1;
    std::size_t support = 0;
    std::size_t available = 0;
    bool budget_applied = false;
    bool degenerate = false;
    std::vector<std::vector<std::size_t>> confusion;  // rows: true child slot, cols: predicted slot
    std::size_t routed = 0;                           // queries that reached the node
    double fit_seconds = 0.0;
    double predict_seconds = 0.0;
};

struct HierReport {
    double leaf_accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<double> level_accuracy;  // index k-1 for depth k
    std::vector<SubtaskReport> subtasks;
    double total_seconds = 0.0;
    std::size_t n = 0;
};

// Scores an existing prediction against the query labels.
inline HierReport evaluate_hier(const HierModel& model, const LabeledDataset& qry, const HierPrediction& pred) {
    if (qry.labels.size() != qry.n()) throw DataError("evaluate_hier needs labeled queries");
    const auto& tree = model.tree;
    HierReport r;
    r.n = qry.n();
    r.leaf_accuracy = accuracy(qry.labels, pred.leaf_class);
    r.macro_f1 = macro_f1(qry.labels, pred.leaf_class);

    const int depth = tree.depth();
    std::vector<std::size_t> hits(static_cast<std::size_t>(depth), 0), totals(static_cast<std::size_t>(depth), 0);
    for (std::size_t q = 0; q < qry.n(); ++q) {
        const auto truth = tree.path_to(tree.leaf_of_class(qry.labels[q]));
        for (std::size_t k = 1; k < truth.size(); ++k) {
            ++totals[k - 1];
            if (k < pred.paths[q].size() && pred.paths[q][k] == truth[k]) ++hits[k - 1];
        }
    }
    for (int k = 0; k < depth; ++k)
        r.level_accuracy.push_back(totals[static_cast<std::size_t>(k)] ? static_cast<double>(hits[static_cast<std::size_t>(k)]) /
                                                                             static_cast<double>(totals[static_cast<std::size_t>(k)])
                                                                       : 0.0);

    for (std::size_t s = 0; s < model.subtasks.size(); ++s) {
        const auto& fs = model.subtasks[s];
        SubtaskReport sr;
        sr.node = fs.task.node;
        sr.support = fs.task.support_indices.size();
        sr.available = fs.task.available;
        sr.budget_applied = fs.task.budget_applied;
        sr.degenerate = fs.task.degenerate();
        sr.fit_seconds = fs.fit_seconds;
        sr.predict_seconds = pred.predict_seconds[s];
        const auto k = fs.task.children.size();
        sr.confusion.assign(k, std::vector<std::size_t>(k, 0));
        for (std::size_t q = 0; q < qry.n(); ++q) {
            const auto& path = pred.paths[q];
            const auto it = std::find(path.begin(), path.end(), fs.task.node);
            if (it == path.end()) continue;
            ++sr.routed;
            const int true_slot = tree.child_slot(fs.task.node, tree.leaf_of_class(qry.labels[q]));
            if (true_slot < 0) continue;
            const auto& ch = fs.task.children;
            const auto pred_slot = std::find(ch.begin(), ch.end(), *(it + 1)) - ch.begin();
            ++sr.confusion[static_cast<std::size_t>(true_slot)][static_cast<std::size_t>(pred_slot)];
        }
        r.total_seconds += sr.fit_seconds + sr.predict_seconds;
        r.subtasks.push_back(std::move(sr));
    }
    return r;
}

inline HierReport evaluate_hier(const HierModel& model, const LabeledDataset& qry, const InContextClassifier& predictor) {
    return evaluate_hier(model, qry, hier_predict(model, qry, predictor));
}

// Deterministic report body; timings go to timings_json.
inline nlohmann::json to_json(const HierReport& r, const LabelTree& tree, std::size_t budget) {
    nlohmann::json subtasks = nlohmann::json::array();
    std::size_t max_support = 0;
    for (const auto& s : r.subtasks) {
        max_support = std::max(max_support, s.support);
        nlohmann::json children = nlohmann::json::array();
        for (int c : tree.node(s.node).children) children.push_back(tree.node(c).id);
        subtasks.push_back({{"node", tree.node(s.node).id}, {"name", tree.node(s.node).name}, {"children", children},
                            {"support", s.support}, {"available", s.available}, {"budget_applied", s.budget_applied},
                            {"degenerate", s.degenerate}, {"routed_queries", s.routed}, {"confusion", s.confusion}});
    }
    return {{"metrics", {{"leaf_accuracy", r.leaf_accuracy}, {"macro_f1", r.macro_f1}, {"n_query", r.n},
                         {"subtask_count", r.subtasks.size()}, {"internal_nodes", tree.internal_count()},
                         {"depth", tree.depth()}, {"budget", budget}, {"max_support", max_support}}},
            {"level_accuracy", r.level_accuracy},
            {"subtasks", subtasks}};
}

inline nlohmann::json timings_json(const HierReport& r, const LabelTree& tree) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& s : r.subtasks)
        per.push_back({{"node", tree.node(s.node).id}, {"fit_seconds", s.fit_seconds}, {"predict_seconds", s.predict_seconds}});
    return {{"total_seconds", r.total_seconds}, {"subtasks", per}};
}

inline nlohmann::json traces_json(const HierPrediction& p, const LabeledDataset& qry, const LabelTree& tree) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t q = 0; q < p.paths.size(); ++q) {
        nlohmann::json path = nlohmann::json::array();
        for (int n : p.paths[q]) path.push_back(tree.node(n).id);
        out.push_back({{"sample_id", qry.sample_ids[q]}, {"predicted_class", p.leaf_class[q]}, {"path", path}});
    }
    return out;
}

}  // namespace comet
