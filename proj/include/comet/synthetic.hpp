#pragma once

// Seeded synthetic data with planted structure. Each generator mimics one
// property of real encoder outputs that the pipeline is meant to exploit.

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "comet/label_tree.hpp"
#include "comet/rng.hpp"
#include "comet/types.hpp"

namespace comet::synth {

inline Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

inline Matrix random_rotation(Rng& rng, Eigen::Index d) {
    const Matrix g = gaussian(rng, d, d);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    return q;
}

inline std::vector<std::string> numbered_ids(std::size_t n, const std::string& prefix = "s") {
    std::vector<std::string> ids;
    ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
    return ids;
}

inline Labels balanced_labels(Rng& rng, std::size_t n, int num_classes) {
    Labels y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    rng.shuffle(y);
    return y;
}

struct PlantedTokenParams {
    std::size_t n = 2000;
    std::size_t tokens = 16;
    std::size_t d = 32;
    int num_classes = 4;
    std::size_t signal_tokens = 2;
    double signal_strength = 5.0;  // length of the class direction on signal tokens
    double marker = 3.0;           // shared offset that makes signal tokens linearly identifiable
    double offset = 3.0;           // common component on every token (as in transformer outputs)
    double context_std = 1.0;      // per-sample component shared by all of its tokens
    double noise_std = 0.3;        // per-token isotropic noise
    std::optional<Grid> grid;      // when set, tokens == grid.size()
    std::size_t min_tokens = 0;    // > 0 and no grid: token counts uniform in [min_tokens, tokens]
    std::uint64_t seed = 0;
};

// Token sets where a few tokens per sample carry the class and the rest are
// isotropic noise around a per-sample context vector. Signal tokens share a marker direction, so a linear scorer
// can single them out; mean pooling dilutes them by tokens / signal_tokens.
// Dimension 0 is the same constant on every token, dimension 1 the marker,
// the class directions live in the remaining dimensions.
inline TokenEmbeddingSet planted_tokens(const PlantedTokenParams& p) {
    Rng rng(p.seed);
    const auto d = static_cast<Eigen::Index>(p.d);
    std::vector<Vector> directions;
    for (int c = 0; c < p.num_classes; ++c) {
        Vector v = Vector::Zero(d);
        for (Eigen::Index j = 2; j < d; ++j) v(j) = rng.normal();
        directions.push_back(v.normalized());
    }
    TokenEmbeddingSet s;
    s.d = p.d;
    s.grid = p.grid;
    s.num_classes = p.num_classes;
    s.labels = balanced_labels(rng, p.n, p.num_classes);
    s.sample_ids = numbered_ids(p.n);
    const bool ragged = !p.grid && p.min_tokens > 0 && p.min_tokens < p.tokens;
    for (std::size_t i = 0; i < p.n; ++i) {
        const std::size_t P = p.grid ? p.grid->size()
                              : ragged ? p.min_tokens + static_cast<std::size_t>(rng.below(p.tokens - p.min_tokens + 1))
                                       : p.tokens;
        Matrix t = p.noise_std * gaussian(rng, static_cast<Eigen::Index>(P), d);
        const Matrix context = p.context_std * gaussian(rng, 1, d);
        t.rowwise() += context.row(0);
        t.col(0).setConstant(p.offset);
        const auto slots = rng.sample_without_replacement(P, p.signal_tokens);
        for (auto slot : slots) {
            const auto r = static_cast<Eigen::Index>(slot);
            t(r, 1) += p.marker;
            t.row(r) += p.signal_strength * directions[static_cast<std::size_t>((*s.labels)[i])].transpose();
        }
        s.tokens.push_back(std::move(t));
    }
    return s;
}

struct TabularDominantParams {
    std::size_t n = 1500;
    std::size_t tabular_dim = 5;
    std::size_t embedding_dim = 768;
    int num_classes = 3;
    double center_spread = 3.0;  // std of the class centers in tabular space
    std::uint64_t seed = 0;
};

// Labels depend only on a few tabular features (nearest class center); the
// "embedding" modality is high-dimensional noise that can drown them out after
// concatenation.
inline LabeledDataset tabular_dominant(const TabularDominantParams& p) {
    Rng rng(p.seed);
    const auto k = static_cast<Eigen::Index>(p.tabular_dim);
    const Matrix centers = p.center_spread * gaussian(rng, static_cast<Eigen::Index>(p.num_classes), k);
    LabeledDataset ds;
    ds.sample_ids = numbered_ids(p.n);
    ds.class_names = default_class_names(p.num_classes);
    const Labels drawn = balanced_labels(rng, p.n, p.num_classes);
    FeatureMatrix tab;
    tab.values = gaussian(rng, static_cast<Eigen::Index>(p.n), k);
    tab.sample_ids = ds.sample_ids;
    tab.num_classes = p.num_classes;
    ds.labels.resize(p.n);
    for (std::size_t i = 0; i < p.n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        tab.values.row(r) += centers.row(drawn[i]);
        Eigen::Index arg = 0;
        (centers.rowwise() - tab.values.row(r)).rowwise().squaredNorm().minCoeff(&arg);
        ds.labels[i] = static_cast<int>(arg);
    }
    tab.labels = ds.labels;
    FeatureMatrix emb;
    emb.values = gaussian(rng, static_cast<Eigen::Index>(p.n), static_cast<Eigen::Index>(p.embedding_dim));
    emb.sample_ids = ds.sample_ids;
    emb.labels = ds.labels;
    emb.num_classes = p.num_classes;
    ds.tabular = std::move(tab);
    ds.modalities.emplace("embedding", std::move(emb));
    return ds;
}

// Rows with a power-law covariance spectrum lambda_k ∝ k^-decay, randomly rotated.
inline Matrix anisotropic(std::size_t n, std::size_t d, double decay, std::uint64_t seed) {
    Rng rng(seed);
    Matrix x = gaussian(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k) x.col(static_cast<Eigen::Index>(k)) *= std::pow(static_cast<double>(k + 1), -decay / 2.0);
    return x * random_rotation(rng, static_cast<Eigen::Index>(d)).transpose();
}

struct SweepParams {
    std::size_t n = 2500;
    std::size_t d = 384;
    int num_classes = 10;
    std::size_t signal_dims = 48;    // leading directions that separate classes
    double separation = 1.2;         // class-mean spread on the first signal direction
    double separation_decay = 0.35;  // spread falls off as (k+1)^-decay
    double tail_std = 0.6;           // noise level of the remaining directions
    std::uint64_t seed = 0;
};

// Classification data whose class signal is spread over a block of leading
// directions, followed by a long low-variance tail with no signal. Strong
// compression drops signal; weak compression keeps many noise directions.
inline FeatureMatrix anisotropic_classes(const SweepParams& p) {
    Rng rng(p.seed);
    const auto d = static_cast<Eigen::Index>(p.d);
    const auto k_sig = static_cast<Eigen::Index>(p.signal_dims);
    Matrix means = Matrix::Zero(p.num_classes, d);
    for (int c = 0; c < p.num_classes; ++c)
        for (Eigen::Index k = 0; k < k_sig; ++k)
            means(c, k) = p.separation * std::pow(static_cast<double>(k + 1), -p.separation_decay) * rng.normal();
    FeatureMatrix out;
    out.labels = balanced_labels(rng, p.n, p.num_classes);
    out.num_classes = p.num_classes;
    out.sample_ids = numbered_ids(p.n);
    out.values = gaussian(rng, static_cast<Eigen::Index>(p.n), d);
    for (Eigen::Index k = k_sig; k < d; ++k) out.values.col(k) *= p.tail_std;
    for (std::size_t i = 0; i < p.n; ++i)
        out.values.row(static_cast<Eigen::Index>(i)) += means.row((*out.labels)[i]);
    out.values = out.values * random_rotation(rng, d).transpose();
    return out;
}

struct HierarchyParams {
    std::size_t n = 50000;
    std::size_t branching = 3;
    int depth = 3;
    std::size_t d = 16;
    double level_scale = 3.0;   // offset size at the first level
    double level_decay = 0.6;   // offsets shrink by this factor per level
    std::uint64_t seed = 0;
};

struct HierarchyData {
    LabelTree tree;
    LabeledDataset data;
};

// Complete tree of the given branching and depth; a sample's features are the
// sum of random offsets of every node on its root-to-leaf path plus noise.
inline HierarchyData hierarchical_clusters(const HierarchyParams& p) {
    Rng rng(p.seed);
    std::vector<std::tuple<std::string, std::string, std::string>> nodes{{"root", "root", ""}};
    std::vector<std::pair<std::string, int>> leaves;
    std::vector<std::string> frontier{"root"};
    for (int level = 1; level <= p.depth; ++level) {
        std::vector<std::string> next;
        for (const auto& parent : frontier) {
            for (std::size_t b = 0; b < p.branching; ++b) {
                const std::string id = (parent == "root" ? std::string("n") : parent + ".") + std::to_string(b);
                nodes.emplace_back(id, id, parent);
                next.push_back(id);
            }
        }
        frontier = std::move(next);
    }
    for (std::size_t c = 0; c < frontier.size(); ++c) leaves.emplace_back(frontier[c], static_cast<int>(c));
    HierarchyData out{LabelTree::build(nodes, leaves), {}};
    const auto& tree = out.tree;
    const auto d = static_cast<Eigen::Index>(p.d);
    std::vector<Vector> offset(tree.nodes().size(), Vector::Zero(d));
    for (std::size_t i = 0; i < tree.nodes().size(); ++i) {
        const int depth = tree.node(static_cast<int>(i)).depth;
        if (depth == 0) continue;
        const double scale = p.level_scale * std::pow(p.level_decay, depth - 1);
        for (Eigen::Index j = 0; j < d; ++j) offset[i](j) = scale * rng.normal();
    }
    const int num_classes = tree.num_classes();
    auto& ds = out.data;
    ds.sample_ids = numbered_ids(p.n);
    ds.class_names.clear();
    for (int c = 0; c < num_classes; ++c) ds.class_names.push_back(tree.node(tree.leaf_of_class(c)).id);
    ds.labels.resize(p.n);
    FeatureMatrix fm;
    fm.values = gaussian(rng, static_cast<Eigen::Index>(p.n), d);
    for (std::size_t i = 0; i < p.n; ++i) {
        const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
        ds.labels[i] = y;
        for (int node : tree.path_to(tree.leaf_of_class(y))) fm.values.row(static_cast<Eigen::Index>(i)) += offset[static_cast<std::size_t>(node)].transpose();
    }
    fm.sample_ids = ds.sample_ids;
    fm.labels = ds.labels;
    fm.num_classes = num_classes;
    ds.modalities.emplace("features", std::move(fm));
    return out;
}

// Small multimodal demo set: 4 classes under a two-level tree, an image-like
// grid modality, a ragged text-like modality and a raw tabular table (with a
// categorical column and missing cells) whose cells are strings.
struct BundledData {
    LabelTree tree;
    std::vector<std::string> class_names;
    Labels labels;
    std::vector<std::string> sample_ids;
    TokenEmbeddingSet image;
    TokenEmbeddingSet text;
    std::vector<std::string> tabular_header;
    std::vector<std::vector<std::string>> tabular_rows;
};

inline BundledData bundled(std::size_t n, std::uint64_t seed) {
    BundledData out{LabelTree::build({{"root", "all", ""},
                                      {"animal", "animal", "root"},
                                      {"vehicle", "vehicle", "root"},
                                      {"cat", "cat", "animal"},
                                      {"dog", "dog", "animal"},
                                      {"car", "car", "vehicle"},
                                      {"truck", "truck", "vehicle"}},
                                     {{"cat", 0}, {"dog", 1}, {"car", 2}, {"truck", 3}}),
                    {"cat", "dog", "car", "truck"}, {}, {}, {}, {}, {}, {}};
    PlantedTokenParams img;
    img.n = n;
    img.d = 32;
    img.grid = Grid{4, 4};
    img.signal_strength = 3.0;
    img.seed = derive_seed(seed, 1);
    out.image = planted_tokens(img);
    out.labels = *out.image.labels;
    out.sample_ids = out.image.sample_ids;

    // Same labels for the text modality: regenerate tokens, then replant the class.
    PlantedTokenParams txt;
    txt.n = n;
    txt.d = 24;
    txt.tokens = 24;
    txt.min_tokens = 8;
    txt.signal_strength = 0.0;
    txt.marker = 0.0;
    txt.seed = derive_seed(seed, 2);
    out.text = planted_tokens(txt);
    Rng rng(derive_seed(seed, 3));
    std::vector<Vector> dirs;
    for (int c = 0; c < 4; ++c) {
        Vector v = Vector::Zero(24);
        for (Eigen::Index j = 2; j < 24; ++j) v(j) = rng.normal();
        dirs.push_back(v.normalized());
    }
    for (std::size_t i = 0; i < n; ++i) {
        auto& t = out.text.tokens[i];
        const auto slot = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(t.rows())));
        t(slot, 1) += 3.0;
        t.row(slot) += 4.0 * dirs[static_cast<std::size_t>(out.labels[i])].transpose();
    }
    out.text.labels = out.labels;

    out.tabular_header = {"sample_id", "weight", "age", "color", "size"};
    const char* colors[] = {"red", "green", "blue"};
    const char* sizes[] = {"small", "medium", "large"};
    for (std::size_t i = 0; i < n; ++i) {
        const int y = out.labels[i];
        const bool vehicle = y >= 2;
        const double weight = (vehicle ? 3.0 : 1.0) + 0.8 * rng.normal();
        std::string age = std::to_string(10.0 + 3.0 * rng.normal());
        if (rng.uniform() < 0.05) age.clear();
        const int size = std::min(2, std::max(0, (y % 2) + static_cast<int>(rng.below(2))));
        out.tabular_rows.push_back({out.sample_ids[i], std::to_string(weight), age,
                                    colors[rng.below(3)], sizes[size]});
    }
    return out;
}

}  // namespace comet::synth
