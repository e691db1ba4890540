#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "comet/errors.hpp"

namespace comet {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;

// Grid layout of a token set: token p sits at row p / width, column p % width.
struct Grid {
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t size() const { return height * width; }
    bool operator==(const Grid&) const = default;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Number of classes implied by dense labels; throws on negative entries.
inline int count_classes(const Labels& labels) {
    int c = 0;
    for (int y : labels) {
        if (y < 0) throw DataError("negative class label " + std::to_string(y));
        c = std::max(c, y + 1);
    }
    return c;
}

// Dense n x d table of pooled, tabular or fused features.
struct FeatureMatrix {
    Matrix values;
    std::vector<std::string> sample_ids;
    std::optional<Labels> labels;
    int num_classes = 0;

    std::size_t n() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t d() const { return static_cast<std::size_t>(values.cols()); }

    void validate() const {
        if (sample_ids.size() != n())
            throw DataError("sample id count " + std::to_string(sample_ids.size()) +
                            " does not match row count " + std::to_string(n()));
        if (!all_finite(values)) throw DataError("feature matrix contains NaN or Inf");
        if (labels) {
            if (labels->size() != n()) throw DataError("label count does not match row count");
            if (count_classes(*labels) > num_classes)
                throw DataError("label exceeds recorded class count");
        }
    }
};

// Per-sample ragged token matrices sharing a token dimension.
struct TokenEmbeddingSet {
    std::vector<Matrix> tokens;  // tokens[i] is P_i x d
    std::vector<std::string> sample_ids;
    std::optional<Grid> grid;
    std::size_t d = 0;
    std::optional<Labels> labels;
    int num_classes = 0;

    std::size_t n() const { return tokens.size(); }

    std::size_t total_tokens() const {
        std::size_t total = 0;
        for (const auto& t : tokens) total += static_cast<std::size_t>(t.rows());
        return total;
    }

    void validate() const {
        if (sample_ids.size() != tokens.size()) throw DataError("sample id count mismatch in token set");
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (static_cast<std::size_t>(tokens[i].cols()) != d)
                throw DataError("sample " + sample_ids[i] + " has token dimension " +
                                std::to_string(tokens[i].cols()) + ", expected " + std::to_string(d));
            if (grid && static_cast<std::size_t>(tokens[i].rows()) != grid->size())
                throw DataError("sample " + sample_ids[i] + " does not fill the " +
                                std::to_string(grid->height) + "x" + std::to_string(grid->width) + " grid");
            if (!all_finite(tokens[i])) throw DataError("token set contains NaN or Inf");
        }
        if (labels) {
            if (labels->size() != tokens.size()) throw DataError("label count does not match sample count");
            if (count_classes(*labels) > num_classes)
                throw DataError("label exceeds recorded class count");
        }
    }
};

using Modality = std::variant<FeatureMatrix, TokenEmbeddingSet>;

inline const std::vector<std::string>& sample_ids_of(const Modality& m) {
    return std::visit([](const auto& x) -> const std::vector<std::string>& { return x.sample_ids; }, m);
}

inline std::size_t rows_of(const Modality& m) {
    return std::visit([](const auto& x) { return x.n(); }, m);
}

// Aligned multimodal dataset: every block shares the sample order of
// `sample_ids`.
struct LabeledDataset {
    std::map<std::string, Modality> modalities;
    std::optional<FeatureMatrix> tabular;
    std::vector<std::string> sample_ids;
    Labels labels;
    std::vector<std::string> class_names;

    std::size_t n() const { return sample_ids.size(); }
    int num_classes() const { return static_cast<int>(class_names.size()); }

    void validate() const {
        if (modalities.empty() && !tabular) throw DataError("dataset has no modality and no tabular block");
        if (n() == 0) throw DataError("dataset is empty");
        if (!labels.empty() && labels.size() != n()) throw DataError("label count does not match sample count");
        if (!labels.empty() && count_classes(labels) > num_classes())
            throw DataError("label index exceeds class_names");
        for (const auto& [name, block] : modalities) {
            if (sample_ids_of(block) != sample_ids)
                throw DataError("modality '" + name + "' is not aligned with the dataset sample order");
        }
        if (tabular && tabular->sample_ids != sample_ids)
            throw DataError("tabular block is not aligned with the dataset sample order");
    }
};

inline std::vector<std::string> default_class_names(int num_classes) {
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) names.push_back("class_" + std::to_string(c));
    return names;
}

// Row subsets keep the order given by `rows`.
inline FeatureMatrix select_rows(const FeatureMatrix& m, const std::vector<std::size_t>& rows) {
    FeatureMatrix out;
    out.values.resize(static_cast<Eigen::Index>(rows.size()), m.values.cols());
    out.sample_ids.reserve(rows.size());
    if (m.labels) out.labels.emplace();
    for (std::size_t k = 0; k < rows.size(); ++k) {
        out.values.row(static_cast<Eigen::Index>(k)) = m.values.row(static_cast<Eigen::Index>(rows[k]));
        out.sample_ids.push_back(m.sample_ids[rows[k]]);
        if (m.labels) out.labels->push_back((*m.labels)[rows[k]]);
    }
    out.num_classes = m.num_classes;
    return out;
}

inline TokenEmbeddingSet select_rows(const TokenEmbeddingSet& s, const std::vector<std::size_t>& rows) {
    TokenEmbeddingSet out;
    out.d = s.d;
    out.grid = s.grid;
    out.num_classes = s.num_classes;
    if (s.labels) out.labels.emplace();
    for (std::size_t r : rows) {
        out.tokens.push_back(s.tokens[r]);
        out.sample_ids.push_back(s.sample_ids[r]);
        if (s.labels) out.labels->push_back((*s.labels)[r]);
    }
    return out;
}

inline LabeledDataset select_rows(const LabeledDataset& ds, const std::vector<std::size_t>& rows) {
    LabeledDataset out;
    out.class_names = ds.class_names;
    for (const auto& [name, block] : ds.modalities)
        out.modalities.emplace(name, std::visit([&](const auto& b) -> Modality { return select_rows(b, rows); }, block));
    if (ds.tabular) out.tabular = select_rows(*ds.tabular, rows);
    for (std::size_t r : rows) {
        out.sample_ids.push_back(ds.sample_ids[r]);
        if (!ds.labels.empty()) out.labels.push_back(ds.labels[r]);
    }
    return out;
}

}  // namespace comet
