#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "comet/errors.hpp"
#include "comet/rng.hpp"
#include "comet/types.hpp"

namespace comet {

struct SplitIndices {
    std::vector<std::size_t> first;   // ascending
    std::vector<std::size_t> second;  // ascending
};

// Partition row indices so that `first` holds about `fraction` of the rows.
// Stratified mode rounds per class and keeps at least one row of every class
// on each side.
inline SplitIndices split_indices(const Labels& labels, double fraction, bool stratified, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw SplitError("split fraction must lie in (0, 1)");
    const std::size_t n = labels.size();
    Rng rng(seed);
    SplitIndices out;
    if (!stratified) {
        if (n < 2) throw SplitError("need at least 2 samples to split");
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        rng.shuffle(idx);
        auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
        k = std::clamp<std::size_t>(k, 1, n - 1);
        out.first.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
        out.second.assign(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
    } else {
        std::map<int, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
        for (auto& [cls, rows] : by_class) {
            if (rows.size() < 2)
                throw SplitError("class " + std::to_string(cls) + " has " + std::to_string(rows.size()) +
                                 " sample; stratified split needs at least 2");
            rng.shuffle(rows);
            auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
            k = std::clamp<std::size_t>(k, 1, rows.size() - 1);
            out.first.insert(out.first.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k));
            out.second.insert(out.second.end(), rows.begin() + static_cast<std::ptrdiff_t>(k), rows.end());
        }
    }
    std::sort(out.first.begin(), out.first.end());
    std::sort(out.second.begin(), out.second.end());
    return out;
}

inline std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds, double fraction,
                                                               bool stratified, std::uint64_t seed) {
    if (ds.labels.empty() && stratified) throw SplitError("stratified split needs labels");
    const Labels labels = ds.labels.empty() ? Labels(ds.n(), 0) : ds.labels;
    const auto idx = split_indices(labels, fraction, stratified, seed);
    return {select_rows(ds, idx.first), select_rows(ds, idx.second)};
}

}  // namespace comet
