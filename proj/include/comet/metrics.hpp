#pragma once

#include <set>
#include <vector>

#include "comet/errors.hpp"
#include "comet/types.hpp"

namespace comet {

inline double accuracy(const Labels& truth, const Labels& pred) {
    if (truth.size() != pred.size()) throw DataError("accuracy: length mismatch");
    if (truth.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

// Macro-F1 averaged over the classes present in `truth`.
inline double macro_f1(const Labels& truth, const Labels& pred) {
    if (truth.size() != pred.size()) throw DataError("macro_f1: length mismatch");
    const std::set<int> classes(truth.begin(), truth.end());
    if (classes.empty()) return 0.0;
    double sum = 0.0;
    for (int c : classes) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (pred[i] == c && truth[i] == c) ++tp;
            else if (pred[i] == c) ++fp;
            else if (truth[i] == c) ++fn;
        }
        const double denom = static_cast<double>(2 * tp + fp + fn);
        sum += denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    }
    return sum / static_cast<double>(classes.size());
}

// rows = true class, columns = predicted class.
inline std::vector<std::vector<std::size_t>> confusion_matrix(const Labels& truth, const Labels& pred, int num_classes) {
    std::vector<std::vector<std::size_t>> m(static_cast<std::size_t>(num_classes),
                                            std::vector<std::size_t>(static_cast<std::size_t>(num_classes), 0));
    for (std::size_t i = 0; i < truth.size(); ++i) ++m.at(static_cast<std::size_t>(truth[i])).at(static_cast<std::size_t>(pred[i]));
    return m;
}

}  // namespace comet
