#pragma once

#include <cstddef>
#include <vector>

#include "lpe/tensor.hpp"

namespace lpe {

// Labelled feature matrix: features[N x d], labels in [0, num_classes).
struct Dataset {
    Tensor features;
    std::vector<int> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols(); }

    // Throws DataError on empty data, row/label count mismatch or labels out of range.
    void validate() const;
};

}  // namespace lpe
