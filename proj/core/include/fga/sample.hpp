#pragma once

#include <string>
#include <vector>

#include "fga/tensor.hpp"

namespace fga {

using ClassLabel = int;

struct LabeledSample {
    std::string id;
    Tensor pixels;
    ClassLabel class_label = 0;
};

enum class DatasetRole { train, test };

/// Samples plus the class domain they draw labels from.
///
/// `class_names[c]` is the display name of class c; integer-labelled sources
/// (IDX) use the decimal string. `pixel_scale` records the factor already
/// applied to raw 8-bit pixels at ingestion.
struct LabeledDataset {
    std::vector<LabeledSample> samples;
    std::vector<std::string> class_names;
    DatasetRole role = DatasetRole::train;
    double pixel_scale = 1.0 / 255.0;

    std::size_t size() const { return samples.size(); }
    std::size_t class_count() const { return class_names.size(); }
    bool has_class(ClassLabel c) const { return c >= 0 && static_cast<std::size_t>(c) < class_names.size(); }
};

/// Class names "0".."n-1".
std::vector<std::string> numeric_class_names(std::size_t n);

}  // namespace fga
