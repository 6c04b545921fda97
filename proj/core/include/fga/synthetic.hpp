#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "fga/inference.hpp"

namespace fga {

/// A small experiment whose feature structure is known in advance: 4x4
/// images where class c lights pixel c. fc1 holds one neuron per class plus
/// one neuron per feature that sums that feature's pixels.
struct PlantedOptions {
    std::size_t train_per_class = 60;
    std::size_t test_per_class = 20;
    std::size_t decoys_per_class = 3;  // train inputs the network misclassifies
    std::uint64_t seed = 7;
};

/// flatten -> fc1 (relu) -> fc2 -> softmax, 10 classes.
Model planted_model();

/// Writes IDX train/test files, the model bundle, features.json and
/// config.json into `dir`. Returns the config path.
std::filesystem::path write_planted_experiment(const std::filesystem::path& dir, const PlantedOptions& options = {});

}  // namespace fga
