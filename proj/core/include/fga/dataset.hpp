#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fga/inference.hpp"
#include "fga/sample.hpp"
#include "fga/tensor.hpp"

namespace fga {

// ---------------------------------------------------------------------------
// IDX

/// Reads an IDX image file (magic 2051) and label file (magic 2049). Pixels
/// are divided by 255 exactly once; sample ids are `id_prefix` + index.
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        DatasetRole role = DatasetRole::train, const std::string& id_prefix = "");

void write_idx_images(const std::filesystem::path& path, std::span<const std::uint8_t> pixels, std::size_t count,
                      std::size_t rows, std::size_t cols);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

// ---------------------------------------------------------------------------
// Images and patches

/// Binary PGM (P5) gives [H, W]; binary PPM (P6) gives [3, H, W]. Only
/// maxval 255 is accepted and pixels are divided by 255.
Tensor read_pnm(const std::filesystem::path& path);
/// Inverse of read_pnm; values are clamped to [0, 1] and rounded to bytes.
void write_pnm(const std::filesystem::path& path, const Tensor& image);

struct Patch {
    std::size_t row = 0;  // top-left offset
    std::size_t col = 0;
    Tensor pixels;
};

/// Square windows of side `size` at offsets {0, stride, 2*stride, ...}, row
/// major, keeping only windows that fit. Accepts [H, W] or [C, H, W].
std::vector<Patch> extract_patches(const Tensor& image, std::size_t size, std::size_t stride);

/// Expected number of patches for the given geometry.
std::size_t patch_count(std::size_t height, std::size_t width, std::size_t size, std::size_t stride);

/// "{image_id}:{row}:{col}"
std::string patch_id(const std::string& image_id, std::size_t row, std::size_t col);

/// A sample whose class may be unknown (raw patches before filtering).
struct UnlabeledSample {
    std::string id;
    Tensor pixels;
    std::optional<ClassLabel> class_label;
};

/// Keeps the samples whose maximum class probability is strictly above
/// `threshold` and labels them with the model's argmax. Order preserved.
LabeledDataset confidence_filter(const Model& model, std::span<const UnlabeledSample> samples, double threshold,
                                 std::vector<std::string> class_names = {}, std::size_t jobs = 1);

/// Patch directory: `manifest.csv` with header `id,class_label` plus one image
/// per row named by `patch_file_name(id)`. Empty class_label = unlabeled.
std::vector<UnlabeledSample> load_patch_directory(const std::filesystem::path& dir,
                                                  std::vector<std::string>& class_names);
LabeledDataset load_labeled_patch_directory(const std::filesystem::path& dir, DatasetRole role,
                                            std::vector<std::string> class_names = {});
void write_patch_directory(const std::filesystem::path& dir, std::span<const UnlabeledSample> samples,
                           std::span<const std::string> class_names);
std::string patch_file_name(const std::string& id, std::size_t rank);

// ---------------------------------------------------------------------------
// Features

struct FeatureSpec {
    std::string name;
    std::vector<ClassLabel> classes;  // sorted, unique

    bool contains(ClassLabel c) const;
    bool operator==(const FeatureSpec&) const = default;
};

/// Builds a spec, sorting and deduplicating `classes`.
FeatureSpec make_feature(std::string name, std::vector<ClassLabel> classes);

/// Reads a JSON list of {name, classes:[...]}; class entries may be integers
/// or names from `class_names`.
std::vector<FeatureSpec> load_features(const std::filesystem::path& path, std::span<const std::string> class_names);
std::vector<FeatureSpec> parse_features(const std::string& json_text, std::span<const std::string> class_names);

/// Presence of every feature for every sample; a sample may carry several.
class FeatureLabeling {
public:
    FeatureLabeling(std::vector<std::string> feature_names, std::vector<std::vector<char>> columns);

    std::size_t feature_count() const { return names_.size(); }
    std::size_t sample_count() const { return columns_.empty() ? 0 : columns_.front().size(); }
    const std::string& feature_name(std::size_t f) const { return names_[f]; }
    bool present(std::size_t sample, std::size_t feature) const { return columns_[feature][sample] != 0; }
    std::span<const char> column(std::size_t feature) const { return columns_[feature]; }

private:
    std::vector<std::string> names_;
    std::vector<std::vector<char>> columns_;
};

FeatureLabeling label_features(const LabeledDataset& dataset, std::span<const FeatureSpec> features);

/// Presence column for one feature over raw labels.
std::vector<char> presence(std::span<const ClassLabel> labels, const FeatureSpec& feature);

// ---------------------------------------------------------------------------
// Folds and combinations

struct FoldAssignment {
    std::size_t k = 0;
    std::vector<std::size_t> fold;  // fold[i] for sample i in dataset order

    std::size_t fold_size(std::size_t f) const;
    /// 1 where sample i belongs to fold f.
    std::vector<char> mask(std::size_t f) const;
};

/// Seeded Fisher-Yates shuffle followed by round-robin assignment.
FoldAssignment kfold(std::size_t sample_count, std::size_t k, std::uint64_t seed);
inline FoldAssignment kfold(const LabeledDataset& dataset, std::size_t k, std::uint64_t seed) {
    return kfold(dataset.size(), k, seed);
}

/// Every subset of `class_names`' indices with size in [min_size, max_size],
/// ordered by size and then lexicographically. Names join members with ",".
std::vector<FeatureSpec> enumerate_feature_combos(std::span<const std::string> class_names, std::size_t min_size,
                                                  std::size_t max_size);

/// Concatenates datasets; ids must stay unique.
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);
/// Rows of `dataset` whose mask entry is nonzero.
LabeledDataset subset(const LabeledDataset& dataset, std::span<const char> keep, DatasetRole role);

}  // namespace fga
