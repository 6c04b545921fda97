#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fga/sample.hpp"
#include "fga/tensor.hpp"

namespace fga {

enum class LayerKind { conv2d, relu, maxpool2d, flatten, dense, softmax };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view text);

/// Optional activation fused into a conv2d or dense layer.
enum class FusedActivation { none, relu };

/// Float range inside the weight blob, in elements.
struct BlobExtent {
    std::size_t offset = 0;
    std::size_t count = 0;
};

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::relu;

    // conv2d: out_channels, kernel, stride. maxpool2d: kernel is the window.
    std::size_t out_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    // dense
    std::size_t out_features = 0;

    FusedActivation activation = FusedActivation::none;

    BlobExtent weights;
    BlobExtent bias;
};

/// A layer with its parameters materialized and its shapes resolved.
struct Layer {
    LayerSpec spec;
    std::vector<double> weights;  // dense: [out][in]; conv2d: [out_ch][in_ch][kh][kw]
    std::vector<double> bias;
    Shape input_shape;
    Shape output_shape;
};

struct Preprocessing {
    double scale = 1.0;
    double offset = 0.0;
};

/// A validated feedforward network. Immutable once constructed.
class Model {
public:
    /// Propagates shapes from `input_shape` through `layers` and checks the
    /// weight extents. Throws ValidationError on any mismatch.
    Model(std::string name, Shape input_shape, Preprocessing preprocessing, std::size_t class_count,
          std::vector<Layer> layers);

    const std::string& name() const { return name_; }
    const Shape& input_shape() const { return input_shape_; }
    const Preprocessing& preprocessing() const { return preprocessing_; }
    std::size_t class_count() const { return class_count_; }
    const std::vector<Layer>& layers() const { return layers_; }

    /// Index of the named layer, or npos.
    std::size_t find_layer(std::string_view name) const;
    /// Flattened output width of the named layer; throws ConfigError if unknown.
    std::size_t layer_width(std::string_view name) const;
    bool ends_in_softmax() const;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    std::string name_;
    Shape input_shape_;
    Preprocessing preprocessing_;
    std::size_t class_count_;
    std::vector<Layer> layers_;
};

/// Loads an FGA-MF v1 manifest and its sidecar blob of little-endian float32.
Model load_model(const std::filesystem::path& manifest_path);

/// Writes `model` as a manifest plus a sidecar blob. Weights are narrowed to
/// float32; the blob sits next to the manifest with extension ".bin".
void save_model(const Model& model, const std::filesystem::path& manifest_path);

/// Evaluates one layer. Fused activations are applied unless `pre_activation`.
Tensor eval_layer(const Layer& layer, const Tensor& input, bool pre_activation = false);

enum class CaptureMode { post_activation, pre_activation };

struct ForwardResult {
    Tensor scores;
    std::map<std::string, Tensor, std::less<>> captured;  // flattened rank-1
};

/// Runs the network on one input. `input` may have any shape whose element
/// count equals the model's input size; it is read row-major.
ForwardResult forward(const Model& model, const Tensor& input, std::span<const std::string> capture = {},
                      CaptureMode mode = CaptureMode::post_activation);

/// Zero-based neuron position in the flattened output of a layer.
struct NeuronRef {
    std::string layer_name;
    std::size_t index = 0;

    auto operator<=>(const NeuronRef&) const = default;
};

/// Rows are samples, columns are flattened neuron outputs of one layer.
struct ActivationMatrix {
    std::string layer_name;
    std::vector<std::string> sample_ids;
    std::size_t cols = 0;
    std::vector<double> values;

    std::size_t rows() const { return sample_ids.size(); }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    /// Copy holding only the rows whose mask entry is nonzero, order preserved.
    ActivationMatrix select_rows(std::span<const char> keep) const;
};

struct DatasetPrediction {
    std::vector<ClassLabel> predicted;
    std::vector<char> correct;
    std::vector<double> max_probability;  // max score, meaningful when the model ends in softmax
    std::map<std::string, ActivationMatrix, std::less<>> activations;
};

/// Forward pass over every sample. Work is sharded over `jobs` threads;
/// results are identical to sequential evaluation.
DatasetPrediction predict_dataset(const Model& model, const LabeledDataset& dataset,
                                  std::span<const std::string> capture = {},
                                  CaptureMode mode = CaptureMode::post_activation, std::size_t jobs = 1);

std::size_t argmax(std::span<const double> values);

}  // namespace fga
