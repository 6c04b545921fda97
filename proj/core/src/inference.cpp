#include "fga/inference.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fga/error.hpp"
#include "fga/parallel.hpp"

namespace fga {

using nlohmann::json;

std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    expects(data.size() == element_count(shape), "tensor data length must equal the product of its shape");
}

std::vector<std::string> numeric_class_names(std::size_t n) {
    std::vector<std::string> names;
    names.reserve(n);
    for (std::size_t i = 0; i < n; ++i) names.push_back(std::to_string(i));
    return names;
}

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2d: return "maxpool2d";
        case LayerKind::flatten: return "flatten";
        case LayerKind::dense: return "dense";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

LayerKind parse_layer_kind(std::string_view text) {
    for (auto k : {LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool2d, LayerKind::flatten, LayerKind::dense,
                   LayerKind::softmax}) {
        if (to_string(k) == text) return k;
    }
    throw FormatError("unknown layer kind '" + std::string(text) + "'");
}

namespace {

struct ParamCounts {
    std::size_t weights = 0;
    std::size_t bias = 0;
};

ParamCounts implied_counts(const LayerSpec& spec, const Shape& in) {
    switch (spec.kind) {
        case LayerKind::conv2d:
            return {spec.out_channels * in[0] * spec.kernel_h * spec.kernel_w, spec.out_channels};
        case LayerKind::dense:
            return {spec.out_features * in[0], spec.out_features};
        default:
            return {};
    }
}

Shape propagate(const LayerSpec& spec, const Shape& in) {
    auto fail = [&](const std::string& why) {
        return ValidationError("layer '" + spec.name + "' (" + std::string(to_string(spec.kind)) + ") with input " +
                               to_string(in) + ": " + why);
    };
    switch (spec.kind) {
        case LayerKind::conv2d:
        case LayerKind::maxpool2d: {
            if (in.size() != 3) throw fail("expects a rank-3 [channels, height, width] input");
            if (spec.kernel_h == 0 || spec.kernel_w == 0) throw fail("kernel must be positive");
            if (spec.stride_h == 0 || spec.stride_w == 0) throw fail("stride must be positive");
            if (spec.kernel_h > in[1] || spec.kernel_w > in[2]) throw fail("kernel larger than input");
            const std::size_t oh = (in[1] - spec.kernel_h) / spec.stride_h + 1;
            const std::size_t ow = (in[2] - spec.kernel_w) / spec.stride_w + 1;
            if (spec.kind == LayerKind::conv2d) {
                if (spec.out_channels == 0) throw fail("out_channels must be positive");
                return {spec.out_channels, oh, ow};
            }
            return {in[0], oh, ow};
        }
        case LayerKind::relu:
            return in;
        case LayerKind::flatten:
            return {element_count(in)};
        case LayerKind::dense:
            if (in.size() != 1) throw fail("expects a rank-1 input (add a flatten layer)");
            if (spec.out_features == 0) throw fail("out_features must be positive");
            return {spec.out_features};
        case LayerKind::softmax:
            if (in.size() != 1) throw fail("expects a rank-1 input");
            return in;
    }
    throw fail("unsupported kind");
}

void check_finite(const Tensor& t, const std::string& layer) {
    for (double v : t.data) {
        if (!std::isfinite(v)) throw FormatError("non-finite activation produced by layer '" + layer + "'");
    }
}

void relu_inplace(std::vector<double>& v) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
}

Tensor eval_conv2d(const Layer& layer, const Tensor& in) {
    const auto& s = layer.spec;
    const std::size_t ic = in.shape[0], ih = in.shape[1], iw = in.shape[2];
    Tensor out(layer.output_shape);
    const std::size_t oc = out.shape[0], oh = out.shape[1], ow = out.shape[2];
    for (std::size_t o = 0; o < oc; ++o) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = layer.bias[o];
                for (std::size_t c = 0; c < ic; ++c) {
                    const double* w = layer.weights.data() + ((o * ic + c) * s.kernel_h) * s.kernel_w;
                    const double* src = in.data.data() + c * ih * iw;
                    for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
                        const double* row = src + (y * s.stride_h + ky) * iw + x * s.stride_w;
                        for (std::size_t kx = 0; kx < s.kernel_w; ++kx) acc += w[ky * s.kernel_w + kx] * row[kx];
                    }
                }
                out.data[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    return out;
}

Tensor eval_maxpool(const Layer& layer, const Tensor& in) {
    const auto& s = layer.spec;
    const std::size_t ih = in.shape[1], iw = in.shape[2];
    Tensor out(layer.output_shape);
    const std::size_t ch = out.shape[0], oh = out.shape[1], ow = out.shape[2];
    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double best = -std::numeric_limits<double>::infinity();
                for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
                    for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
                        best = std::max(best, in.data[(c * ih + y * s.stride_h + ky) * iw + x * s.stride_w + kx]);
                    }
                }
                out.data[(c * oh + y) * ow + x] = best;
            }
        }
    }
    return out;
}

Tensor eval_dense(const Layer& layer, const Tensor& in) {
    const std::size_t n_in = in.data.size();
    Tensor out(layer.output_shape);
    for (std::size_t o = 0; o < out.data.size(); ++o) {
        const double* w = layer.weights.data() + o * n_in;
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * in.data[i];
        out.data[o] = acc;
    }
    return out;
}

Tensor eval_softmax(const Tensor& in) {
    Tensor out(in.shape);
    if (in.data.empty()) return out;
    const double peak = *std::max_element(in.data.begin(), in.data.end());
    double total = 0.0;
    for (std::size_t i = 0; i < in.data.size(); ++i) {
        out.data[i] = std::exp(in.data[i] - peak);
        total += out.data[i];
    }
    for (double& v : out.data) v /= total;
    return out;
}

}  // namespace

Model::Model(std::string name, Shape input_shape, Preprocessing preprocessing, std::size_t class_count,
             std::vector<Layer> layers)
    : name_(std::move(name)),
      input_shape_(std::move(input_shape)),
      preprocessing_(preprocessing),
      class_count_(class_count),
      layers_(std::move(layers)) {
    if (input_shape_.empty() || element_count(input_shape_) == 0)
        throw ValidationError("model input_shape must be nonempty with positive dimensions");
    if (class_count_ == 0) throw ValidationError("class_count must be positive");
    if (layers_.empty()) throw ValidationError("model has no layers");

    std::set<std::string, std::less<>> names;
    Shape shape = input_shape_;
    for (auto& layer : layers_) {
        if (layer.spec.name.empty()) throw ValidationError("layer with empty name");
        if (!names.insert(layer.spec.name).second)
            throw ValidationError("duplicate layer name '" + layer.spec.name + "'");
        layer.input_shape = shape;
        layer.output_shape = propagate(layer.spec, shape);
        const auto need = implied_counts(layer.spec, shape);
        if (layer.weights.size() != need.weights || layer.bias.size() != need.bias) {
            throw ValidationError("layer '" + layer.spec.name + "' has " + std::to_string(layer.weights.size()) +
                                  " weights and " + std::to_string(layer.bias.size()) + " biases; expected " +
                                  std::to_string(need.weights) + " and " + std::to_string(need.bias));
        }
        shape = layer.output_shape;
    }
    if (element_count(shape) != class_count_) {
        throw ValidationError("final layer produces " + std::to_string(element_count(shape)) +
                              " outputs but class_count is " + std::to_string(class_count_));
    }
}

std::size_t Model::find_layer(std::string_view name) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].spec.name == name) return i;
    }
    return npos;
}

std::size_t Model::layer_width(std::string_view name) const {
    const auto i = find_layer(name);
    if (i == npos) throw ConfigError("model '" + name_ + "' has no layer named '" + std::string(name) + "'");
    return element_count(layers_[i].output_shape);
}

bool Model::ends_in_softmax() const { return layers_.back().spec.kind == LayerKind::softmax; }

// ---------------------------------------------------------------------------
// FGA-MF v1 manifest

namespace {

std::pair<std::size_t, std::size_t> read_pair(const json& p, const char* key, bool required, std::size_t fallback) {
    if (!p.contains(key)) {
        if (required) throw FormatError(std::string("missing layer param '") + key + "'");
        return {fallback, fallback};
    }
    const auto& v = p.at(key);
    if (v.is_number_unsigned()) return {v.get<std::size_t>(), v.get<std::size_t>()};
    if (v.is_array() && v.size() == 2) return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
    throw FormatError(std::string("layer param '") + key + "' must be a positive integer or [h, w]");
}

LayerSpec parse_layer(const json& j) {
    LayerSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.kind = parse_layer_kind(j.at("kind").get<std::string>());
    const json params = j.value("params", json::object());
    switch (spec.kind) {
        case LayerKind::conv2d: {
            spec.out_channels = params.at("out_channels").get<std::size_t>();
            std::tie(spec.kernel_h, spec.kernel_w) = read_pair(params, "kernel", true, 0);
            std::tie(spec.stride_h, spec.stride_w) = read_pair(params, "stride", false, 1);
            const auto padding = params.value("padding", std::string("valid"));
            if (padding != "valid") throw FormatError("layer '" + spec.name + "': only valid padding is supported");
            break;
        }
        case LayerKind::maxpool2d:
            std::tie(spec.kernel_h, spec.kernel_w) = read_pair(params, "window", true, 0);
            std::tie(spec.stride_h, spec.stride_w) = read_pair(params, "stride", false, spec.kernel_h);
            if (!params.contains("stride")) spec.stride_w = spec.kernel_w;
            break;
        case LayerKind::dense:
            spec.out_features = params.at("out_features").get<std::size_t>();
            break;
        default:
            break;
    }
    if (spec.kind == LayerKind::conv2d || spec.kind == LayerKind::dense) {
        const auto act = params.value("activation", std::string("none"));
        if (act == "relu") {
            spec.activation = FusedActivation::relu;
        } else if (act != "none") {
            throw FormatError("layer '" + spec.name + "': unsupported fused activation '" + act + "'");
        }
        spec.weights = {j.at("weights").at("offset").get<std::size_t>(), j.at("weights").at("count").get<std::size_t>()};
        spec.bias = {j.at("bias").at("offset").get<std::size_t>(), j.at("bias").at("count").get<std::size_t>()};
    }
    return spec;
}

std::vector<float> read_blob(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weight blob " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0) throw TruncationError("weight blob " + path.string() + " is not a whole number of floats");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, bytes.data() + 4 * i, 4);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

std::vector<double> take_extent(const std::vector<float>& blob, const BlobExtent& ext, std::size_t need,
                                const std::string& what) {
    if (ext.count < need) {
        throw TruncationError(what + " provides " + std::to_string(ext.count) + " values but " + std::to_string(need) +
                              " are required");
    }
    if (ext.count > need) {
        throw ValidationError(what + " provides " + std::to_string(ext.count) + " values but the layer uses " +
                              std::to_string(need));
    }
    if (ext.offset > blob.size() || blob.size() - ext.offset < ext.count) {
        throw TruncationError(what + " extends past the end of the weight blob (" + std::to_string(blob.size()) +
                              " floats)");
    }
    return {blob.begin() + static_cast<std::ptrdiff_t>(ext.offset),
            blob.begin() + static_cast<std::ptrdiff_t>(ext.offset + ext.count)};
}

std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
    auto p = manifest;
    p.replace_extension(".bin");
    return p;
}

}  // namespace

Model load_model(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open model manifest " + manifest_path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("model manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
    }

    try {
        if (doc.value("format", std::string()) != "fga-mf")
            throw FormatError("model manifest " + manifest_path.string() + ": bad magic (format must be \"fga-mf\")");
        if (doc.value("version", 0) != 1)
            throw FormatError("model manifest " + manifest_path.string() + ": unsupported version");

        const auto blob_path = doc.contains("blob")
                                   ? manifest_path.parent_path() / doc.at("blob").get<std::string>()
                                   : blob_path_for(manifest_path);
        const auto blob = read_blob(blob_path);

        Preprocessing pre;
        if (doc.contains("preprocessing")) {
            pre.scale = doc["preprocessing"].value("scale", 1.0);
            pre.offset = doc["preprocessing"].value("offset", 0.0);
        }
        const auto input_shape = doc.at("input_shape").get<Shape>();
        const auto class_count = doc.at("class_count").get<std::size_t>();

        // Shapes are propagated here as well so the implied weight counts are known
        // before materializing; Model's constructor then re-validates.
        std::vector<Layer> layers;
        Shape shape = input_shape;
        for (const auto& lj : doc.at("layers")) {
            Layer layer;
            layer.spec = parse_layer(lj);
            const auto out_shape = propagate(layer.spec, shape);
            const auto need = implied_counts(layer.spec, shape);
            if (need.weights > 0) {
                layer.weights = take_extent(blob, layer.spec.weights, need.weights, "layer '" + layer.spec.name + "' weights");
                layer.bias = take_extent(blob, layer.spec.bias, need.bias, "layer '" + layer.spec.name + "' bias");
            }
            shape = out_shape;
            layers.push_back(std::move(layer));
        }
        return Model(doc.value("name", manifest_path.stem().string()), input_shape, pre, class_count,
                     std::move(layers));
    } catch (const json::exception& e) {
        throw FormatError("model manifest " + manifest_path.string() + ": " + e.what());
    }
}

void save_model(const Model& model, const std::filesystem::path& manifest_path) {
    json doc;
    doc["format"] = "fga-mf";
    doc["version"] = 1;
    doc["name"] = model.name();
    doc["input_shape"] = model.input_shape();
    doc["preprocessing"] = {{"scale", model.preprocessing().scale}, {"offset", model.preprocessing().offset}};
    doc["class_count"] = model.class_count();
    const auto blob_path = blob_path_for(manifest_path);
    doc["blob"] = blob_path.filename().string();

    std::vector<float> blob;
    json layers = json::array();
    for (const auto& layer : model.layers()) {
        const auto& s = layer.spec;
        json lj{{"name", s.name}, {"kind", to_string(s.kind)}};
        json params = json::object();
        switch (s.kind) {
            case LayerKind::conv2d:
                params = {{"out_channels", s.out_channels},
                          {"kernel", {s.kernel_h, s.kernel_w}},
                          {"stride", {s.stride_h, s.stride_w}},
                          {"padding", "valid"}};
                break;
            case LayerKind::maxpool2d:
                params = {{"window", {s.kernel_h, s.kernel_w}}, {"stride", {s.stride_h, s.stride_w}}};
                break;
            case LayerKind::dense:
                params = {{"out_features", s.out_features}};
                break;
            default:
                break;
        }
        if (s.kind == LayerKind::conv2d || s.kind == LayerKind::dense) {
            params["activation"] = s.activation == FusedActivation::relu ? "relu" : "none";
            lj["weights"] = {{"offset", blob.size()}, {"count", layer.weights.size()}};
            for (double w : layer.weights) blob.push_back(static_cast<float>(w));
            lj["bias"] = {{"offset", blob.size()}, {"count", layer.bias.size()}};
            for (double b : layer.bias) blob.push_back(static_cast<float>(b));
        }
        lj["params"] = params;
        layers.push_back(std::move(lj));
    }
    doc["layers"] = std::move(layers);

    std::ofstream m(manifest_path);
    if (!m) throw IoError("cannot write " + manifest_path.string());
    m << doc.dump(2) << "\n";

    std::ofstream b(blob_path, std::ios::binary);
    if (!b) throw IoError("cannot write " + blob_path.string());
    for (float f : blob) {
        auto bits = std::bit_cast<std::uint32_t>(f);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        char bytes[4];
        std::memcpy(bytes, &bits, 4);
        b.write(bytes, 4);
    }
}

// ---------------------------------------------------------------------------
// Evaluation

Tensor eval_layer(const Layer& layer, const Tensor& input, bool pre_activation) {
    if (input.shape != layer.input_shape) {
        throw ContractViolation("layer '" + layer.spec.name + "' expects input " + to_string(layer.input_shape) +
                                ", got " + to_string(input.shape));
    }
    Tensor out;
    switch (layer.spec.kind) {
        case LayerKind::conv2d: out = eval_conv2d(layer, input); break;
        case LayerKind::maxpool2d: out = eval_maxpool(layer, input); break;
        case LayerKind::dense: out = eval_dense(layer, input); break;
        case LayerKind::relu:
            out = input;
            relu_inplace(out.data);
            break;
        case LayerKind::flatten: out = Tensor(layer.output_shape, input.data); break;
        case LayerKind::softmax: out = eval_softmax(input); break;
    }
    if (!pre_activation && layer.spec.activation == FusedActivation::relu) relu_inplace(out.data);
    return out;
}

std::size_t argmax(std::span<const double> values) {
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

namespace {

std::vector<std::size_t> resolve_capture(const Model& model, std::span<const std::string> capture) {
    std::vector<std::size_t> idx;
    for (const auto& name : capture) {
        const auto i = model.find_layer(name);
        if (i == Model::npos) throw ConfigError("capture layer '" + name + "' is not in model '" + model.name() + "'");
        idx.push_back(i);
    }
    return idx;
}

// Runs the network, invoking sink(layer_index, flattened_values) for every
// layer in `wanted`.
template <typename Sink>
Tensor run_network(const Model& model, const Tensor& input, const std::vector<char>& wanted, CaptureMode mode,
                   Sink&& sink) {
    if (input.data.size() != element_count(model.input_shape())) {
        throw ContractViolation("input has " + std::to_string(input.data.size()) + " elements; model '" +
                                model.name() + "' expects " + to_string(model.input_shape()));
    }
    Tensor x(model.input_shape(), input.data);
    const auto& layers = model.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& layer = layers[i];
        const bool fused = layer.spec.activation != FusedActivation::none;
        if (fused && wanted[i] && mode == CaptureMode::pre_activation) {
            x = eval_layer(layer, x, true);
            check_finite(x, layer.spec.name);
            sink(i, x.data);
            relu_inplace(x.data);
        } else {
            x = eval_layer(layer, x, false);
            check_finite(x, layer.spec.name);
            if (wanted[i]) sink(i, x.data);
        }
    }
    return x;
}

}  // namespace

ForwardResult forward(const Model& model, const Tensor& input, std::span<const std::string> capture,
                      CaptureMode mode) {
    const auto idx = resolve_capture(model, capture);
    std::vector<char> wanted(model.layers().size(), 0);
    for (auto i : idx) wanted[i] = 1;

    ForwardResult result;
    result.scores = run_network(model, input, wanted, mode, [&](std::size_t i, const std::vector<double>& v) {
        result.captured[model.layers()[i].spec.name] = Tensor({v.size()}, v);
    });
    return result;
}

ActivationMatrix ActivationMatrix::select_rows(std::span<const char> keep) const {
    expects(keep.size() == rows(), "row mask length must equal the row count");
    ActivationMatrix out;
    out.layer_name = layer_name;
    out.cols = cols;
    for (std::size_t r = 0; r < rows(); ++r) {
        if (!keep[r]) continue;
        out.sample_ids.push_back(sample_ids[r]);
        const auto src = row(r);
        out.values.insert(out.values.end(), src.begin(), src.end());
    }
    return out;
}

DatasetPrediction predict_dataset(const Model& model, const LabeledDataset& dataset,
                                  std::span<const std::string> capture, CaptureMode mode, std::size_t jobs) {
    const auto idx = resolve_capture(model, capture);
    std::vector<char> wanted(model.layers().size(), 0);
    // slot[i] = position of layer i's matrix in `mats`
    std::vector<std::size_t> slot(model.layers().size(), Model::npos);
    const std::size_t n = dataset.size();

    std::vector<ActivationMatrix> mats;
    for (auto i : idx) {
        if (wanted[i]) continue;
        wanted[i] = 1;
        slot[i] = mats.size();
        ActivationMatrix m;
        m.layer_name = model.layers()[i].spec.name;
        m.cols = element_count(model.layers()[i].output_shape);
        m.values.assign(n * m.cols, 0.0);
        m.sample_ids.reserve(n);
        for (const auto& s : dataset.samples) m.sample_ids.push_back(s.id);
        mats.push_back(std::move(m));
    }

    DatasetPrediction out;
    out.predicted.assign(n, 0);
    out.correct.assign(n, 0);
    out.max_probability.assign(n, 0.0);

    parallel_for(n, jobs, [&](std::size_t s) {
        const auto& sample = dataset.samples[s];
        try {
            const Tensor scores = run_network(model, sample.pixels, wanted, mode,
                                              [&](std::size_t i, const std::vector<double>& v) {
                                                  auto& m = mats[slot[i]];
                                                  std::copy(v.begin(), v.end(), m.values.begin() + s * m.cols);
                                              });
            const auto best = argmax(scores.data);
            out.predicted[s] = static_cast<ClassLabel>(best);
            out.max_probability[s] = scores.data[best];
            out.correct[s] = out.predicted[s] == sample.class_label;
        } catch (const Error& e) {
            throw Error(e.kind(), "sample " + std::to_string(s) + " ('" + sample.id + "'): " + e.what());
        }
    });

    for (auto& m : mats) {
        auto name = m.layer_name;
        out.activations.emplace(std::move(name), std::move(m));
    }
    return out;
}

}  // namespace fga
