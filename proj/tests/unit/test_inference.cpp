#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "bundle.hpp"
#include "fga/error.hpp"
#include "fga/inference.hpp"

using namespace fga;
using nlohmann::json;

namespace {

Layer make_layer(std::string name, LayerKind kind) {
    Layer l;
    l.spec.name = std::move(name);
    l.spec.kind = kind;
    return l;
}

Layer make_dense(std::string name, std::size_t out, std::vector<double> w, std::vector<double> b,
                 FusedActivation act = FusedActivation::none) {
    auto l = make_layer(std::move(name), LayerKind::dense);
    l.spec.out_features = out;
    l.spec.activation = act;
    l.weights = std::move(w);
    l.bias = std::move(b);
    return l;
}

Layer make_conv(std::string name, std::size_t out_ch, std::size_t k, std::vector<double> w, std::vector<double> b,
                FusedActivation act = FusedActivation::none) {
    auto l = make_layer(std::move(name), LayerKind::conv2d);
    l.spec.out_channels = out_ch;
    l.spec.kernel_h = l.spec.kernel_w = k;
    l.spec.activation = act;
    l.weights = std::move(w);
    l.bias = std::move(b);
    return l;
}

Layer make_pool(std::string name, std::size_t window) {
    auto l = make_layer(std::move(name), LayerKind::maxpool2d);
    l.spec.kernel_h = l.spec.kernel_w = window;
    l.spec.stride_h = l.spec.stride_w = window;
    return l;
}

Model identity_model() {
    return Model("id", {2}, {}, 2, {make_dense("fc", 2, {1, 0, 0, 1}, {0, 0})});
}

json lenet_manifest(std::size_t& blob_size) {
    json layers = json::array();
    std::size_t off = 0;
    auto extent = [&](std::size_t n) {
        json e = {{"offset", off}, {"count", n}};
        off += n;
        return e;
    };
    layers.push_back({{"name", "conv1"}, {"kind", "conv2d"},
                      {"params", {{"out_channels", 6}, {"kernel", 5}, {"activation", "relu"}}},
                      {"weights", extent(6 * 1 * 25)}, {"bias", extent(6)}});
    layers.push_back({{"name", "pool1"}, {"kind", "maxpool2d"}, {"params", {{"window", 2}}}});
    layers.push_back({{"name", "conv2"}, {"kind", "conv2d"},
                      {"params", {{"out_channels", 16}, {"kernel", 5}, {"activation", "relu"}}},
                      {"weights", extent(16 * 6 * 25)}, {"bias", extent(16)}});
    layers.push_back({{"name", "pool2"}, {"kind", "maxpool2d"}, {"params", {{"window", 2}}}});
    layers.push_back({{"name", "flatten"}, {"kind", "flatten"}});
    layers.push_back({{"name", "fc1"}, {"kind", "dense"}, {"params", {{"out_features", 120}, {"activation", "relu"}}},
                      {"weights", extent(120 * 256)}, {"bias", extent(120)}});
    layers.push_back({{"name", "fc2"}, {"kind", "dense"}, {"params", {{"out_features", 84}, {"activation", "relu"}}},
                      {"weights", extent(84 * 120)}, {"bias", extent(84)}});
    layers.push_back({{"name", "fc3"}, {"kind", "dense"}, {"params", {{"out_features", 10}}},
                      {"weights", extent(10 * 84)}, {"bias", extent(10)}});
    layers.push_back({{"name", "softmax"}, {"kind", "softmax"}});
    blob_size = off;
    return {{"name", "lenet5"}, {"input_shape", {1, 28, 28}}, {"preprocessing", {{"scale", 1.0 / 255}, {"offset", 0}}},
            {"class_count", 10}, {"layers", layers}};
}

std::vector<float> random_floats(std::size_t n, std::uint64_t seed, float scale) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(-scale, scale);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

// Straightforward reference forward pass over the same layer list.
std::vector<double> reference_forward(const Model& m, std::vector<double> x) {
    Shape shape = m.input_shape();
    for (const auto& l : m.layers()) {
        const auto& s = l.spec;
        std::vector<double> y;
        switch (s.kind) {
            case LayerKind::dense: {
                const std::size_t in = x.size();
                for (std::size_t o = 0; o < s.out_features; ++o) {
                    double acc = l.bias[o];
                    for (std::size_t i = 0; i < in; ++i) acc += l.weights[o * in + i] * x[i];
                    y.push_back(s.activation == FusedActivation::relu ? std::max(0.0, acc) : acc);
                }
                break;
            }
            case LayerKind::conv2d: {
                const std::size_t C = shape[0], H = shape[1], W = shape[2];
                const std::size_t OH = (H - s.kernel_h) / s.stride_h + 1, OW = (W - s.kernel_w) / s.stride_w + 1;
                for (std::size_t oc = 0; oc < s.out_channels; ++oc)
                    for (std::size_t r = 0; r < OH; ++r)
                        for (std::size_t c = 0; c < OW; ++c) {
                            double acc = l.bias[oc];
                            for (std::size_t ic = 0; ic < C; ++ic)
                                for (std::size_t i = 0; i < s.kernel_h; ++i)
                                    for (std::size_t j = 0; j < s.kernel_w; ++j)
                                        acc += l.weights[((oc * C + ic) * s.kernel_h + i) * s.kernel_w + j] *
                                               x[(ic * H + r * s.stride_h + i) * W + c * s.stride_w + j];
                            y.push_back(s.activation == FusedActivation::relu ? std::max(0.0, acc) : acc);
                        }
                break;
            }
            case LayerKind::maxpool2d: {
                const std::size_t C = shape[0], H = shape[1], W = shape[2];
                const std::size_t OH = (H - s.kernel_h) / s.stride_h + 1, OW = (W - s.kernel_w) / s.stride_w + 1;
                for (std::size_t ch = 0; ch < C; ++ch)
                    for (std::size_t r = 0; r < OH; ++r)
                        for (std::size_t c = 0; c < OW; ++c) {
                            double best = -INFINITY;
                            for (std::size_t i = 0; i < s.kernel_h; ++i)
                                for (std::size_t j = 0; j < s.kernel_w; ++j)
                                    best = std::max(best, x[(ch * H + r * s.stride_h + i) * W + c * s.stride_w + j]);
                            y.push_back(best);
                        }
                break;
            }
            case LayerKind::relu:
                for (double v : x) y.push_back(std::max(0.0, v));
                break;
            case LayerKind::flatten:
                y = x;
                break;
            case LayerKind::softmax: {
                double z = 0;
                for (double v : x) z += std::exp(v);
                for (double v : x) y.push_back(std::exp(v) / z);
                break;
            }
        }
        x = std::move(y);
        shape = l.output_shape;
    }
    return x;
}

}  // namespace

TEST_CASE("eval_layer on single-layer definitions") {
    SUBCASE("relu") {
        auto l = make_layer("r", LayerKind::relu);
        l.input_shape = l.output_shape = {2};
        CHECK(eval_layer(l, Tensor({2}, {-1, 2})).data == std::vector<double>{0, 2});
    }
    SUBCASE("maxpool 2x2 stride 2") {
        const Model m("p", {1, 2, 2}, {}, 1, {make_pool("pool", 2)});
        CHECK(eval_layer(m.layers()[0], Tensor({1, 2, 2}, {1, 2, 3, 4})).data == std::vector<double>{4});
    }
    SUBCASE("softmax of zeros") {
        auto l = make_layer("s", LayerKind::softmax);
        l.input_shape = l.output_shape = {2};
        const auto out = eval_layer(l, Tensor({2}, {0, 0}));
        CHECK(out.data[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(out.data[1] == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("1x1 convolution") {
        const Model m("c", {1, 2, 2}, {}, 4, {make_conv("conv", 1, 1, {2}, {0}), make_layer("f", LayerKind::flatten)});
        CHECK(eval_layer(m.layers()[0], Tensor({1, 2, 2}, {1, 2, 3, 4})).data == std::vector<double>{2, 4, 6, 8});
    }
    SUBCASE("shape mismatch is a contract violation") {
        const auto m = identity_model();
        CHECK_THROWS_AS(eval_layer(m.layers()[0], Tensor({3}, {1, 2, 3})), ContractViolation);
    }
}

TEST_CASE("fused activation separates pre and post values") {
    const Model m("d", {2}, {}, 2, {make_dense("fc", 2, {1, 0, 0, 1}, {0, 0}, FusedActivation::relu)});
    const std::vector<std::string> cap{"fc"};
    const Tensor in({2}, {3, -1});
    CHECK(forward(m, in, cap, CaptureMode::post_activation).captured.at("fc").data == std::vector<double>{3, 0});
    CHECK(forward(m, in, cap, CaptureMode::pre_activation).captured.at("fc").data == std::vector<double>{3, -1});
}

TEST_CASE("forward through an identity model") {
    const auto m = identity_model();
    CHECK(forward(m, Tensor({2}, {3, -1})).scores.data == std::vector<double>{3, -1});
    const std::vector<std::string> bad{"nope"};
    CHECK_THROWS_AS(forward(m, Tensor({2}, {3, -1}), bad), ConfigError);
}

TEST_CASE("model validation") {
    CHECK_THROWS_AS(Model("m", {2}, {}, 3, {make_dense("fc", 2, {1, 0, 0, 1}, {0, 0})}), ValidationError);
    CHECK_THROWS_AS(Model("m", {2}, {}, 2, {make_dense("fc", 2, {1, 0, 0}, {0, 0})}), ValidationError);
    CHECK_THROWS_AS(Model("m", {2}, {}, 2,
                          {make_dense("fc", 2, {1, 0, 0, 1}, {0, 0}), make_dense("fc", 2, {1, 0, 0, 1}, {0, 0})}),
                    ValidationError);
    // 5x5 kernel does not fit a 2x2 input
    CHECK_THROWS_AS(Model("m", {1, 2, 2}, {}, 1, {make_conv("c", 1, 5, std::vector<double>(25), {0})}),
                    ValidationError);
    CHECK(identity_model().layer_width("fc") == 2);
    CHECK_THROWS_AS((void)identity_model().layer_width("other"), ConfigError);
}

TEST_CASE("loading FGA-MF manifests") {
    const auto dir = fixtures::temp_dir("inference");

    SUBCASE("LeNet-5-class manifest") {
        std::size_t n = 0;
        auto manifest = lenet_manifest(n);
        const auto path = fixtures::write_bundle(dir, "lenet", manifest, random_floats(n, 1, 0.2f));
        const auto m = load_model(path);
        CHECK(m.class_count() == 10);
        CHECK(m.layers().size() == 9);
        CHECK(m.layer_width("conv1") == 6 * 24 * 24);
        CHECK(m.layer_width("pool2") == 256);
        CHECK(m.layer_width("fc2") == 84);
        CHECK(m.ends_in_softmax());
        CHECK(m.preprocessing().scale == doctest::Approx(1.0 / 255));
    }

    SUBCASE("identity dense layer") {
        json man = {{"input_shape", {2}}, {"class_count", 2},
                    {"layers", {{{"name", "fc"}, {"kind", "dense"}, {"params", {{"out_features", 2}}},
                                 {"weights", {{"offset", 0}, {"count", 4}}}, {"bias", {{"offset", 4}, {"count", 2}}}}}}};
        const auto m = load_model(fixtures::write_bundle(dir, "id", man, {1, 0, 0, 1, 0, 0}));
        CHECK(forward(m, Tensor({2}, {0.25, -7})).scores.data == std::vector<double>{0.25, -7});
    }

    SUBCASE("weight extent shorter than implied is a truncation error") {
        json man = {{"input_shape", {4}}, {"class_count", 10},
                    {"layers", {{{"name", "fc"}, {"kind", "dense"}, {"params", {{"out_features", 10}}},
                                 {"weights", {{"offset", 0}, {"count", 36}}}, {"bias", {{"offset", 36}, {"count", 10}}}}}}};
        CHECK_THROWS_AS(load_model(fixtures::write_bundle(dir, "short", man, std::vector<float>(46))), TruncationError);
    }

    SUBCASE("extent past the end of the blob is a truncation error") {
        json man = {{"input_shape", {2}}, {"class_count", 2},
                    {"layers", {{{"name", "fc"}, {"kind", "dense"}, {"params", {{"out_features", 2}}},
                                 {"weights", {{"offset", 0}, {"count", 4}}}, {"bias", {{"offset", 4}, {"count", 2}}}}}}};
        CHECK_THROWS_AS(load_model(fixtures::write_bundle(dir, "trunc", man, {1, 0, 0, 1})), TruncationError);
    }

    SUBCASE("bad magic and version") {
        json man = {{"format", "onnx"}, {"input_shape", {2}}, {"class_count", 2}, {"layers", json::array()}};
        CHECK_THROWS_AS(load_model(fixtures::write_bundle(dir, "magic", man, {})), FormatError);
        man["format"] = "fga-mf";
        man["version"] = 2;
        CHECK_THROWS_AS(load_model(fixtures::write_bundle(dir, "ver", man, {})), FormatError);
    }

    SUBCASE("incompatible consecutive layers") {
        json man = {{"input_shape", {1, 2, 2}}, {"class_count", 1},
                    {"layers", {{{"name", "c"}, {"kind", "conv2d"}, {"params", {{"out_channels", 1}, {"kernel", 3}}},
                                 {"weights", {{"offset", 0}, {"count", 9}}}, {"bias", {{"offset", 9}, {"count", 1}}}}}}};
        CHECK_THROWS_AS(load_model(fixtures::write_bundle(dir, "shape", man, std::vector<float>(10))),
                        ValidationError);
    }

    SUBCASE("save and load round trip") {
        std::size_t n = 0;
        const auto man = lenet_manifest(n);
        const auto m = load_model(fixtures::write_bundle(dir, "lenet", man, random_floats(n, 2, 0.2f)));
        save_model(m, dir / "copy.json");
        const auto back = load_model(dir / "copy.json");
        REQUIRE(back.layers().size() == m.layers().size());
        for (std::size_t i = 0; i < m.layers().size(); ++i) {
            CHECK(back.layers()[i].weights == m.layers()[i].weights);
            CHECK(back.layers()[i].bias == m.layers()[i].bias);
            CHECK(back.layers()[i].output_shape == m.layers()[i].output_shape);
        }
    }
}

TEST_CASE("forward agrees with a reference implementation") {
    const auto dir = fixtures::temp_dir("inference-ref");
    std::size_t n = 0;
    const auto man = lenet_manifest(n);
    const auto m = load_model(fixtures::write_bundle(dir, "lenet", man, random_floats(n, 3, 0.3f)));
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> px(0.0, 1.0);
    for (int t = 0; t < 5; ++t) {
        Tensor in({1, 28, 28});
        for (auto& v : in.data) v = px(rng);
        const auto got = forward(m, in).scores.data;
        const auto want = reference_forward(m, in.data);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
        CHECK(std::accumulate(got.begin(), got.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
        for (double v : got) CHECK(v >= 0.0);
        // any input with the same element count is accepted
        CHECK(forward(m, Tensor({28, 28}, in.data)).scores.data == got);
    }
}

TEST_CASE("predict_dataset") {
    const auto dir = fixtures::temp_dir("inference-pred");
    std::size_t n = 0;
    const auto man = lenet_manifest(n);
    const auto m = load_model(fixtures::write_bundle(dir, "lenet", man, random_floats(n, 4, 0.3f)));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> px(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, 9);
    LabeledDataset ds;
    ds.class_names = numeric_class_names(10);
    for (int i = 0; i < 100; ++i) {
        Tensor in({28, 28});
        for (auto& v : in.data) v = px(rng);
        ds.samples.push_back({"s" + std::to_string(i), in, cls(rng)});
    }
    const std::vector<std::string> cap{"fc2"};
    const auto seq = predict_dataset(m, ds, cap, CaptureMode::post_activation, 1);
    const auto par = predict_dataset(m, ds, cap, CaptureMode::post_activation, 4);
    CHECK(seq.predicted == par.predicted);
    CHECK(seq.activations.at("fc2").values == par.activations.at("fc2").values);
    CHECK(seq.activations.at("fc2").rows() == 100);
    CHECK(seq.activations.at("fc2").cols == 84);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto scores = reference_forward(m, ds.samples[i].pixels.data);
        const auto want = static_cast<ClassLabel>(std::max_element(scores.begin(), scores.end()) - scores.begin());
        CHECK(seq.predicted[i] == want);
        CHECK(static_cast<bool>(seq.correct[i]) == (want == ds.samples[i].class_label));
    }

    SUBCASE("labels equal to predictions are all correct") {
        auto relabeled = ds;
        for (std::size_t i = 0; i < ds.size(); ++i) relabeled.samples[i].class_label = seq.predicted[i];
        const auto p = predict_dataset(m, relabeled, {}, CaptureMode::post_activation, 2);
        CHECK(std::all_of(p.correct.begin(), p.correct.end(), [](char c) { return c != 0; }));
    }
}
