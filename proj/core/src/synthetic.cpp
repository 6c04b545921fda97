#include "fga/synthetic.hpp"

#include <random>
#include <vector>

#include <json.hpp>

#include "fga/dataset.hpp"
#include "fga/report.hpp"

namespace fga {

namespace {

constexpr std::size_t kSide = 4;
constexpr std::size_t kPixels = kSide * kSide;
constexpr std::size_t kClasses = 10;

// fc1 neurons past the per-class ones each sum the pixels of one feature.
const std::vector<std::vector<std::size_t>> kFeatureClasses{{0, 6, 8, 9}, {1, 4, 7}, {5, 7}, {2, 3, 5}};
const std::vector<const char*> kFeatureNames{"loop", "vertical_line", "top_bar", "curve"};

Layer dense(std::string name, std::size_t out, FusedActivation act, std::vector<double> w) {
    Layer l;
    l.spec.name = std::move(name);
    l.spec.kind = LayerKind::dense;
    l.spec.out_features = out;
    l.spec.activation = act;
    l.weights = std::move(w);
    l.bias.assign(out, 0.0);
    return l;
}

Layer plain(std::string name, LayerKind kind) {
    Layer l;
    l.spec.name = std::move(name);
    l.spec.kind = kind;
    return l;
}

struct Images {
    std::vector<std::uint8_t> pixels;
    std::vector<std::uint8_t> labels;
};

void add_image(Images& out, std::mt19937_64& rng, std::size_t label, std::size_t decoy_pixel) {
    std::uniform_int_distribution<int> low(0, 30), high(150, 220), loud(230, 255);
    for (std::size_t p = 0; p < kPixels; ++p) {
        int v = low(rng);
        if (p == label) v = high(rng);
        if (p == decoy_pixel) v = loud(rng);
        out.pixels.push_back(static_cast<std::uint8_t>(v));
    }
    out.labels.push_back(static_cast<std::uint8_t>(label));
}

}  // namespace

Model planted_model() {
    const std::size_t hidden = kClasses + kFeatureClasses.size();
    std::vector<double> w1(hidden * kPixels, 0.0);
    for (std::size_t c = 0; c < kClasses; ++c) w1[c * kPixels + c] = 1.0;
    for (std::size_t f = 0; f < kFeatureClasses.size(); ++f)
        for (auto c : kFeatureClasses[f]) w1[(kClasses + f) * kPixels + c] = 1.0;
    std::vector<double> w2(kClasses * hidden, 0.0);
    for (std::size_t c = 0; c < kClasses; ++c) w2[c * hidden + c] = 8.0;

    std::vector<Layer> layers;
    layers.push_back(plain("flatten", LayerKind::flatten));
    layers.push_back(dense("fc1", hidden, FusedActivation::relu, std::move(w1)));
    layers.push_back(dense("fc2", kClasses, FusedActivation::none, std::move(w2)));
    layers.push_back(plain("softmax", LayerKind::softmax));
    return Model("planted", {kSide, kSide}, {1.0 / 255.0, 0.0}, kClasses, std::move(layers));
}

std::filesystem::path write_planted_experiment(const std::filesystem::path& dir, const PlantedOptions& options) {
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(options.seed);

    Images train, test;
    for (std::size_t i = 0; i < options.train_per_class; ++i)
        for (std::size_t c = 0; c < kClasses; ++c) add_image(train, rng, c, kPixels);
    for (std::size_t i = 0; i < options.decoys_per_class; ++i)
        for (std::size_t c = 0; c < kClasses; ++c) add_image(train, rng, c, (c + 1 + i) % kClasses);
    for (std::size_t i = 0; i < options.test_per_class; ++i)
        for (std::size_t c = 0; c < kClasses; ++c) add_image(test, rng, c, kPixels);

    write_idx_images(dir / "train-images.idx", train.pixels, train.labels.size(), kSide, kSide);
    write_idx_labels(dir / "train-labels.idx", train.labels);
    write_idx_images(dir / "test-images.idx", test.pixels, test.labels.size(), kSide, kSide);
    write_idx_labels(dir / "test-labels.idx", test.labels);
    save_model(planted_model(), dir / "model.json");

    nlohmann::json features = nlohmann::json::array();
    for (std::size_t f = 0; f < kFeatureClasses.size(); ++f)
        features.push_back({{"name", kFeatureNames[f]}, {"classes", kFeatureClasses[f]}});
    write_file_atomic(dir / "features.json", features.dump(2) + "\n");

    const nlohmann::json config = {
        {"model", "model.json"},
        {"train", {{"format", "idx"}, {"images", "train-images.idx"}, {"labels", "train-labels.idx"}}},
        {"test", {{"format", "idx"}, {"images", "test-images.idx"}, {"labels", "test-labels.idx"}}},
        {"capture_layers", {"fc1", "fc2"}},
        {"features_file", "features.json"},
        {"seed", options.seed},
        {"output_dir", "out"},
    };
    const auto config_path = dir / "config.json";
    write_file_atomic(config_path, config.dump(2) + "\n");
    return config_path;
}

}  // namespace fga
