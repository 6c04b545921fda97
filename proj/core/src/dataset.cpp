#include "fga/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fga/error.hpp"
#include "fga/parallel.hpp"

namespace fga {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 2051;
constexpr std::uint32_t kIdxLabelsMagic = 2049;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t at, const std::filesystem::path& path) {
    if (bytes.size() < at + 4) throw TruncationError(path.string() + ": header truncated");
    return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
           (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
}

std::optional<long> parse_int(std::string_view s) {
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        DatasetRole role, const std::string& id_prefix) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);

    if (read_be32(img, 0, images_path) != kIdxImagesMagic)
        throw FormatError(images_path.string() + ": bad magic for an IDX image file (expected 2051)");
    if (read_be32(lab, 0, labels_path) != kIdxLabelsMagic)
        throw FormatError(labels_path.string() + ": bad magic for an IDX label file (expected 2049)");

    const std::size_t n_img = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);
    const std::size_t n_lab = read_be32(lab, 4, labels_path);
    if (n_img != n_lab) {
        throw ConsistencyError("IDX image count " + std::to_string(n_img) + " does not match label count " +
                               std::to_string(n_lab));
    }
    if (n_img == 0) throw FormatError(images_path.string() + ": dataset is empty");
    const std::size_t pixels = rows * cols;
    if (img.size() < 16 + n_img * pixels) throw TruncationError(images_path.string() + ": image payload truncated");
    if (lab.size() < 8 + n_lab) throw TruncationError(labels_path.string() + ": label payload truncated");

    LabeledDataset ds;
    ds.role = role;
    ds.pixel_scale = 1.0 / 255.0;
    ds.samples.resize(n_img);
    int max_label = 0;
    for (std::size_t i = 0; i < n_img; ++i) {
        auto& s = ds.samples[i];
        s.id = id_prefix + std::to_string(i);
        s.class_label = lab[8 + i];
        max_label = std::max(max_label, s.class_label);
        std::vector<double> data(pixels);
        const auto* src = img.data() + 16 + i * pixels;
        for (std::size_t p = 0; p < pixels; ++p) data[p] = src[p] / 255.0;
        s.pixels = Tensor({rows, cols}, std::move(data));
    }
    ds.class_names = numeric_class_names(static_cast<std::size_t>(max_label) + 1);
    return ds;
}

void write_idx_images(const std::filesystem::path& path, std::span<const std::uint8_t> pixels, std::size_t count,
                      std::size_t rows, std::size_t cols) {
    expects(pixels.size() == count * rows * cols, "pixel buffer size must equal count*rows*cols");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    put_be32(out, kIdxImagesMagic);
    put_be32(out, static_cast<std::uint32_t>(count));
    put_be32(out, static_cast<std::uint32_t>(rows));
    put_be32(out, static_cast<std::uint32_t>(cols));
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    put_be32(out, kIdxLabelsMagic);
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

// ---------------------------------------------------------------------------
// PNM

namespace {

std::size_t pnm_header_value(const std::vector<std::uint8_t>& bytes, std::size_t& pos,
                             const std::filesystem::path& path) {
    for (;;) {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        if (pos < bytes.size() && bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        v = v * 10 + (bytes[pos] - '0');
        ++pos;
        ++digits;
    }
    if (digits == 0) throw FormatError(path.string() + ": malformed PNM header");
    return v;
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw FormatError(path.string() + ": not a binary PGM/PPM file");
    const std::size_t channels = bytes[1] == '5' ? 1 : 3;
    std::size_t pos = 2;
    const auto w = pnm_header_value(bytes, pos, path);
    const auto h = pnm_header_value(bytes, pos, path);
    const auto maxval = pnm_header_value(bytes, pos, path);
    if (maxval != 255) throw FormatError(path.string() + ": only 8-bit images (maxval 255) are supported");
    ++pos;  // single whitespace before raster
    const std::size_t n = w * h * channels;
    if (bytes.size() < pos + n) throw TruncationError(path.string() + ": raster truncated");

    if (channels == 1) {
        std::vector<double> data(n);
        for (std::size_t i = 0; i < n; ++i) data[i] = bytes[pos + i] / 255.0;
        return Tensor({h, w}, std::move(data));
    }
    // interleaved RGB -> planar [3, H, W]
    Tensor t({3, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                t.data[(c * h + y) * w + x] = bytes[pos + (y * w + x) * 3 + c] / 255.0;
    return t;
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
    const bool gray = image.rank() == 2;
    expects(gray || (image.rank() == 3 && image.shape[0] == 3), "write_pnm expects [H, W] or [3, H, W]");
    const std::size_t h = gray ? image.shape[0] : image.shape[1];
    const std::size_t w = gray ? image.shape[1] : image.shape[2];
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << (gray ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
    auto to_byte = [](double v) {
        return static_cast<char>(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    };
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (gray) {
                out.put(to_byte(image.data[y * w + x]));
            } else {
                for (std::size_t c = 0; c < 3; ++c) out.put(to_byte(image.data[(c * h + y) * w + x]));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Patches

std::size_t patch_count(std::size_t height, std::size_t width, std::size_t size, std::size_t stride) {
    expects(stride >= 1, "stride must be at least 1");
    expects(size >= 1 && size <= height && size <= width, "patch size must not exceed the image bounds");
    return ((width - size) / stride + 1) * ((height - size) / stride + 1);
}

std::string patch_id(const std::string& image_id, std::size_t row, std::size_t col) {
    return image_id + ":" + std::to_string(row) + ":" + std::to_string(col);
}

std::vector<Patch> extract_patches(const Tensor& image, std::size_t size, std::size_t stride) {
    expects(image.rank() == 2 || image.rank() == 3, "extract_patches expects an [H, W] or [C, H, W] image");
    const std::size_t channels = image.rank() == 3 ? image.shape[0] : 1;
    const std::size_t h = image.shape[image.rank() - 2];
    const std::size_t w = image.shape[image.rank() - 1];
    const std::size_t total = patch_count(h, w, size, stride);

    const Shape patch_shape = image.rank() == 3 ? Shape{channels, size, size} : Shape{size, size};
    std::vector<Patch> patches;
    patches.reserve(total);
    for (std::size_t r = 0; r + size <= h; r += stride) {
        for (std::size_t c = 0; c + size <= w; c += stride) {
            Patch p{r, c, Tensor(patch_shape)};
            auto* dst = p.pixels.data.data();
            for (std::size_t ch = 0; ch < channels; ++ch) {
                for (std::size_t y = 0; y < size; ++y) {
                    const auto* src = image.data.data() + (ch * h + r + y) * w + c;
                    std::copy(src, src + size, dst);
                    dst += size;
                }
            }
            patches.push_back(std::move(p));
        }
    }
    return patches;
}

LabeledDataset confidence_filter(const Model& model, std::span<const UnlabeledSample> samples, double threshold,
                                 std::vector<std::string> class_names, std::size_t jobs) {
    if (!model.ends_in_softmax())
        throw ConfigError("confidence filtering needs a model ending in softmax; '" + model.name() + "' does not");
    expects(threshold > 0.0 && threshold < 1.0, "confidence threshold must lie in (0, 1)");

    const std::size_t n = samples.size();
    std::vector<ClassLabel> label(n, 0);
    std::vector<char> keep(n, 0);
    parallel_for(n, jobs, [&](std::size_t i) {
        const auto scores = forward(model, samples[i].pixels).scores;
        const auto best = argmax(scores.data);
        label[i] = static_cast<ClassLabel>(best);
        keep[i] = scores.data[best] > threshold;
    });

    LabeledDataset out;
    out.class_names = class_names.empty() ? numeric_class_names(model.class_count()) : std::move(class_names);
    for (std::size_t i = 0; i < n; ++i) {
        if (keep[i]) out.samples.push_back({samples[i].id, samples[i].pixels, label[i]});
    }
    return out;
}

std::string patch_file_name(const std::string& id, std::size_t rank) {
    std::string name = id;
    std::replace(name.begin(), name.end(), ':', '_');
    std::replace(name.begin(), name.end(), '/', '_');
    return name + (rank == 3 ? ".ppm" : ".pgm");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

ClassLabel resolve_class(const std::string& text, std::span<const std::string> class_names) {
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        if (class_names[i] == text) return static_cast<ClassLabel>(i);
    }
    if (auto v = parse_int(text); v && *v >= 0 && static_cast<std::size_t>(*v) < class_names.size())
        return static_cast<ClassLabel>(*v);
    throw ConfigError("unknown class '" + text + "'");
}

}  // namespace

std::vector<UnlabeledSample> load_patch_directory(const std::filesystem::path& dir,
                                                  std::vector<std::string>& class_names) {
    const auto manifest = dir / "manifest.csv";
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot open " + manifest.string());
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"id", "class_label"})
        throw FormatError(manifest.string() + ": header must be 'id,class_label'");

    std::vector<std::pair<std::string, std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 2) throw FormatError(manifest.string() + ": expected 2 columns in '" + line + "'");
        rows.emplace_back(std::move(cells[0]), std::move(cells[1]));
    }

    if (class_names.empty()) {
        std::set<std::string> names;
        bool numeric = true;
        long max_label = -1;
        for (const auto& [id, label] : rows) {
            if (label.empty()) continue;
            names.insert(label);
            auto v = parse_int(label);
            if (!v || *v < 0) numeric = false;
            else max_label = std::max(max_label, *v);
        }
        if (numeric) {
            class_names = numeric_class_names(static_cast<std::size_t>(max_label + 1));
        } else {
            class_names.assign(names.begin(), names.end());
        }
    }

    std::set<std::string> seen;
    std::vector<UnlabeledSample> out;
    out.reserve(rows.size());
    for (const auto& [id, label] : rows) {
        if (!seen.insert(id).second) throw ConsistencyError(manifest.string() + ": duplicate id '" + id + "'");
        UnlabeledSample s;
        s.id = id;
        auto file = dir / patch_file_name(id, 2);
        if (!std::filesystem::exists(file)) file = dir / patch_file_name(id, 3);
        s.pixels = read_pnm(file);
        if (!label.empty()) s.class_label = resolve_class(label, class_names);
        out.push_back(std::move(s));
    }
    return out;
}

LabeledDataset load_labeled_patch_directory(const std::filesystem::path& dir, DatasetRole role,
                                            std::vector<std::string> class_names) {
    auto samples = load_patch_directory(dir, class_names);
    if (samples.empty()) throw FormatError(dir.string() + ": patch directory is empty");
    LabeledDataset ds;
    ds.role = role;
    ds.class_names = std::move(class_names);
    for (auto& s : samples) {
        if (!s.class_label) throw FormatError(dir.string() + ": sample '" + s.id + "' has no class label");
        ds.samples.push_back({std::move(s.id), std::move(s.pixels), *s.class_label});
    }
    const auto& shape = ds.samples.front().pixels.shape;
    for (const auto& s : ds.samples) {
        if (s.pixels.shape != shape) throw ConsistencyError(dir.string() + ": samples have differing shapes");
    }
    return ds;
}

void write_patch_directory(const std::filesystem::path& dir, std::span<const UnlabeledSample> samples,
                           std::span<const std::string> class_names) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.csv");
    if (!manifest) throw IoError("cannot write " + (dir / "manifest.csv").string());
    manifest << "id,class_label\n";
    for (const auto& s : samples) {
        write_pnm(dir / patch_file_name(s.id, s.pixels.rank()), s.pixels);
        manifest << s.id << ",";
        if (s.class_label) {
            const auto c = static_cast<std::size_t>(*s.class_label);
            manifest << (c < class_names.size() ? class_names[c] : std::to_string(c));
        }
        manifest << "\n";
    }
}

// ---------------------------------------------------------------------------
// Features

bool FeatureSpec::contains(ClassLabel c) const { return std::binary_search(classes.begin(), classes.end(), c); }

FeatureSpec make_feature(std::string name, std::vector<ClassLabel> classes) {
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    return {std::move(name), std::move(classes)};
}

std::vector<FeatureSpec> parse_features(const std::string& json_text, std::span<const std::string> class_names) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("feature list is not valid JSON: ") + e.what());
    }
    if (!doc.is_array()) throw ConfigError("feature list must be a JSON array of {name, classes}");
    std::vector<FeatureSpec> out;
    for (const auto& f : doc) {
        if (!f.is_object() || !f.contains("name") || !f.contains("classes"))
            throw ConfigError("each feature needs 'name' and 'classes'");
        std::vector<ClassLabel> classes;
        for (const auto& c : f.at("classes")) {
            if (c.is_number_integer()) {
                classes.push_back(c.get<ClassLabel>());
            } else if (c.is_string()) {
                classes.push_back(resolve_class(c.get<std::string>(), class_names));
            } else {
                throw ConfigError("feature classes must be integers or class names");
            }
        }
        if (classes.empty()) throw ConfigError("feature '" + f.at("name").get<std::string>() + "' has no classes");
        out.push_back(make_feature(f.at("name").get<std::string>(), std::move(classes)));
    }
    return out;
}

std::vector<FeatureSpec> load_features(const std::filesystem::path& path, std::span<const std::string> class_names) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_features(ss.str(), class_names);
}

FeatureLabeling::FeatureLabeling(std::vector<std::string> feature_names, std::vector<std::vector<char>> columns)
    : names_(std::move(feature_names)), columns_(std::move(columns)) {
    expects(names_.size() == columns_.size(), "one presence column per feature");
}

std::vector<char> presence(std::span<const ClassLabel> labels, const FeatureSpec& feature) {
    std::vector<char> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = feature.contains(labels[i]) ? 1 : 0;
    return out;
}

FeatureLabeling label_features(const LabeledDataset& dataset, std::span<const FeatureSpec> features) {
    std::vector<ClassLabel> labels;
    labels.reserve(dataset.size());
    for (const auto& s : dataset.samples) labels.push_back(s.class_label);

    std::vector<std::string> names;
    std::vector<std::vector<char>> columns;
    for (const auto& f : features) {
        for (auto c : f.classes) {
            if (!dataset.has_class(c))
                throw ConfigError("feature '" + f.name + "' references unknown class " + std::to_string(c));
        }
        names.push_back(f.name);
        columns.push_back(presence(labels, f));
    }
    return FeatureLabeling(std::move(names), std::move(columns));
}

// ---------------------------------------------------------------------------
// Folds

std::size_t FoldAssignment::fold_size(std::size_t f) const {
    return static_cast<std::size_t>(std::count(fold.begin(), fold.end(), f));
}

std::vector<char> FoldAssignment::mask(std::size_t f) const {
    std::vector<char> m(fold.size());
    for (std::size_t i = 0; i < fold.size(); ++i) m[i] = fold[i] == f;
    return m;
}

FoldAssignment kfold(std::size_t sample_count, std::size_t k, std::uint64_t seed) {
    expects(k >= 2 && k <= sample_count, "k-fold requires 2 <= k <= sample count");
    std::vector<std::size_t> order(sample_count);
    std::iota(order.begin(), order.end(), std::size_t{0});

    // Fisher-Yates over raw mt19937_64 output with rejection sampling, so the
    // permutation does not depend on the standard library's distributions.
    std::mt19937_64 rng(seed);
    for (std::size_t i = sample_count - 1; i > 0; --i) {
        const std::uint64_t bound = i + 1;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t draw;
        do {
            draw = rng();
        } while (draw >= limit);
        std::swap(order[i], order[draw % bound]);
    }

    FoldAssignment out;
    out.k = k;
    out.fold.assign(sample_count, 0);
    for (std::size_t pos = 0; pos < sample_count; ++pos) out.fold[order[pos]] = pos % k;
    return out;
}

std::vector<FeatureSpec> enumerate_feature_combos(std::span<const std::string> class_names, std::size_t min_size,
                                                  std::size_t max_size) {
    const std::size_t n = class_names.size();
    expects(n > 0, "class domain must be nonempty");
    expects(min_size >= 1 && min_size <= max_size && max_size <= n, "combination sizes must satisfy 1 <= min <= max <= |domain|");

    std::vector<FeatureSpec> out;
    for (std::size_t r = min_size; r <= max_size; ++r) {
        std::vector<std::size_t> pick(r);
        std::iota(pick.begin(), pick.end(), std::size_t{0});
        for (;;) {
            FeatureSpec spec;
            for (std::size_t j = 0; j < r; ++j) {
                if (j) spec.name += ",";
                spec.name += class_names[pick[j]];
                spec.classes.push_back(static_cast<ClassLabel>(pick[j]));
            }
            out.push_back(std::move(spec));
            // advance to the next r-combination in lexicographic order
            std::size_t j = r;
            while (j > 0 && pick[j - 1] == n - r + j - 1) --j;
            if (j == 0) break;
            ++pick[j - 1];
            for (std::size_t t = j; t < r; ++t) pick[t] = pick[t - 1] + 1;
        }
    }
    return out;
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
    LabeledDataset out = a;
    if (b.class_names.size() > out.class_names.size()) out.class_names = b.class_names;
    std::set<std::string> ids;
    for (const auto& s : a.samples) ids.insert(s.id);
    for (const auto& s : b.samples) {
        if (!ids.insert(s.id).second) throw ConsistencyError("duplicate sample id '" + s.id + "' when pooling datasets");
        out.samples.push_back(s);
    }
    return out;
}

LabeledDataset subset(const LabeledDataset& dataset, std::span<const char> keep, DatasetRole role) {
    expects(keep.size() == dataset.size(), "subset mask length must equal dataset size");
    LabeledDataset out;
    out.class_names = dataset.class_names;
    out.pixel_scale = dataset.pixel_scale;
    out.role = role;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i]) out.samples.push_back(dataset.samples[i]);
    }
    return out;
}

}  // namespace fga
