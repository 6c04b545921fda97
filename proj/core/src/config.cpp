#include "fga/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "fga/error.hpp"

namespace fga {

using nlohmann::json;

std::size_t edit_distance(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

namespace {

const std::map<std::string, std::vector<std::string>>& schema() {
    static const std::map<std::string, std::vector<std::string>> s{
        {"", {"model", "labeling_model", "train", "test", "capture_layers", "capture_mode", "features",
              "features_file", "class_names", "tree", "seed", "output_dir", "evaluation", "report", "kfold", "sweep"}},
        {"train", {"format", "images", "labels", "dir"}},
        {"test", {"format", "images", "labels", "dir"}},
        {"tree", {"max_depth", "min_samples_split", "criterion"}},
        {"evaluation", {"filter_test_misclassified"}},
        {"report", {"formats"}},
        {"kfold", {"k"}},
        {"sweep", {"min_size", "max_size"}},
    };
    return s;
}

std::string qualified(const std::string& section, const std::string& key) {
    return section.empty() ? key : section + "." + key;
}

void reject_unknown(const json& obj, const std::string& section) {
    const auto& valid = schema().at(section);
    for (const auto& [key, value] : obj.items()) {
        if (std::find(valid.begin(), valid.end(), key) != valid.end()) {
            if (schema().count(key) && section.empty()) {
                if (!value.is_object()) throw ConfigError("field '" + key + "' must be an object");
                reject_unknown(value, key);
            }
            continue;
        }
        const auto nearest = std::min_element(valid.begin(), valid.end(), [&](const auto& a, const auto& b) {
            return edit_distance(key, a) < edit_distance(key, b);
        });
        throw ConfigError("unknown config key '" + qualified(section, key) + "' (did you mean '" +
                          qualified(section, *nearest) + "'?)");
    }
}

void apply_override(json& doc, const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "' must look like key=value");
    const std::string key = text.substr(0, eq);
    const std::string raw = text.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* node = &doc;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        auto& child = (*node)[parts[i]];
        if (child.is_null()) child = json::object();
        if (!child.is_object()) throw ConfigError("override '" + key + "': '" + parts[i] + "' is not an object");
        node = &child;
    }
    (*node)[parts.back()] = std::move(value);
}

template <typename T>
T get_field(const json& obj, const char* key, const std::string& where) {
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        if (!obj.contains(key)) throw ConfigError("missing required field '" + qualified(where, key) + "'");
        throw ConfigError("field '" + qualified(where, key) + "' has the wrong type");
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

DatasetSource parse_source(const json& j, const std::string& where, const std::filesystem::path& base) {
    DatasetSource src;
    const auto format = j.value("format", std::string("idx"));
    if (format == "idx") {
        src.format = DatasetSource::Format::idx;
        src.images = resolve(base, get_field<std::string>(j, "images", where));
        src.labels = resolve(base, get_field<std::string>(j, "labels", where));
    } else if (format == "patch_dir") {
        src.format = DatasetSource::Format::patch_dir;
        src.dir = resolve(base, get_field<std::string>(j, "dir", where));
    } else {
        throw ConfigError("field '" + where + ".format' must be \"idx\" or \"patch_dir\"");
    }
    return src;
}

std::vector<FeatureDecl> parse_feature_decls(const json& arr, const std::string& where) {
    if (!arr.is_array()) throw ConfigError("field '" + where + "' must be a list of {name, classes}");
    std::vector<FeatureDecl> out;
    for (const auto& f : arr) {
        if (!f.is_object()) throw ConfigError("each entry of '" + where + "' must be an object");
        FeatureDecl d;
        d.name = get_field<std::string>(f, "name", where);
        const auto& classes = f.contains("classes") ? f.at("classes") : json();
        if (!classes.is_array() || classes.empty())
            throw ConfigError("feature '" + d.name + "' needs a nonempty 'classes' list");
        for (const auto& c : classes) {
            if (c.is_number_integer()) d.classes.push_back(std::to_string(c.get<long>()));
            else if (c.is_string()) d.classes.push_back(c.get<std::string>());
            else throw ConfigError("feature '" + d.name + "': classes must be integers or names");
        }
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir,
                                   std::span<const std::string> overrides) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& o : overrides) apply_override(doc, o);
    reject_unknown(doc, "");

    ExperimentConfig c;
    c.model_path = resolve(base_dir, get_field<std::string>(doc, "model", ""));
    if (doc.contains("labeling_model"))
        c.labeling_model_path = resolve(base_dir, get_field<std::string>(doc, "labeling_model", ""));
    if (!doc.contains("train")) throw ConfigError("missing required field 'train'");
    c.train = parse_source(doc.at("train"), "train", base_dir);
    if (doc.contains("test")) c.test = parse_source(doc.at("test"), "test", base_dir);

    if (!doc.contains("capture_layers")) throw ConfigError("missing required field 'capture_layers'");
    c.capture_layers = get_field<std::vector<std::string>>(doc, "capture_layers", "");
    if (c.capture_layers.empty()) throw ConfigError("field 'capture_layers' must not be empty");

    const auto mode = doc.value("capture_mode", std::string("post_activation"));
    if (mode == "post_activation") c.capture_mode = CaptureMode::post_activation;
    else if (mode == "pre_activation") c.capture_mode = CaptureMode::pre_activation;
    else throw ConfigError("field 'capture_mode' must be \"post_activation\" or \"pre_activation\"");

    if (doc.contains("features") && doc.contains("features_file"))
        throw ConfigError("give either 'features' or 'features_file', not both");
    if (doc.contains("features")) {
        c.features = parse_feature_decls(doc.at("features"), "features");
    } else if (doc.contains("features_file")) {
        const auto path = resolve(base_dir, get_field<std::string>(doc, "features_file", ""));
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open features_file " + path.string());
        try {
            c.features = parse_feature_decls(json::parse(in), "features_file");
        } catch (const json::exception& e) {
            throw ConfigError("features_file " + path.string() + " is not valid JSON: " + e.what());
        }
    } else {
        throw ConfigError("missing required field 'features'");
    }
    if (c.features.empty()) throw ConfigError("field 'features' must not be empty");

    if (doc.contains("class_names")) c.class_names = get_field<std::vector<std::string>>(doc, "class_names", "");

    if (doc.contains("tree")) {
        const auto& t = doc.at("tree");
        if (t.contains("max_depth") && !t.at("max_depth").is_null()) {
            const auto d = get_field<long>(t, "max_depth", "tree");
            if (d < 1) throw ConfigError("field 'tree.max_depth' must be a positive integer or null");
            c.tree.max_depth = static_cast<std::size_t>(d);
        }
        if (t.contains("min_samples_split")) {
            const auto m = get_field<long>(t, "min_samples_split", "tree");
            if (m < 2) throw ConfigError("field 'tree.min_samples_split' must be at least 2");
            c.tree.min_samples_split = static_cast<std::size_t>(m);
        }
        if (t.value("criterion", std::string("gini")) != "gini")
            throw ConfigError("field 'tree.criterion' supports only \"gini\"");
    }

    if (doc.contains("seed")) c.seed = get_field<std::uint64_t>(doc, "seed", "");
    if (doc.contains("output_dir")) c.output_dir = resolve(base_dir, get_field<std::string>(doc, "output_dir", ""));
    else c.output_dir = base_dir / "fga-out";
    if (doc.contains("evaluation"))
        c.filter_test_misclassified = doc.at("evaluation").value("filter_test_misclassified", false);
    if (doc.contains("report") && doc.at("report").contains("formats")) {
        c.formats = get_field<std::vector<std::string>>(doc.at("report"), "formats", "report");
        for (const auto& f : c.formats) {
            if (f != "csv" && f != "md" && f != "svg")
                throw ConfigError("report format '" + f + "' is not one of csv, md, svg");
        }
    }
    if (doc.contains("kfold") && doc.at("kfold").contains("k"))
        c.kfold_k = get_field<std::size_t>(doc.at("kfold"), "k", "kfold");
    if (doc.contains("sweep")) {
        const auto& s = doc.at("sweep");
        if (s.contains("min_size")) c.sweep_min = get_field<std::size_t>(s, "min_size", "sweep");
        if (s.contains("max_size")) c.sweep_max = get_field<std::size_t>(s, "max_size", "sweep");
    }
    c.effective_json = doc.dump(2);
    return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path.parent_path(), overrides);
}

}  // namespace fga
