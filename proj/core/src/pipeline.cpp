#include "fga/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>

#include "fga/error.hpp"
#include "fga/parallel.hpp"

namespace fga {

std::vector<FeatureSpec> resolve_features(std::span<const FeatureDecl> decls, std::span<const std::string> class_names) {
    std::vector<FeatureSpec> out;
    for (const auto& d : decls) {
        std::vector<ClassLabel> classes;
        for (const auto& token : d.classes) {
            auto it = std::find(class_names.begin(), class_names.end(), token);
            if (it == class_names.end())
                throw ConfigError("feature '" + d.name + "' references unknown class '" + token + "'");
            classes.push_back(static_cast<ClassLabel>(it - class_names.begin()));
        }
        if (classes.empty()) throw ConfigError("feature '" + d.name + "' has no classes");
        out.push_back(make_feature(d.name, std::move(classes)));
    }
    return out;
}

namespace {

std::string classes_text(const FeatureSpec& f, std::span<const std::string> class_names) {
    std::string out = "{";
    for (std::size_t i = 0; i < f.classes.size(); ++i) {
        if (i) out += ",";
        const auto c = static_cast<std::size_t>(f.classes[i]);
        out += c < class_names.size() ? class_names[c] : std::to_string(c);
    }
    return out + "}";
}

struct Accumulator {
    double sum = 0.0;
    std::size_t n = 0;
    void add(const std::optional<double>& v) {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    std::optional<double> mean() const { return n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt; }
};

}  // namespace

AverageRow average_row(std::span<const FeatureReport> features) {
    Accumulator r_tr, p_te, r_te, len;
    AverageRow row;
    for (const auto& f : features) {
        if (f.status != FeatureStatus::ok || !f.chosen) continue;
        const auto& m = f.chosen->metrics;
        ++row.features_averaged;
        r_tr.add(m.train_recall);
        p_te.add(m.test_precision);
        if (!m.test_precision) ++row.precision_excluded;
        r_te.add(m.test_recall);
        len.add(static_cast<double>(m.length));
    }
    row.train_recall = r_tr.mean();
    row.test_precision = p_te.mean();
    row.test_recall = r_te.mean();
    row.length = len.mean();
    return row;
}

KFoldSummary summarize_folds(std::span<const AverageRow> folds) {
    KFoldSummary s;
    auto stat = [&](auto member, std::optional<double>& mean, std::optional<double>& spread) {
        Accumulator acc;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& f : folds) {
            const auto& v = f.*member;
            acc.add(v);
            if (v) {
                lo = std::min(lo, *v);
                hi = std::max(hi, *v);
            }
        }
        mean = acc.mean();
        spread = acc.n ? std::optional<double>(hi - lo) : std::nullopt;
    };
    stat(&AverageRow::train_recall, s.mean.train_recall, s.max2min.train_recall);
    stat(&AverageRow::test_precision, s.mean.test_precision, s.max2min.test_precision);
    stat(&AverageRow::test_recall, s.mean.test_recall, s.max2min.test_recall);
    stat(&AverageRow::length, s.mean.length, s.max2min.length);
    for (const auto& f : folds) {
        s.mean.features_averaged += f.features_averaged;
        s.mean.precision_excluded += f.precision_excluded;
    }
    return s;
}

void conform_to_model(LabeledDataset& dataset, const Model& model) {
    const auto& pre = model.preprocessing();
    const double ds = dataset.pixel_scale;
    if (pre.offset == 0.0 && std::abs(pre.scale - ds) <= 1e-12 * std::abs(ds)) return;
    for (auto& s : dataset.samples) {
        for (double& v : s.pixels.data) v = (v / ds) * pre.scale + pre.offset;
    }
    dataset.pixel_scale = pre.scale;
}

PreparedData prepare(const Model& model, const LabeledDataset& train, const LabeledDataset& test,
                     std::span<const std::string> layers, CaptureMode mode, bool filter_test_misclassified,
                     std::size_t jobs) {
    expects(!layers.empty(), "at least one capture layer is required");
    PreparedData out;
    out.layers.assign(layers.begin(), layers.end());
    out.class_names = train.class_names.size() >= test.class_names.size() ? train.class_names : test.class_names;
    out.train_rows = train.size();
    out.test_rows = test.size();

    auto tr = predict_dataset(model, train, layers, mode, jobs);
    auto te = predict_dataset(model, test, layers, mode, jobs);

    for (std::size_t i = 0; i < train.size(); ++i)
        if (tr.correct[i]) out.train_labels.push_back(train.samples[i].class_label);
    std::vector<char> test_keep(test.size(), 1);
    if (filter_test_misclassified) test_keep = te.correct;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (test_keep[i]) out.test_labels.push_back(test.samples[i].class_label);

    for (const auto& name : layers) {
        out.train.push_back(tr.activations.at(name).select_rows(tr.correct));
        if (filter_test_misclassified) out.test.push_back(te.activations.at(name).select_rows(test_keep));
        else out.test.push_back(std::move(te.activations.at(name)));
    }
    return out;
}

FgaReport analyze_features(const PreparedData& data, std::span<const FeatureSpec> features, const TreeParams& params,
                           std::size_t jobs) {
    const std::size_t n_layers = data.layers.size();
    const std::size_t n_features = features.size();

    for (const auto& f : features) {
        for (auto c : f.classes) {
            if (c < 0 || static_cast<std::size_t>(c) >= data.class_names.size())
                throw ConfigError("feature '" + f.name + "' references unknown class " + std::to_string(c));
        }
    }

    FgaReport report;
    report.class_names = data.class_names;
    report.train_rows = data.train_rows;
    report.train_rows_kept = data.train_labels.size();
    report.test_rows = data.test_rows;
    report.test_rows_evaluated = data.test_labels.size();

    std::vector<std::vector<char>> train_presence, test_presence;
    report.features.resize(n_features);
    for (std::size_t f = 0; f < n_features; ++f) {
        train_presence.push_back(presence(data.train_labels, features[f]));
        test_presence.push_back(presence(data.test_labels, features[f]));
        auto& fr = report.features[f];
        fr.feature = features[f];
        fr.classes_text = classes_text(features[f], data.class_names);
        if (std::none_of(train_presence[f].begin(), train_presence[f].end(), [](char c) { return c != 0; }))
            fr.status = FeatureStatus::skipped_no_positives;
        fr.candidates.resize(n_layers);
    }

    std::vector<std::optional<ColumnIndex>> indexes(n_layers);
    if (data.train_labels.size() > 0) {
        parallel_for(n_layers, jobs, [&](std::size_t l) { indexes[l].emplace(data.train[l]); });
    }

    auto evaluate_candidate = [&](std::size_t f, std::size_t l, LayerOutcome& cand) {
        const auto tree = build_tree(*indexes[l], train_presence[f], params, features[f].name);
        cand.tree_nodes = tree.nodes.size();
        cand.tree_depth = tree.depth();
        const auto rules = extract_pure_rules(tree);
        cand.pure_rules = rules.size();
        auto top = select_top_rule(rules);
        if (!top) return;

        ScoredRule scored{std::move(*top), {}};
        auto& m = scored.metrics;
        m.length = scored.rule.length();
        m.train = evaluate_rule(scored.rule, data.train[l], train_presence[f]);
        m.test = evaluate_rule(scored.rule, data.test[l], test_presence[f]);
        m.train_recall = m.train.recall();
        m.test_precision = m.test.precision();
        m.test_recall = m.test.recall();
        cand.top = std::move(scored);
    };

    // A failure in one feature is recorded on its row; the others proceed.
    std::mutex error_mutex;
    parallel_for(n_features * n_layers, jobs, [&](std::size_t task) {
        const std::size_t f = task / n_layers, l = task % n_layers;
        auto& fr = report.features[f];
        auto& cand = fr.candidates[l];
        cand.layer_name = data.layers[l];
        if (fr.status == FeatureStatus::skipped_no_positives) return;
        try {
            evaluate_candidate(f, l, cand);
        } catch (const Error& e) {
            std::lock_guard lock(error_mutex);
            if (fr.error.empty()) fr.error = "layer '" + data.layers[l] + "': " + e.what();
        }
    });

    for (auto& fr : report.features) {
        if (fr.status == FeatureStatus::skipped_no_positives) continue;
        if (!fr.error.empty()) {
            fr.status = FeatureStatus::error;
            continue;
        }
        std::vector<ScoredRule> found;
        for (const auto& c : fr.candidates)
            if (c.top) found.push_back(*c.top);
        if (found.empty()) {
            fr.status = FeatureStatus::no_rule;
            continue;
        }
        fr.chosen = select_across_layers(found);
    }
    report.average = average_row(report.features);
    return report;
}

LabeledDataset load_dataset(const DatasetSource& source, DatasetRole role, std::span<const std::string> class_names,
                            const std::string& id_prefix) {
    LabeledDataset ds;
    if (source.format == DatasetSource::Format::idx) {
        ds = load_idx(source.images, source.labels, role, id_prefix);
        if (!class_names.empty()) {
            if (ds.class_names.size() > class_names.size())
                throw ConfigError("dataset labels exceed the configured class_names");
            ds.class_names.assign(class_names.begin(), class_names.end());
        }
    } else {
        ds = load_labeled_patch_directory(source.dir, role, {class_names.begin(), class_names.end()});
        if (!id_prefix.empty()) {
            for (auto& s : ds.samples) s.id = id_prefix + s.id;
        }
    }
    return ds;
}

namespace {

// Numeric class domains grow to cover every model output.
void widen_numeric_domain(LabeledDataset& ds, const Model& model) {
    if (ds.class_names == numeric_class_names(ds.class_names.size()) && ds.class_names.size() < model.class_count())
        ds.class_names = numeric_class_names(model.class_count());
}

struct LoadedData {
    LabeledDataset train;
    LabeledDataset test;
};

LoadedData load_train_test(const ExperimentConfig& config) {
    if (!config.test) throw ConfigError("missing required field 'test'");
    LoadedData d;
    d.train = load_dataset(config.train, DatasetRole::train, config.class_names, "train/");
    d.test = load_dataset(*config.test, DatasetRole::test, config.class_names, "test/");
    return d;
}

void check_layers(const Model& model, std::span<const std::string> layers) {
    for (const auto& l : layers) (void)model.layer_width(l);
}

}  // namespace

FgaReport run_fga(const ExperimentConfig& config) {
    const Model model = load_model(config.model_path);
    check_layers(model, config.capture_layers);
    auto data = load_train_test(config);
    widen_numeric_domain(data.train, model);
    widen_numeric_domain(data.test, model);
    conform_to_model(data.train, model);
    conform_to_model(data.test, model);

    const auto prepared = prepare(model, data.train, data.test, config.capture_layers, config.capture_mode,
                                  config.filter_test_misclassified, config.jobs);
    const auto features = resolve_features(config.features, prepared.class_names);
    return analyze_features(prepared, features, config.tree, config.jobs);
}

std::filesystem::path fold_model_path(const std::filesystem::path& templ, std::size_t fold) {
    auto s = templ.string();
    const std::string key = "{fold}";
    for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos)) {
        s.replace(pos, key.size(), std::to_string(fold));
    }
    return s;
}

KFoldReport run_kfold(const ExperimentConfig& config, std::size_t k) {
    std::vector<std::size_t> missing;
    for (std::size_t f = 0; f < k; ++f) {
        if (!std::filesystem::exists(fold_model_path(config.model_path, f))) missing.push_back(f);
    }
    if (!missing.empty()) {
        std::string list;
        for (auto f : missing) list += (list.empty() ? "" : ", ") + std::to_string(f);
        throw ConfigError("missing per-fold model for fold(s) " + list + " (template '" + config.model_path.string() +
                          "')");
    }

    auto pooled = load_dataset(config.train, DatasetRole::train, config.class_names, "train/");
    if (config.test)
        pooled = concat(pooled, load_dataset(*config.test, DatasetRole::test, config.class_names, "test/"));
    if (k < 2 || k > pooled.size()) throw ConfigError("k must lie in [2, " + std::to_string(pooled.size()) + "]");
    const auto folds = kfold(pooled, k, config.seed);

    KFoldReport report;
    report.k = k;
    report.seed = config.seed;
    std::vector<AverageRow> rows;
    for (std::size_t f = 0; f < k; ++f) {
        const Model model = load_model(fold_model_path(config.model_path, f));
        check_layers(model, config.capture_layers);
        const auto test_mask = folds.mask(f);
        std::vector<char> train_mask(test_mask.size());
        for (std::size_t i = 0; i < test_mask.size(); ++i) train_mask[i] = !test_mask[i];
        auto train = subset(pooled, train_mask, DatasetRole::train);
        auto test = subset(pooled, test_mask, DatasetRole::test);
        widen_numeric_domain(train, model);
        widen_numeric_domain(test, model);
        conform_to_model(train, model);
        conform_to_model(test, model);

        const auto prepared = prepare(model, train, test, config.capture_layers, config.capture_mode,
                                      config.filter_test_misclassified, config.jobs);
        const auto features = resolve_features(config.features, prepared.class_names);
        report.folds.push_back(analyze_features(prepared, features, config.tree, config.jobs));
        report.test_sizes.push_back(test.size());
        rows.push_back(report.folds.back().average);
    }
    report.summary = summarize_folds(rows);
    return report;
}

void sort_sweep_rows(std::vector<SweepRow>& rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        auto recall = [](const SweepRow& r) -> std::optional<double> {
            if (!r.report.chosen) return std::nullopt;
            return r.report.chosen->metrics.train_recall;
        };
        const auto ra = recall(a), rb = recall(b);
        if (ra.has_value() != rb.has_value()) return ra.has_value();
        if (ra && *ra != *rb) return *ra > *rb;
        return a.report.feature.name < b.report.feature.name;
    });
}

SweepReport run_sweep(const ExperimentConfig& config, std::size_t min_size, std::size_t max_size) {
    const Model model = load_model(config.model_path);
    check_layers(model, config.capture_layers);
    auto data = load_train_test(config);
    widen_numeric_domain(data.train, model);
    widen_numeric_domain(data.test, model);
    conform_to_model(data.train, model);
    conform_to_model(data.test, model);
    const auto prepared = prepare(model, data.train, data.test, config.capture_layers, config.capture_mode,
                                  config.filter_test_misclassified, config.jobs);

    const auto n = prepared.class_names.size();
    if (min_size < 1 || min_size > max_size || max_size > n)
        throw ConfigError("sweep sizes must satisfy 1 <= min <= max <= " + std::to_string(n));
    const auto combos = enumerate_feature_combos(prepared.class_names, min_size, max_size);
    auto fga = analyze_features(prepared, combos, config.tree, config.jobs);

    SweepReport report;
    report.min_size = min_size;
    report.max_size = max_size;
    for (auto& f : fga.features) report.rows.push_back({std::move(f)});
    sort_sweep_rows(report.rows);
    return report;
}

}  // namespace fga
