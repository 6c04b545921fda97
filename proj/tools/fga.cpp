#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fga/config.hpp"
#include "fga/dataset.hpp"
#include "fga/error.hpp"
#include "fga/inference.hpp"
#include "fga/parallel.hpp"
#include "fga/pipeline.hpp"
#include "fga/report.hpp"

namespace fs = std::filesystem;

namespace {

int verbosity = 0;

void progress(const std::string& msg) {
    if (verbosity >= 0) std::cerr << "fga: " << msg << "\n";
}

int exit_code(fga::ErrorKind kind) {
    switch (kind) {
        case fga::ErrorKind::config: return 1;
        case fga::ErrorKind::data: return 2;
        case fga::ErrorKind::internal: return 3;
    }
    return 3;
}

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::size_t jobs = fga::default_jobs();
};

fga::ExperimentConfig load_config(const Common& c) {
    auto config = fga::parse_config(c.config, c.overrides);
    config.jobs = std::max<std::size_t>(1, c.jobs);
    return config;
}

void print_files(const fga::EmitResult& r) {
    for (const auto& f : r.files) std::cout << f.string() << "\n";
}

int finish(const fga::EmitResult& r) {
    print_files(r);
    if (!r.all_rows) {
        std::cerr << "fga: some features failed; see the error rows in the report\n";
        return 3;
    }
    return 0;
}

int cmd_analyze(const Common& c) {
    const auto config = load_config(c);
    fga::ensure_writable_dir(config.output_dir);
    progress("analyzing " + std::to_string(config.features.size()) + " feature(s) over " +
             std::to_string(config.capture_layers.size()) + " layer(s)");
    const auto report = fga::run_fga(config);
    const auto result = fga::emit_reports(report, config.output_dir, config.formats);
    fga::write_run_manifest(config.output_dir, "analyze", config);
    return finish(result);
}

int cmd_kfold(const Common& c, std::optional<std::size_t> k) {
    const auto config = load_config(c);
    fga::ensure_writable_dir(config.output_dir);
    const auto folds = k.value_or(config.kfold_k);
    progress("running " + std::to_string(folds) + "-fold study");
    const auto report = fga::run_kfold(config, folds);
    const auto result = fga::emit_kfold_reports(report, config.output_dir, config.formats);
    auto manifest_config = config;
    manifest_config.kfold_k = folds;
    fga::write_run_manifest(config.output_dir, "kfold", manifest_config);
    return finish(result);
}

int cmd_sweep(const Common& c, std::optional<std::size_t> min, std::optional<std::size_t> max) {
    const auto config = load_config(c);
    fga::ensure_writable_dir(config.output_dir);
    const auto lo = min.value_or(config.sweep_min), hi = max.value_or(config.sweep_max);
    progress("sweeping feature combinations of size " + std::to_string(lo) + "-" + std::to_string(hi));
    const auto report = fga::run_sweep(config, lo, hi);
    progress(std::to_string(report.rows.size()) + " combinations analyzed");
    const auto result = fga::emit_sweep_reports(report, config.output_dir, config.formats);
    auto manifest_config = config;
    manifest_config.sweep_min = lo;
    manifest_config.sweep_max = hi;
    fga::write_run_manifest(config.output_dir, "sweep", manifest_config);
    return finish(result);
}

struct PatchifyArgs {
    std::string image_dir;
    std::size_t size = 36;
    std::size_t stride = 32;
    std::string out;
    std::string labeling_model;
    std::string config;
    double threshold = 0.95;
    std::size_t jobs = fga::default_jobs();
};

int cmd_patchify(const PatchifyArgs& a) {
    if (!(a.threshold > 0.0 && a.threshold < 1.0)) throw fga::ConfigError("--threshold must lie in (0, 1)");
    std::string labeling = a.labeling_model;
    if (labeling.empty() && !a.config.empty()) {
        const auto config = fga::parse_config(a.config);
        if (config.labeling_model_path) labeling = config.labeling_model_path->string();
    }
    fga::ensure_writable_dir(a.out);

    std::vector<fs::path> images;
    std::error_code ec;
    fs::directory_iterator it(a.image_dir, ec);
    if (ec) throw fga::IoError("cannot read image directory " + a.image_dir + ": " + ec.message());
    for (const auto& entry : it) {
        const auto ext = entry.path().extension();
        if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) images.push_back(entry.path());
    }
    std::sort(images.begin(), images.end());
    if (images.empty()) throw fga::ConfigError("no .pgm or .ppm images in " + a.image_dir);

    std::vector<fga::UnlabeledSample> patches;
    for (const auto& path : images) {
        const auto image = fga::read_pnm(path);
        const auto id = path.stem().string();
        for (auto& p : fga::extract_patches(image, a.size, a.stride))
            patches.push_back({fga::patch_id(id, p.row, p.col), std::move(p.pixels), std::nullopt});
    }
    progress(std::to_string(patches.size()) + " patches from " + std::to_string(images.size()) + " image(s)");

    if (labeling.empty()) {
        fga::write_patch_directory(a.out, patches, {});
        std::cout << "patches " << patches.size() << "\n";
        return 0;
    }
    const auto model = fga::load_model(labeling);
    const auto kept = fga::confidence_filter(model, patches, a.threshold, {}, std::max<std::size_t>(1, a.jobs));
    std::vector<fga::UnlabeledSample> labeled;
    labeled.reserve(kept.size());
    for (const auto& s : kept.samples) labeled.push_back({s.id, s.pixels, s.class_label});
    fga::write_patch_directory(a.out, labeled, kept.class_names);
    std::cout << "patches " << patches.size() << "\nkept " << kept.size() << "\n";
    return 0;
}

int cmd_inspect(const std::string& path) {
    const auto model = fga::load_model(path);
    std::printf("model %s  input %s  classes %zu  preprocessing scale=%.9g offset=%.9g\n", model.name().c_str(),
                fga::to_string(model.input_shape()).c_str(), model.class_count(), model.preprocessing().scale,
                model.preprocessing().offset);
    std::printf("%-4s %-16s %-10s %-16s %10s %10s\n", "#", "layer", "kind", "output", "neurons", "params");
    std::size_t total_params = 0;
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const auto& l = model.layers()[i];
        const auto params = l.weights.size() + l.bias.size();
        total_params += params;
        std::printf("%-4zu %-16s %-10s %-16s %10zu %10zu\n", i, l.spec.name.c_str(),
                    std::string(fga::to_string(l.spec.kind)).c_str(), fga::to_string(l.output_shape).c_str(),
                    fga::element_count(l.output_shape), params);
    }
    std::printf("total parameters %zu\n", total_params);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Feature-guided rule extraction for feedforward networks"};
    app.require_subcommand(1);
    app.set_version_flag("--version", fga::kToolVersion);
    bool verbose = false, quiet = false;
    app.add_flag("-v,--verbose", verbose, "More progress output on stderr");
    app.add_flag("-q,--quiet", quiet, "No progress output");

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "Experiment config (JSON)")->required();
        sub->add_option("--set", common.overrides, "Override a config value, e.g. tree.max_depth=5");
        sub->add_option("--jobs", common.jobs, "Worker threads (default: logical cores)");
    };

    auto* analyze = app.add_subcommand("analyze", "Extract and evaluate one rule per feature");
    add_common(analyze);

    auto* kfold = app.add_subcommand("kfold", "k-fold study with per-fold models");
    add_common(kfold);
    std::optional<std::size_t> k;
    kfold->add_option("--k", k, "Number of folds (default: kfold.k or 7)");

    auto* sweep = app.add_subcommand("sweep", "Analyze every class combination in a size range");
    add_common(sweep);
    std::optional<std::size_t> min_size, max_size;
    sweep->add_option("--min", min_size, "Smallest combination size");
    sweep->add_option("--max", max_size, "Largest combination size");

    PatchifyArgs pa;
    auto* patchify = app.add_subcommand("patchify", "Cut images into overlapping square patches");
    patchify->add_option("--image-dir", pa.image_dir, "Directory of .pgm/.ppm images")->required();
    patchify->add_option("--size", pa.size, "Patch side in pixels")->check(CLI::PositiveNumber);
    patchify->add_option("--stride", pa.stride, "Offset between patches")->check(CLI::PositiveNumber);
    patchify->add_option("--out", pa.out, "Output patch directory")->required();
    patchify->add_option("--labeling-model", pa.labeling_model, "Keep only confidently classified patches");
    patchify->add_option("--config", pa.config, "Read labeling_model from this config");
    patchify->add_option("--threshold", pa.threshold, "Confidence threshold (exclusive)");
    patchify->add_option("--jobs", pa.jobs, "Worker threads");

    std::string model_path;
    auto* inspect = app.add_subcommand("inspect-model", "Print the layer table of a model");
    inspect->add_option("--model", model_path, "Model manifest")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    verbosity = quiet ? -1 : (verbose ? 1 : 0);

    try {
        if (*analyze) return cmd_analyze(common);
        if (*kfold) return cmd_kfold(common, k);
        if (*sweep) return cmd_sweep(common, min_size, max_size);
        if (*patchify) return cmd_patchify(pa);
        if (*inspect) return cmd_inspect(model_path);
    } catch (const fga::Error& e) {
        std::cerr << "fga: error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "fga: internal error: " << e.what() << "\n";
        return 3;
    }
    return 3;
}
