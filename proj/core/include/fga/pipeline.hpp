#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fga/dataset.hpp"
#include "fga/inference.hpp"
#include "fga/rules.hpp"
#include "fga/tree.hpp"

namespace fga {

struct DatasetSource {
    enum class Format { idx, patch_dir };
    Format format = Format::idx;
    std::filesystem::path images;  // idx
    std::filesystem::path labels;  // idx
    std::filesystem::path dir;     // patch_dir
};

/// A feature as written in a config: class tokens are resolved against the
/// dataset's class names once it is loaded.
struct FeatureDecl {
    std::string name;
    std::vector<std::string> classes;
};

struct ExperimentConfig {
    std::filesystem::path model_path;  // may contain "{fold}" for k-fold runs
    std::optional<std::filesystem::path> labeling_model_path;
    DatasetSource train;
    std::optional<DatasetSource> test;
    std::vector<std::string> capture_layers;
    CaptureMode capture_mode = CaptureMode::post_activation;
    std::vector<FeatureDecl> features;
    std::vector<std::string> class_names;  // optional fixed mapping for named classes
    TreeParams tree;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "fga-out";
    bool filter_test_misclassified = false;
    std::vector<std::string> formats{"csv", "md", "svg"};
    std::size_t kfold_k = 7;
    std::size_t sweep_min = 2;
    std::size_t sweep_max = 4;
    std::size_t jobs = 1;
    std::string effective_json;  // the validated config, for the run manifest
};

std::vector<FeatureSpec> resolve_features(std::span<const FeatureDecl> decls, std::span<const std::string> class_names);

// ---------------------------------------------------------------------------
// Reports

struct LayerOutcome {
    std::string layer_name;
    std::size_t tree_nodes = 0;
    std::size_t tree_depth = 0;
    std::size_t pure_rules = 0;
    std::optional<ScoredRule> top;
};

enum class FeatureStatus { ok, skipped_no_positives, no_rule, error };

struct FeatureReport {
    FeatureSpec feature;
    std::string classes_text;  // "{0,6,8,9}"
    FeatureStatus status = FeatureStatus::ok;
    std::optional<ScoredRule> chosen;
    std::vector<LayerOutcome> candidates;  // configured layer order
    std::string error;                     // set with FeatureStatus::error
};

/// Column means over features that produced a rule. Precision skips features
/// whose test precision is undefined; `precision_excluded` counts them.
struct AverageRow {
    std::optional<double> train_recall;
    std::optional<double> test_precision;
    std::optional<double> test_recall;
    std::optional<double> length;
    std::size_t features_averaged = 0;
    std::size_t precision_excluded = 0;
};

AverageRow average_row(std::span<const FeatureReport> features);

struct FgaReport {
    std::vector<FeatureReport> features;
    AverageRow average;
    std::vector<std::string> class_names;
    std::size_t train_rows = 0;
    std::size_t train_rows_kept = 0;  // after dropping misclassified inputs
    std::size_t test_rows = 0;
    std::size_t test_rows_evaluated = 0;
};

struct KFoldSummary {
    AverageRow mean;     // mean of the per-fold average rows
    AverageRow max2min;  // max - min of the per-fold average rows
};

KFoldSummary summarize_folds(std::span<const AverageRow> folds);

struct KFoldReport {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<FgaReport> folds;
    std::vector<std::size_t> test_sizes;
    KFoldSummary summary;
};

struct SweepRow {
    FeatureReport report;
};

struct SweepReport {
    std::vector<SweepRow> rows;  // sorted by train recall, descending
    std::size_t min_size = 0;
    std::size_t max_size = 0;
};

// ---------------------------------------------------------------------------
// Stages

/// Train/test activations captured once and reused for any number of feature
/// sets.
struct PreparedData {
    std::vector<std::string> layers;
    std::vector<std::string> class_names;
    std::vector<ClassLabel> train_labels;  // kept rows only
    std::vector<ClassLabel> test_labels;   // evaluated rows
    std::vector<ActivationMatrix> train;   // per layer, kept rows only
    std::vector<ActivationMatrix> test;    // per layer
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
};

/// Rescales pixels when the dataset's ingestion scale differs from what the
/// model's preprocessing descriptor expects. No-op when they agree.
void conform_to_model(LabeledDataset& dataset, const Model& model);

PreparedData prepare(const Model& model, const LabeledDataset& train, const LabeledDataset& test,
                     std::span<const std::string> layers, CaptureMode mode, bool filter_test_misclassified,
                     std::size_t jobs);

FgaReport analyze_features(const PreparedData& data, std::span<const FeatureSpec> features, const TreeParams& params,
                           std::size_t jobs);

LabeledDataset load_dataset(const DatasetSource& source, DatasetRole role, std::span<const std::string> class_names,
                            const std::string& id_prefix);

FgaReport run_fga(const ExperimentConfig& config);
KFoldReport run_kfold(const ExperimentConfig& config, std::size_t k);
SweepReport run_sweep(const ExperimentConfig& config, std::size_t min_size, std::size_t max_size);

/// Sorts sweep rows: defined train recall first, descending; ties by name.
void sort_sweep_rows(std::vector<SweepRow>& rows);

/// model_path with "{fold}" replaced by the fold index.
std::filesystem::path fold_model_path(const std::filesystem::path& templ, std::size_t fold);

}  // namespace fga
