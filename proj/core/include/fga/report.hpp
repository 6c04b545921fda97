#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fga/pipeline.hpp"

namespace fga {

inline constexpr const char* kToolVersion = "1.0.0";

/// Writes `content` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// Creates `dir` if needed and proves it writable; throws IoError otherwise.
void ensure_writable_dir(const std::filesystem::path& dir);

/// "n/a" for undefined values.
std::string format_metric(const std::optional<double>& v, int decimals);

// Table renderers. Columns are feature, layer, R_tr, P_te, R_te, Len, rule.
std::string features_csv(const FgaReport& report);
std::string features_markdown(const FgaReport& report, const std::string& title);
std::string recall_chart_svg(const FgaReport& report, const std::string& title);

std::string sweep_csv(const SweepReport& report);
std::string sweep_markdown(const SweepReport& report);

std::string kfold_csv(const KFoldReport& report);
std::string kfold_markdown(const KFoldReport& report);

struct EmitResult {
    std::vector<std::filesystem::path> files;
    bool all_rows = true;  // every feature produced a row (ok, skipped, or no rule)
};

EmitResult emit_reports(const FgaReport& report, const std::filesystem::path& output_dir,
                        std::span<const std::string> formats);
EmitResult emit_sweep_reports(const SweepReport& report, const std::filesystem::path& output_dir,
                              std::span<const std::string> formats);
EmitResult emit_kfold_reports(const KFoldReport& report, const std::filesystem::path& output_dir,
                              std::span<const std::string> formats);

/// Reproducibility record: command, effective config, seed, tree params,
/// capture mode and tool version.
void write_run_manifest(const std::filesystem::path& output_dir, const std::string& command,
                        const ExperimentConfig& config);

}  // namespace fga
