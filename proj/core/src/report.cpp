#include "fga/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fga/error.hpp"

namespace fga {

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void ensure_writable_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    const auto probe = dir / ".fga-write-probe";
    {
        std::ofstream out(probe);
        if (!out) throw IoError("output directory " + dir.string() + " is not writable");
    }
    std::filesystem::remove(probe, ec);
}

std::string format_metric(const std::optional<double>& v, int decimals) {
    if (!v) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
    return buf;
}

namespace {

constexpr int kCsvDecimals = 6;
constexpr int kMdDecimals = 2;

std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    return out + "\"";
}

std::string md_cell(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += "\\|";
        else out += c;
    }
    return out;
}

std::string status_text(const FeatureReport& f) {
    switch (f.status) {
        case FeatureStatus::skipped_no_positives: return "skipped: no positives";
        case FeatureStatus::no_rule: return "no rule";
        case FeatureStatus::error: return "error: " + f.error;
        case FeatureStatus::ok: break;
    }
    return {};
}

// feature, layer, R_tr, P_te, R_te, Len, rule
std::vector<std::string> feature_cells(const FeatureReport& f, int decimals, int rule_decimals) {
    if (f.status != FeatureStatus::ok || !f.chosen) return {f.feature.name, "", "", "", "", "", status_text(f)};
    const auto& m = f.chosen->metrics;
    return {f.feature.name,
            f.chosen->rule.layer_name,
            format_metric(m.train_recall, decimals),
            format_metric(m.test_precision, decimals),
            format_metric(m.test_recall, decimals),
            std::to_string(m.length),
            render_rule(f.chosen->rule, f.classes_text, rule_decimals)};
}

std::vector<std::string> average_cells(const AverageRow& a, int decimals, const std::string& label) {
    return {label,
            "",
            format_metric(a.train_recall, decimals),
            format_metric(a.test_precision, decimals),
            format_metric(a.test_recall, decimals),
            format_metric(a.length, decimals == kMdDecimals ? 1 : decimals),
            ""};
}

const std::vector<std::string> kColumns{"feature", "layer", "R_tr", "P_te", "R_te", "Len", "rule"};

std::string csv_line(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) line += ",";
        line += csv_cell(cells[i]);
    }
    return line + "\n";
}

std::string md_line(const std::vector<std::string>& cells) {
    std::string line = "|";
    for (const auto& c : cells) line += " " + md_cell(c) + " |";
    return line + "\n";
}

std::string md_header(const std::vector<std::string>& cols, const std::vector<bool>& numeric) {
    std::string out = md_line(cols) + "|";
    for (std::size_t i = 0; i < cols.size(); ++i) out += numeric[i] ? " ---: |" : " --- |";
    return out + "\n";
}

const std::vector<std::string> kMdColumns{"Feature", "Layer", "R_tr", "P_te", "R_te", "Len", "Rule"};
const std::vector<bool> kMdNumeric{false, false, true, true, true, true, false};

std::string feature_rows_markdown(std::span<const FeatureReport> features, bool mark_undefined_precision) {
    std::string out;
    for (const auto& f : features) {
        auto cells = feature_cells(f, kMdDecimals, kMdDecimals);
        if (mark_undefined_precision && f.status == FeatureStatus::ok && f.chosen && !f.chosen->metrics.test_precision)
            cells[3] += " †";
        out += md_line(cells);
    }
    return out;
}

std::string candidates_markdown(const FgaReport& report) {
    std::string out = "## Per-layer candidates\n\n";
    out += md_header({"Feature", "Layer", "Tree nodes", "Depth", "Pure rules", "Support", "R_tr", "P_te", "R_te", "Len"},
                     {false, false, true, true, true, true, true, true, true, true});
    for (const auto& f : report.features) {
        if (f.status == FeatureStatus::skipped_no_positives) continue;
        for (const auto& c : f.candidates) {
            std::vector<std::string> cells{f.feature.name, c.layer_name, std::to_string(c.tree_nodes),
                                           std::to_string(c.tree_depth), std::to_string(c.pure_rules)};
            if (c.top) {
                const auto& m = c.top->metrics;
                cells.push_back(std::to_string(c.top->rule.support_present));
                cells.push_back(format_metric(m.train_recall, kMdDecimals));
                cells.push_back(format_metric(m.test_precision, kMdDecimals));
                cells.push_back(format_metric(m.test_recall, kMdDecimals));
                cells.push_back(std::to_string(m.length));
            } else {
                cells.insert(cells.end(), {"-", "-", "-", "-", "-"});
            }
            out += md_line(cells);
        }
    }
    return out;
}

std::string class_mapping_markdown(std::span<const std::string> class_names) {
    std::string out = "Class mapping: ";
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(i) + "=" + class_names[i];
    }
    return out + "\n";
}

}  // namespace

std::string features_csv(const FgaReport& report) {
    std::string out = csv_line(kColumns);
    for (const auto& f : report.features) out += csv_line(feature_cells(f, kCsvDecimals, -1));
    out += csv_line(average_cells(report.average, kCsvDecimals, "Average"));
    return out;
}

std::string features_markdown(const FgaReport& report, const std::string& title) {
    std::ostringstream out;
    out << "# " << title << "\n\n";
    out << "Training inputs: " << report.train_rows << " (" << report.train_rows_kept
        << " kept after removing misclassified inputs). Test inputs evaluated: " << report.test_rows_evaluated << " of "
        << report.test_rows << ".\n\n";
    out << class_mapping_markdown(report.class_names) << "\n";
    out << md_header(kMdColumns, kMdNumeric);
    out << feature_rows_markdown(report.features, true);
    out << md_line(average_cells(report.average, kMdDecimals, "**Average**"));
    if (report.average.precision_excluded > 0) {
        out << "\n† Test precision undefined (no test input satisfies the rule); excluded from the average ("
            << report.average.precision_excluded << " feature(s)).\n";
    }
    out << "\n" << candidates_markdown(report);
    return out.str();
}

std::string recall_chart_svg(const FgaReport& report, const std::string& title) {
    const std::size_t n = report.features.size();
    const int bar = 14, gap = 10, group = 2 * bar + gap, left = 50, top = 40, height = 200;
    const int width = left + static_cast<int>(n) * group + 20;
    const int total_h = top + height + 110;
    std::ostringstream out;
    char buf[256];
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << total_h
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
    for (int pct = 0; pct <= 100; pct += 25) {
        const int y = top + height - pct * height / 100;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"#ddd\"/><text x=\"%d\" y=\"%d\" "
                      "text-anchor=\"end\">%d</text>\n",
                      left, y, width - 10, y, left - 4, y + 4, pct);
        out << buf;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto& f = report.features[i];
        const int x = left + static_cast<int>(i) * group + gap / 2;
        auto draw = [&](const std::optional<double>& v, int dx, const char* colour) {
            if (!v) return;
            const double h = *v * height / 100.0;
            std::snprintf(buf, sizeof buf, "<rect x=\"%d\" y=\"%.2f\" width=\"%d\" height=\"%.2f\" fill=\"%s\"/>\n",
                          x + dx, top + height - h, bar, h, colour);
            out << buf;
        };
        if (f.chosen) {
            draw(f.chosen->metrics.train_recall, 0, "#4c72b0");
            draw(f.chosen->metrics.test_recall, bar, "#dd8452");
        }
        std::snprintf(buf, sizeof buf, "<text transform=\"translate(%d,%d) rotate(60)\">", x + bar, top + height + 12);
        out << buf << f.feature.name << "</text>\n";
    }
    out << "<rect x=\"" << width - 150 << "\" y=\"8\" width=\"10\" height=\"10\" fill=\"#4c72b0\"/><text x=\""
        << width - 136 << "\" y=\"17\">R_tr</text>\n";
    out << "<rect x=\"" << width - 90 << "\" y=\"8\" width=\"10\" height=\"10\" fill=\"#dd8452\"/><text x=\""
        << width - 76 << "\" y=\"17\">R_te</text>\n";
    out << "</svg>\n";
    return out.str();
}

std::string sweep_csv(const SweepReport& report) {
    std::string out = csv_line(kColumns);
    for (const auto& r : report.rows) out += csv_line(feature_cells(r.report, kCsvDecimals, -1));
    return out;
}

std::string sweep_markdown(const SweepReport& report) {
    std::ostringstream out;
    out << "# Feature-combination sweep (sizes " << report.min_size << "-" << report.max_size << ")\n\n";
    out << report.rows.size() << " combinations, sorted by train recall (descending).\n\n";
    out << md_header(kMdColumns, kMdNumeric);
    for (const auto& r : report.rows) out << md_line(feature_cells(r.report, kMdDecimals, kMdDecimals));
    return out.str();
}

namespace {

std::vector<std::string> summary_cells(const std::string& label, const AverageRow& a, int decimals) {
    return {label, format_metric(a.train_recall, decimals), format_metric(a.test_precision, decimals),
            format_metric(a.test_recall, decimals), format_metric(a.length, decimals)};
}

}  // namespace

std::string kfold_csv(const KFoldReport& report) {
    std::string out = csv_line({"experiment", "R_tr", "P_te", "R_te", "Len"});
    for (std::size_t f = 0; f < report.folds.size(); ++f)
        out += csv_line(summary_cells(std::to_string(f), report.folds[f].average, kCsvDecimals));
    out += csv_line(summary_cells("Average", report.summary.mean, kCsvDecimals));
    out += csv_line(summary_cells("max2min", report.summary.max2min, kCsvDecimals));
    return out;
}

std::string kfold_markdown(const KFoldReport& report) {
    std::ostringstream out;
    out << "# " << report.k << "-fold study (seed " << report.seed << ")\n\n";
    out << "Each row averages the top rule of every feature for one fold.\n\n";
    out << md_header({"Experiment", "Test inputs", "R_tr", "P_te", "R_te", "Len"},
                     {false, true, true, true, true, true});
    for (std::size_t f = 0; f < report.folds.size(); ++f) {
        auto cells = summary_cells(std::to_string(f), report.folds[f].average, kMdDecimals);
        cells.insert(cells.begin() + 1, std::to_string(report.test_sizes[f]));
        out << md_line(cells);
    }
    auto avg = summary_cells("**Average**", report.summary.mean, kMdDecimals);
    avg.insert(avg.begin() + 1, "");
    out << md_line(avg);
    auto spread = summary_cells("**max2min**", report.summary.max2min, kMdDecimals);
    spread.insert(spread.begin() + 1, "");
    out << md_line(spread);
    return out.str();
}

namespace {

bool wants(std::span<const std::string> formats, const char* f) {
    return std::find(formats.begin(), formats.end(), f) != formats.end();
}

std::vector<ScoredRule> chosen_rules(std::span<const FeatureReport> features) {
    std::vector<ScoredRule> out;
    for (const auto& f : features)
        if (f.chosen) out.push_back(*f.chosen);
    return out;
}

std::vector<ScoredRule> candidate_rules(std::span<const FeatureReport> features) {
    std::vector<ScoredRule> out;
    for (const auto& f : features)
        for (const auto& c : f.candidates)
            if (c.top) out.push_back(*c.top);
    return out;
}

bool rows_complete(std::span<const FeatureReport> features) {
    return std::none_of(features.begin(), features.end(),
                        [](const FeatureReport& f) { return f.status == FeatureStatus::error; });
}

void emit(EmitResult& result, const std::filesystem::path& path, const std::string& content) {
    write_file_atomic(path, content);
    result.files.push_back(path);
}

}  // namespace

EmitResult emit_reports(const FgaReport& report, const std::filesystem::path& output_dir,
                        std::span<const std::string> formats) {
    ensure_writable_dir(output_dir);
    EmitResult result;
    if (wants(formats, "csv")) emit(result, output_dir / "report.csv", features_csv(report));
    if (wants(formats, "md")) emit(result, output_dir / "report.md", features_markdown(report, "Feature-guided rules"));
    if (wants(formats, "svg")) emit(result, output_dir / "recall.svg", recall_chart_svg(report, "Rule recall per feature"));
    emit(result, output_dir / "rules.json", rules_to_json(chosen_rules(report.features)));
    emit(result, output_dir / "candidates.json", rules_to_json(candidate_rules(report.features)));
    result.all_rows = rows_complete(report.features);
    return result;
}

EmitResult emit_sweep_reports(const SweepReport& report, const std::filesystem::path& output_dir,
                              std::span<const std::string> formats) {
    ensure_writable_dir(output_dir);
    EmitResult result;
    if (wants(formats, "csv")) emit(result, output_dir / "sweep.csv", sweep_csv(report));
    if (wants(formats, "md")) emit(result, output_dir / "sweep.md", sweep_markdown(report));
    std::vector<FeatureReport> features;
    for (const auto& r : report.rows) features.push_back(r.report);
    emit(result, output_dir / "sweep_rules.json", rules_to_json(chosen_rules(features)));
    result.all_rows = rows_complete(features);
    return result;
}

EmitResult emit_kfold_reports(const KFoldReport& report, const std::filesystem::path& output_dir,
                              std::span<const std::string> formats) {
    ensure_writable_dir(output_dir);
    EmitResult result;
    if (wants(formats, "csv")) emit(result, output_dir / "kfold.csv", kfold_csv(report));
    if (wants(formats, "md")) emit(result, output_dir / "kfold.md", kfold_markdown(report));
    for (std::size_t f = 0; f < report.folds.size(); ++f) {
        auto sub = emit_reports(report.folds[f], output_dir / ("fold_" + std::to_string(f)), formats);
        result.files.insert(result.files.end(), sub.files.begin(), sub.files.end());
        result.all_rows = result.all_rows && sub.all_rows;
    }
    return result;
}

void write_run_manifest(const std::filesystem::path& output_dir, const std::string& command,
                        const ExperimentConfig& config) {
    ensure_writable_dir(output_dir);
    nlohmann::json doc;
    doc["tool"] = "fga";
    doc["version"] = kToolVersion;
    doc["command"] = command;
    doc["seed"] = config.seed;
    doc["tree_params"] = {{"criterion", "gini"},
                          {"max_depth", config.tree.max_depth ? nlohmann::json(*config.tree.max_depth) : nlohmann::json()},
                          {"min_samples_split", config.tree.min_samples_split}};
    doc["capture_mode"] = config.capture_mode == CaptureMode::post_activation ? "post_activation" : "pre_activation";
    doc["capture_layers"] = config.capture_layers;
    doc["across_layer_selection"] = "train_recall";
    doc["test_misclassified_filtered"] = config.filter_test_misclassified;
    if (command == "sweep") doc["sweep_mode"] = "full pipeline per combination (all capture layers, train-recall selection)";
    if (command == "kfold") doc["kfold"] = {{"k", config.kfold_k}, {"model_template", config.model_path.string()}};
    try {
        doc["config"] = nlohmann::json::parse(config.effective_json.empty() ? "{}" : config.effective_json);
    } catch (const nlohmann::json::exception&) {
        doc["config"] = config.effective_json;
    }
    write_file_atomic(output_dir / "manifest.json", doc.dump(2) + "\n");
}

}  // namespace fga
