#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "fga/pipeline.hpp"

namespace fga {

/// Reads a JSON experiment config. `overrides` are "dotted.key=value" strings
/// applied after the file; values parse as JSON where possible, otherwise as
/// strings. Unknown keys are rejected with the nearest valid key suggested.
/// Relative paths resolve against the config file's directory.
ExperimentConfig parse_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir,
                                   std::span<const std::string> overrides = {});

/// Levenshtein distance, used for key suggestions.
std::size_t edit_distance(std::string_view a, std::string_view b);

}  // namespace fga
