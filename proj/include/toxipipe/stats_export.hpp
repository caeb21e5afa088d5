#pragma once

// Aggregated statistics export. Documents carry region rates, correlation
// summaries, emotion profiles and cohort counts only: no post text and no
// author or member identifiers.

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

namespace toxipipe::gateway {

struct WorkLayout;

// Assembles the stats document from a work directory's stage outputs.
nlohmann::json build_stats(const WorkLayout& layout);

// Reads the exported stats.json of the last completed run; DomainError when
// there is none.
nlohmann::json load_stats(const std::filesystem::path& work_dir);

// Keeps only the given region's rows (region-level sections only).
nlohmann::json filter_region(const nlohmann::json& stats, const std::string& region);

std::string stats_to_json_text(const nlohmann::json& stats);
// Long format: section,key,metric,value.
std::string stats_to_csv(const nlohmann::json& stats);

}  // namespace toxipipe::gateway
