#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "routenas/features.hpp"
#include "routenas/search_space.hpp"

namespace routenas {

struct StageDiff {
  std::string stage;
  std::string searched;  // "k/blocks/filters"
  std::string baseline;
  bool differs = false;
};

/// Stage-by-stage comparison of block hyperparameters (stem, CONV1-4, TransCONV1-3, shortcuts).
std::vector<StageDiff> architecture_diff(const ArchitectureSpec& searched, const ArchitectureSpec& baseline);
std::string render_architecture_diff(const std::vector<StageDiff>& rows, const std::string& searched_name,
                                     const std::string& baseline_name);

/// Binary 8-bit PGM, one pixel per tile, row j = 0 at the top. Values are mapped linearly from [lo, hi].
void write_pgm(const std::filesystem::path& path, const Map2D& values, Grid grid, double lo = 0.0, double hi = 1.0);

/// Plain-text table with a header row and right-aligned columns.
std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);
std::string render_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

struct ReportFiles {
  std::vector<std::filesystem::path> written;
  std::string summary;
};

/// Renders search.json and crossval.json found in artifacts_dir into text/CSV tables, an architecture diff
/// and heatmaps under out_dir.
ReportFiles render_report(const std::filesystem::path& artifacts_dir, const std::filesystem::path& out_dir,
                          bool heatmaps = true);

}  // namespace routenas
