#pragma once

#include <string>
#include <vector>

namespace sprig {

// Aggregates per-seed metrics.csv files into a tidy curve file with columns
// (mode, step, mean_return, std_return). Runs are grouped by the mode
// recorded in each file's sibling manifest.txt (fallback_label otherwise);
// step grids must agree within a group.
void export_curves(const std::vector<std::string>& metrics_paths, const std::string& out_path,
                   const std::string& fallback_label = "run");

}  // namespace sprig
