#include "curves.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "common.hpp"

namespace sprig {

namespace {

struct RunCurve {
  std::vector<int64_t> steps;
  std::vector<double> returns;
};

RunCurve load_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::format, "cannot open metrics file: " + path);
  std::string header;
  if (!std::getline(in, header)) {
    throw Error(ErrorCode::alignment, "metrics file is empty: " + path);
  }
  // locate the env_steps and mean_episode_return columns
  int step_col = -1, ret_col = -1, col = 0;
  {
    std::istringstream hs(header);
    std::string name;
    while (std::getline(hs, name, ',')) {
      if (name == "env_steps") step_col = col;
      if (name == "mean_episode_return") ret_col = col;
      ++col;
    }
  }
  if (step_col < 0 || ret_col < 0) {
    throw Error(ErrorCode::format, "metrics file missing required columns: " + path);
  }
  RunCurve curve;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    int c = 0;
    int64_t step = 0;
    double ret = 0.0;
    while (std::getline(ls, cell, ',')) {
      if (c == step_col) step = std::stoll(cell);
      if (c == ret_col) ret = std::stod(cell);
      ++c;
    }
    curve.steps.push_back(step);
    curve.returns.push_back(ret);
  }
  if (curve.steps.empty()) {
    throw Error(ErrorCode::alignment, "metrics file has no data rows: " + path);
  }
  return curve;
}

std::string mode_of(const std::string& metrics_path, const std::string& fallback) {
  namespace fs = std::filesystem;
  fs::path manifest = fs::path(metrics_path).parent_path() / "manifest.txt";
  std::ifstream in(manifest);
  if (!in) return fallback;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("mode = ", 0) == 0) return line.substr(7);
  }
  return fallback;
}

}  // namespace

void export_curves(const std::vector<std::string>& metrics_paths, const std::string& out_path,
                   const std::string& fallback_label) {
  if (metrics_paths.empty()) {
    throw Error(ErrorCode::config, "export_curves: at least one metrics file required");
  }
  std::map<std::string, std::vector<RunCurve>> by_mode;
  for (const std::string& path : metrics_paths) {
    by_mode[mode_of(path, fallback_label)].push_back(load_metrics_csv(path));
  }

  std::ofstream out(out_path);
  if (!out) throw Error(ErrorCode::format, "cannot write curve file: " + out_path);
  out << "mode,step,mean_return,std_return\n";
  char buf[64];
  for (const auto& [mode, runs] : by_mode) {
    const RunCurve& first = runs.front();
    for (const RunCurve& r : runs) {
      if (r.steps != first.steps) {
        throw Error(ErrorCode::alignment,
                    "export_curves: step grids differ across seeds for mode '" + mode + "'");
      }
    }
    for (size_t i = 0; i < first.steps.size(); ++i) {
      double mean = 0.0;
      for (const RunCurve& r : runs) mean += r.returns[i];
      mean /= static_cast<double>(runs.size());
      double var = 0.0;
      for (const RunCurve& r : runs) var += (r.returns[i] - mean) * (r.returns[i] - mean);
      double sd = std::sqrt(var / static_cast<double>(runs.size()));
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g", mean, sd);
      out << mode << ',' << first.steps[i] << ',' << buf << '\n';
    }
  }
}

}  // namespace sprig
