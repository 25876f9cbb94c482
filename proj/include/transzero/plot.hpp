#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "transzero/training.hpp"

namespace tz {

// Parses a metrics CSV. Throws ConfigError naming the file and 1-based line
// for a wrong header, a malformed row, or a file with no data rows.
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

struct CurvePoint {
  double env_steps = 0.0;
  double wall_seconds = 0.0;  // cumulative planning time
  double mean = 0.0;
  double stderr_ = 0.0;  // 0 for a single run
};

struct Curve {
  std::string label;
  int runs = 0;
  std::vector<CurvePoint> points;
};

// Aggregates runs row by row over the rows all of them share: x values are
// averaged, the reward band is mean +- sample standard deviation / sqrt(runs).
Curve aggregate_runs(const std::string& label, const std::vector<std::vector<MetricsRow>>& runs);

// Two panels side by side: reward vs environment steps and reward vs
// cumulative planning wall-clock time.
std::string render_svg(const std::vector<Curve>& curves);

}  // namespace tz
