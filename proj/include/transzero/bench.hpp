#pragma once

#include <span>
#include <string>
#include <vector>

#include "transzero/planner.hpp"

namespace tz {

struct BenchConfig {
  std::vector<int> simulations = {2, 4};
  std::vector<int> layers = {2};
  int repetitions = 10;
  int warmup = 2;
  // Threads used by one planning call. The library evaluates on one thread;
  // the value is recorded in every row so results stay comparable.
  int width = 1;
  double tolerance = 1e-5;

  void validate() const;
  bool operator==(const BenchConfig&) const = default;
};

struct BenchRow {
  PlannerMode mode = PlannerMode::parallel_mvc;
  int num_simulations = 0;
  int layers = 1;
  std::size_t nodes_expanded = 0;
  double median_ms = 0.0;
  double iqr_ms = 0.0;
  double time_per_node_us = 0.0;
  bool equivalence_checked = false;
  int width = 1;
};

// Largest |difference| in root policy, root value, and per-node Q and
// variance between two trees that must hold the same node set. Throws
// StructuralError when the node sets differ.
template <typename Scalar>
double plan_difference(const PlanResult<Scalar>& a, const PlanResult<Scalar>& b);

// For every (simulations, layers) pair: runs parallel_mvc once, replays the
// same node set through seq_mvc, checks the statistics agree within
// `tolerance` (StructuralError with both tree dumps otherwise), then times
// both over `repetitions` after `warmup` untimed calls.
template <typename Scalar>
std::vector<BenchRow> run_bench(const NetworkBundle<Scalar>& networks, std::span<const Scalar> observation,
                                const PlannerConfig& base, const BenchConfig& config);

inline constexpr const char* kBenchHeader = "mode,sims,layers,nodes,median_ms,iqr_ms,per_node_us,relative";

// CSV rows with `relative` = per-node time over that of the first sequential
// row. UsageError without a sequential row.
std::string speedup_report(const std::vector<BenchRow>& rows);

// (median, interquartile range) with linear interpolation between order
// statistics.
std::pair<double, double> median_iqr(std::vector<double> samples);

extern template double plan_difference(const PlanResult<float>&, const PlanResult<float>&);
extern template double plan_difference(const PlanResult<double>&, const PlanResult<double>&);
extern template std::vector<BenchRow> run_bench(const NetworkBundle<float>&, std::span<const float>,
                                                const PlannerConfig&, const BenchConfig&);
extern template std::vector<BenchRow> run_bench(const NetworkBundle<double>&, std::span<const double>,
                                                const PlannerConfig&, const BenchConfig&);

}  // namespace tz
