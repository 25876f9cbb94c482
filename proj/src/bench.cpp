#include "transzero/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

namespace tz {

void BenchConfig::validate() const {
  if (simulations.empty() || layers.empty()) throw ConfigError("bench.simulations and bench.layers must be non-empty");
  for (int s : simulations) {
    if (s < 1) throw ConfigError("bench.simulations entries must be positive");
  }
  for (int l : layers) {
    if (l < 1) throw ConfigError("bench.layers entries must be positive");
  }
  if (repetitions < 10) throw ConfigError("bench.repetitions must be at least 10");
  if (warmup < 0) throw ConfigError("bench.warmup must be non-negative");
  if (width != 1) throw ConfigError("bench.width must be 1 (planning runs on one thread)");
  if (!(tolerance >= 0)) throw ConfigError("bench.tolerance must be non-negative");
}

std::pair<double, double> median_iqr(std::vector<double> samples) {
  if (samples.empty()) throw UsageError("median of no samples");
  std::sort(samples.begin(), samples.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(samples.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, samples.size() - 1);
    return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
  };
  return {quantile(0.5), quantile(0.75) - quantile(0.25)};
}

template <typename Scalar>
double plan_difference(const PlanResult<Scalar>& a, const PlanResult<Scalar>& b) {
  if (a.tree->size() != b.tree->size()) {
    throw StructuralError("trees differ in size: " + std::to_string(a.tree->size()) + " vs " +
                          std::to_string(b.tree->size()));
  }
  double diff = std::abs(a.root_value - b.root_value);
  for (std::size_t i = 0; i < a.root_policy.size(); ++i) {
    diff = std::max(diff, std::abs(a.root_policy[i] - b.root_policy.at(i)));
  }
  for (NodeId id = 0; id < static_cast<NodeId>(a.tree->size()); ++id) {
    const NodeId other = b.tree->find(a.tree->path_actions(id));
    if (other == kNoNode) throw StructuralError("node " + std::to_string(id) + " missing from the second tree");
    const auto& x = a.tree->node(id);
    const auto& y = b.tree->node(other);
    diff = std::max({diff, std::abs(x.q_value - y.q_value), std::abs(x.variance - y.variance)});
  }
  return diff;
}

namespace {

template <typename Scalar>
std::vector<double> time_plan(const NetworkBundle<Scalar>& networks, std::span<const Scalar> observation,
                              const PlannerConfig& config, const std::vector<ActionPath>* schedule, int warmup,
                              int repetitions) {
  std::vector<double> ms;
  for (int r = 0; r < warmup + repetitions; ++r) {
    Rng rng(0);
    const auto start = std::chrono::steady_clock::now();
    const auto result = plan(observation, networks, config, rng, schedule);
    const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
    if (r >= warmup) ms.push_back(elapsed.count());
  }
  return ms;
}

}  // namespace

template <typename Scalar>
std::vector<BenchRow> run_bench(const NetworkBundle<Scalar>& networks, std::span<const Scalar> observation,
                                const PlannerConfig& base, const BenchConfig& config) {
  config.validate();
  std::vector<BenchRow> rows;
  for (int layers : config.layers) {
    for (int sims : config.simulations) {
      PlannerConfig par = base;
      par.mode = PlannerMode::parallel_mvc;
      par.num_simulations = sims;
      par.subtree_layers = layers;
      par.dirichlet_fraction = 0.0;
      par.validate();
      Rng rng(0);
      const auto par_result = plan(observation, networks, par, rng);
      const auto schedule = sequential_schedule(par_result.expansions, layers, networks.config().num_actions);

      PlannerConfig seq = par;
      seq.mode = PlannerMode::seq_mvc;
      seq.num_simulations = static_cast<int>(schedule.size());
      Rng rng2(0);
      const auto seq_result = plan(observation, networks, seq, rng2, &schedule);
      const double diff = plan_difference(par_result, seq_result);
      if (!(diff <= config.tolerance)) {
        throw StructuralError("statistics differ by " + std::to_string(diff) + " (sims " + std::to_string(sims) +
                              ", layers " + std::to_string(layers) + ")\n# parallel\n" +
                              dump_tree(*par_result.tree, par.mvc) + "# sequential\n" +
                              dump_tree(*seq_result.tree, seq.mvc));
      }

      auto add_row = [&](const PlannerConfig& cfg, const std::vector<ActionPath>* sched, std::size_t nodes) {
        const auto [median, iqr] =
            median_iqr(time_plan(networks, observation, cfg, sched, config.warmup, config.repetitions));
        BenchRow row;
        row.mode = cfg.mode;
        row.num_simulations = cfg.num_simulations;
        row.layers = cfg.mode == PlannerMode::parallel_mvc ? layers : 1;
        row.nodes_expanded = nodes;
        row.median_ms = median;
        row.iqr_ms = iqr;
        row.time_per_node_us = nodes > 0 ? 1000.0 * median / static_cast<double>(nodes) : 0.0;
        row.equivalence_checked = true;
        row.width = config.width;
        rows.push_back(row);
      };
      add_row(seq, &schedule, seq_result.actions_considered);
      add_row(par, nullptr, par_result.actions_considered);
    }
  }
  return rows;
}

std::string speedup_report(const std::vector<BenchRow>& rows) {
  const auto baseline = std::find_if(rows.begin(), rows.end(), [](const BenchRow& r) {
    return r.mode != PlannerMode::parallel_mvc && r.time_per_node_us > 0;
  });
  if (baseline == rows.end()) throw UsageError("speedup report needs at least one sequential baseline row");
  std::string out = std::string(kBenchHeader) + "\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%zu,%.6f,%.6f,%.4f,%.6f\n", to_string(r.mode).c_str(), r.num_simulations,
                  r.layers, r.nodes_expanded, r.median_ms, r.iqr_ms, r.time_per_node_us,
                  r.time_per_node_us / baseline->time_per_node_us);
    out += buf;
  }
  return out;
}

template double plan_difference(const PlanResult<float>&, const PlanResult<float>&);
template double plan_difference(const PlanResult<double>&, const PlanResult<double>&);
template std::vector<BenchRow> run_bench(const NetworkBundle<float>&, std::span<const float>, const PlannerConfig&,
                                         const BenchConfig&);
template std::vector<BenchRow> run_bench(const NetworkBundle<double>&, std::span<const double>, const PlannerConfig&,
                                         const BenchConfig&);

}  // namespace tz
