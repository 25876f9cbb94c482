#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "transzero/networks.hpp"
#include "transzero/tree.hpp"

namespace tz {

using Rng = std::mt19937_64;
using ActionPath = std::vector<int>;

enum class PlannerMode {
  parallel_mvc,  // whole subtrees per simulation, MVC evaluation
  seq_mvc,       // one node per simulation, MVC evaluation
  seq_counts,    // one node per simulation, visit counts
};

std::string to_string(PlannerMode mode);
PlannerMode parse_planner_mode(const std::string& name);

struct PlannerConfig {
  PlannerMode mode = PlannerMode::parallel_mvc;
  int num_simulations = 4;
  int subtree_layers = 2;
  double temperature = 1.0;
  MvcParams mvc;
  double dirichlet_alpha = 0.3;
  double dirichlet_fraction = 0.25;
  int max_depth = 64;
  std::size_t max_nodes = 1u << 20;

  void validate() const;
  bool operator==(const PlannerConfig&) const = default;
};

template <typename Scalar>
struct PlanResult {
  std::vector<double> root_policy;
  double root_value = 0.0;
  // Non-root nodes created by the search.
  std::size_t actions_considered = 0;
  std::chrono::duration<double> wall_time{};
  // Simulations whose expansion was clipped or skipped by max_depth.
  int truncated_expansions = 0;
  // Selected leaves (parallel mode) or created nodes (sequential modes), as
  // action paths from the root, in simulation order.
  std::vector<ActionPath> expansions;
  std::shared_ptr<const SearchTree<Scalar>> tree;
};

// Expands the complete subtree of `layers` levels under `leaf` with one
// masked dynamics pass and one batched prediction. Returns the new node ids.
template <typename Scalar>
std::vector<NodeId> expand_parallel(SearchTree<Scalar>& tree, NodeId leaf, int layers,
                                    const NetworkBundle<Scalar>& networks);

// Adds the single child of `leaf` along `action`, computing its latent from a
// causal pass over the node's whole root path.
template <typename Scalar>
NodeId expand_sequential(SearchTree<Scalar>& tree, NodeId leaf, int action, const NetworkBundle<Scalar>& networks);

// Runs the search. With a `schedule`, selection is replaced by the given
// action paths: in parallel mode each entry names the leaf to expand, in the
// sequential modes each entry names the node to create. Simulations beyond the
// schedule's length fall back to normal selection.
template <typename Scalar>
PlanResult<Scalar> plan(std::span<const Scalar> observation, const NetworkBundle<Scalar>& networks,
                        const PlannerConfig& config, Rng& rng, const std::vector<ActionPath>* schedule = nullptr);

// Converts the leaves selected by a parallel run into the node-by-node
// schedule (breadth-first within each subtree) a sequential run needs to
// build the same tree.
std::vector<ActionPath> sequential_schedule(const std::vector<ActionPath>& parallel_leaves, int layers,
                                            int num_actions);

// Samples from root_policy sharpened by 1/temperature; below 1e-3 the argmax
// (lowest id on ties) is returned.
int act(std::span<const double> root_policy, double temperature, Rng& rng);

template <typename Scalar>
int act(const PlanResult<Scalar>& result, double temperature, Rng& rng) {
  return act(result.root_policy, temperature, rng);
}

extern template std::vector<NodeId> expand_parallel(SearchTree<float>&, NodeId, int, const NetworkBundle<float>&);
extern template std::vector<NodeId> expand_parallel(SearchTree<double>&, NodeId, int, const NetworkBundle<double>&);
extern template NodeId expand_sequential(SearchTree<float>&, NodeId, int, const NetworkBundle<float>&);
extern template NodeId expand_sequential(SearchTree<double>&, NodeId, int, const NetworkBundle<double>&);
extern template PlanResult<float> plan(std::span<const float>, const NetworkBundle<float>&, const PlannerConfig&, Rng&,
                                       const std::vector<ActionPath>*);
extern template PlanResult<double> plan(std::span<const double>, const NetworkBundle<double>&, const PlannerConfig&,
                                        Rng&, const std::vector<ActionPath>*);

}  // namespace tz
