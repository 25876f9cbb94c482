#pragma once

// Run configuration as JSON. Every field has a default; a file supplies any
// subset, and "section.field=value" overrides (value parsed as JSON, falling
// back to a plain string) apply on top. Unknown keys are rejected.
//
// {
//   "seed": 0, "output_dir": "runs/default", "precision": "float32",
//   "env": {"size": 3, "lava_tiles": 2, "max_steps": 0},
//   "network": {"d_model": 64, "layers": 2, "heads": 2, "ffn_hidden": 128,
//               "representation_hidden": 128, "head_hidden": 64, "scale_latents": false},
//   "planner": {"mode": "parallel_mvc", "num_simulations": 4, "subtree_layers": 2,
//               "temperature": 1.0, "beta": 10.0, "c_puct": 1.25, "gamma": 0.97,
//               "reward_variance": 0.0, "value_variance": 1.0, "normalize_q": true,
//               "dirichlet_alpha": 0.3, "dirichlet_fraction": 0.25, "max_depth": 64,
//               "max_nodes": 1048576},
//   "train": {"episodes": 500, "updates_per_episode": 4, "batch_size": 32, "unroll_steps": 5,
//             "td_steps": 5, "value_weight": 0.25, "reward_weight": 1.0, "policy_weight": 1.0,
//             "learning_rate": 0.001, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8,
//             "max_grad_norm": 5.0, "buffer_capacity": 1000, "warmup_episodes": 4,
//             "log_interval": 1, "checkpoint_interval": 0, "late_temperature": 0.25,
//             "log_timing": false},
//   "eval": {"episodes": 100},
//   "bench": {"simulations": [2, 4], "layers": [2], "repetitions": 10, "warmup": 2,
//             "width": 1, "tolerance": 1e-5}
// }

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "transzero/bench.hpp"
#include "transzero/envs.hpp"
#include "transzero/networks.hpp"
#include "transzero/planner.hpp"
#include "transzero/training.hpp"

namespace tz {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::string precision = "float32";
  GridWorldConfig env;
  NetworkConfig network;  // observation_size and num_actions come from env
  PlannerConfig planner;
  TrainConfig train;
  int eval_episodes = 100;
  BenchConfig bench;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// Fills observation_size / num_actions from the environment shape.
NetworkConfig network_for(const RunConfig& config);

// Hash over everything that shapes the weights' meaning (env and network).
std::uint64_t config_hash(const RunConfig& config);
// Hash over every field except seed and output_dir; runs that differ only by
// seed share it.
std::uint64_t experiment_hash(const RunConfig& config);

std::string to_json(const RunConfig& config);
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
void apply_override(RunConfig& config, const std::string& assignment);

}  // namespace tz
