#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "transzero/envs.hpp"
#include "transzero/networks.hpp"
#include "transzero/optim.hpp"
#include "transzero/planner.hpp"

namespace tz {

// One self-play episode. rewards[t] is the reward for taking actions[t] in
// the state observed as observations[t]. The episode always ends after the
// last action (goal, lava, or step limit).
struct Trajectory {
  std::vector<std::vector<double>> observations;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<std::vector<double>> policies;
  std::vector<double> root_values;

  std::size_t size() const { return actions.size(); }
  double total_reward() const;
  void validate() const;
};

// Targets for unroll positions k = 0..K starting at step t. Position k is the
// latent reached after k actions, so its reward target is the reward of the
// transition into it and position 0 carries no reward target.
struct UnrollTargets {
  std::vector<double> value;
  std::vector<double> reward;
  std::vector<double> reward_weight;
  std::vector<std::vector<double>> policy;
  std::vector<double> policy_weight;
};

// n-step bootstrapped value targets from the stored root values:
//   z_i = sum_{j<n, i+j<T} gamma^j r_{i+j} + [i+n < T] gamma^n V_root(i+n)
// and zero beyond the episode end.
UnrollTargets make_targets(const Trajectory& trajectory, std::size_t t, int unroll_steps, int td_steps,
                           double gamma);

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Trajectory trajectory);
  std::size_t size() const { return trajectories_.size(); }
  std::size_t positions() const;
  const Trajectory& at(std::size_t i) const { return trajectories_.at(i); }

  // Uniform over every (trajectory, start step) pair currently stored.
  std::pair<std::size_t, std::size_t> sample(Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Trajectory> trajectories_;
};

struct UnrollBatch {
  std::vector<std::vector<double>> observations;  // B observations
  std::vector<int> actions;                       // B * K actions, sample-major
  std::vector<UnrollTargets> targets;             // B target sets of K + 1 positions
  int unroll_steps = 0;

  std::size_t size() const { return observations.size(); }
};

UnrollBatch sample_batch(const ReplayBuffer& buffer, int batch_size, int unroll_steps, int td_steps, double gamma,
                         int num_actions, Rng& rng);

struct LossWeights {
  double value = 0.25;
  double reward = 1.0;
  double policy = 1.0;
  bool operator==(const LossWeights&) const = default;
};

struct LossReport {
  double total = 0.0;
  double value_loss = 0.0;
  double reward_loss = 0.0;
  double policy_loss = 0.0;
  double grad_norm = 0.0;
};

template <typename Scalar>
struct LossVars {
  Var<Scalar> total, value, reward, policy;
};

// Records the whole K-step loss on `tape`: one representation pass, one
// causal dynamics pass over all K + 1 positions, one batched prediction.
// Losses are summed over positions and averaged over the batch.
template <typename Scalar>
LossVars<Scalar> record_unrolled_loss(const NetworkBundle<Scalar>& networks, const typename NetworkBundle<Scalar>::Bound& bound,
                                      const UnrollBatch& batch, const LossWeights& weights);

template <typename Scalar>
struct LossGradients {
  LossReport report;
  std::vector<Tensor<Scalar>> grads;
};

template <typename Scalar>
LossGradients<Scalar> unrolled_loss(const NetworkBundle<Scalar>& networks, const UnrollBatch& batch,
                                    const LossWeights& weights);

struct SelfPlayStats {
  double plan_seconds = 0.0;
  std::size_t plans = 0;
  std::size_t nodes = 0;
  std::size_t simulations = 0;
};

template <typename Scalar>
Trajectory self_play_episode(Environment& env, std::uint64_t env_seed, const NetworkBundle<Scalar>& networks,
                             const PlannerConfig& planner, double temperature, Rng& rng,
                             SelfPlayStats* stats = nullptr);

struct TrainConfig {
  int episodes = 500;
  int updates_per_episode = 4;
  int batch_size = 32;
  int unroll_steps = 5;
  int td_steps = 5;
  LossWeights loss;
  AdamConfig adam;
  double max_grad_norm = 5.0;
  std::size_t buffer_capacity = 1000;
  int warmup_episodes = 4;
  int log_interval = 1;
  int checkpoint_interval = 0;
  double late_temperature = 0.25;
  bool log_timing = false;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct MetricsRow {
  std::int64_t step = 0;
  int episodes = 0;
  std::int64_t env_steps = 0;
  double mean_reward = 0.0;
  double value_loss = 0.0;
  double reward_loss = 0.0;
  double policy_loss = 0.0;
  double nodes_per_sim = 0.0;
  double plan_ms = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "step,episodes,env_steps,mean_reward,value_loss,reward_loss,policy_loss,nodes_per_sim,plan_ms";
std::string format_metrics_row(const MetricsRow& row);

struct TrainSummary {
  std::vector<MetricsRow> metrics;
  std::int64_t gradient_steps = 0;
  int episodes = 0;
  bool interrupted = false;
  std::vector<std::filesystem::path> checkpoints;
};

// Set from a signal handler to stop training after the current episode with a
// final checkpoint.
std::atomic<bool>& stop_flag();

// Alternates one self-play episode with `updates_per_episode` gradient steps.
// With an output directory, writes metrics.csv (one row per log interval),
// periodic checkpoints, and checkpoint.bin at the end.
template <typename Scalar>
TrainSummary train(const TrainConfig& config, const PlannerConfig& planner, NetworkBundle<Scalar>& networks,
                   Environment& env, std::uint64_t seed, std::uint64_t config_hash,
                   const std::optional<std::filesystem::path>& output_dir);

struct EvalSummary {
  int episodes = 0;
  double mean_reward = 0.0;
  double standard_error = 0.0;
};

// Greedy (argmax of the root policy) evaluation over fresh environment seeds.
// A single episode reports a standard error of 0.
template <typename Scalar>
EvalSummary evaluate(const NetworkBundle<Scalar>& networks, Environment& env, const PlannerConfig& planner,
                     int episodes, std::uint64_t seed);

// Mean episode reward of a uniformly random policy.
double random_policy_baseline(Environment& env, int episodes, std::uint64_t seed);

// Environment seed for episode `index` of a run seeded with `seed`.
std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t index);

extern template LossVars<float> record_unrolled_loss(const NetworkBundle<float>&, const NetworkBundle<float>::Bound&,
                                                     const UnrollBatch&, const LossWeights&);
extern template LossVars<double> record_unrolled_loss(const NetworkBundle<double>&, const NetworkBundle<double>::Bound&,
                                                      const UnrollBatch&, const LossWeights&);
extern template LossGradients<float> unrolled_loss(const NetworkBundle<float>&, const UnrollBatch&, const LossWeights&);
extern template LossGradients<double> unrolled_loss(const NetworkBundle<double>&, const UnrollBatch&,
                                                    const LossWeights&);
extern template Trajectory self_play_episode(Environment&, std::uint64_t, const NetworkBundle<float>&,
                                             const PlannerConfig&, double, Rng&, SelfPlayStats*);
extern template Trajectory self_play_episode(Environment&, std::uint64_t, const NetworkBundle<double>&,
                                             const PlannerConfig&, double, Rng&, SelfPlayStats*);
extern template TrainSummary train(const TrainConfig&, const PlannerConfig&, NetworkBundle<float>&, Environment&,
                                   std::uint64_t, std::uint64_t, const std::optional<std::filesystem::path>&);
extern template TrainSummary train(const TrainConfig&, const PlannerConfig&, NetworkBundle<double>&, Environment&,
                                   std::uint64_t, std::uint64_t, const std::optional<std::filesystem::path>&);
extern template EvalSummary evaluate(const NetworkBundle<float>&, Environment&, const PlannerConfig&, int,
                                     std::uint64_t);
extern template EvalSummary evaluate(const NetworkBundle<double>&, Environment&, const PlannerConfig&, int,
                                     std::uint64_t);

}  // namespace tz
