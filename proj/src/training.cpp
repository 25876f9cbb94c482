#include "transzero/training.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "transzero/checkpoint.hpp"
#include "transzero/ops.hpp"

namespace tz {

double Trajectory::total_reward() const { return std::accumulate(rewards.begin(), rewards.end(), 0.0); }

void Trajectory::validate() const {
  const auto n = actions.size();
  if (observations.size() != n || rewards.size() != n || policies.size() != n || root_values.size() != n) {
    throw DimensionError("trajectory fields disagree in length: " + std::to_string(observations.size()) + " obs, " +
                         std::to_string(n) + " actions, " + std::to_string(rewards.size()) + " rewards, " +
                         std::to_string(policies.size()) + " policies, " + std::to_string(root_values.size()) +
                         " values");
  }
}

UnrollTargets make_targets(const Trajectory& traj, std::size_t t, int unroll_steps, int td_steps, double gamma) {
  traj.validate();
  if (unroll_steps < 0 || td_steps < 1) throw ConfigError("unroll_steps must be >= 0 and td_steps >= 1");
  const std::size_t T = traj.size();
  if (t >= T) throw UsageError("target start " + std::to_string(t) + " beyond episode of length " + std::to_string(T));
  const std::size_t A = traj.policies.front().size();
  const auto K = static_cast<std::size_t>(unroll_steps);
  const auto n = static_cast<std::size_t>(td_steps);

  UnrollTargets out;
  out.value.assign(K + 1, 0.0);
  out.reward.assign(K + 1, 0.0);
  out.reward_weight.assign(K + 1, 1.0);
  out.reward_weight[0] = 0.0;
  out.policy.assign(K + 1, std::vector<double>(A, 1.0 / static_cast<double>(A)));
  out.policy_weight.assign(K + 1, 0.0);

  for (std::size_t k = 0; k <= K; ++k) {
    const std::size_t i = t + k;
    if (i < T) {
      double z = 0.0, discount = 1.0;
      for (std::size_t j = 0; j < n && i + j < T; ++j) {
        z += discount * traj.rewards[i + j];
        discount *= gamma;
      }
      if (i + n < T) z += discount * traj.root_values[i + n];
      out.value[k] = z;
      out.policy[k] = traj.policies[i];
      out.policy_weight[k] = 1.0;
    }
    if (k > 0 && i - 1 < T) out.reward[k] = traj.rewards[i - 1];
  }
  return out;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay capacity must be positive");
}

void ReplayBuffer::push(Trajectory trajectory) {
  trajectory.validate();
  if (trajectory.size() == 0) throw UsageError("cannot store an empty trajectory");
  if (trajectories_.size() < capacity_) {
    trajectories_.push_back(std::move(trajectory));
  } else {
    trajectories_[next_] = std::move(trajectory);
  }
  next_ = (next_ + 1) % capacity_;
}

std::size_t ReplayBuffer::positions() const {
  std::size_t n = 0;
  for (const auto& t : trajectories_) n += t.size();
  return n;
}

std::pair<std::size_t, std::size_t> ReplayBuffer::sample(Rng& rng) const {
  const std::size_t total = positions();
  if (total == 0) throw UsageError("sampling from an empty replay buffer");
  std::size_t k = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
  for (std::size_t i = 0; i < trajectories_.size(); ++i) {
    if (k < trajectories_[i].size()) return {i, k};
    k -= trajectories_[i].size();
  }
  return {trajectories_.size() - 1, trajectories_.back().size() - 1};
}

UnrollBatch sample_batch(const ReplayBuffer& buffer, int batch_size, int unroll_steps, int td_steps, double gamma,
                         int num_actions, Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  UnrollBatch batch;
  batch.unroll_steps = unroll_steps;
  std::uniform_int_distribution<int> any_action(0, num_actions - 1);
  for (int b = 0; b < batch_size; ++b) {
    const auto [i, t] = buffer.sample(rng);
    const auto& traj = buffer.at(i);
    batch.observations.push_back(traj.observations[t]);
    for (int k = 0; k < unroll_steps; ++k) {
      const std::size_t s = t + static_cast<std::size_t>(k);
      batch.actions.push_back(s < traj.size() ? traj.actions[s] : any_action(rng));
    }
    batch.targets.push_back(make_targets(traj, t, unroll_steps, td_steps, gamma));
  }
  return batch;
}

template <typename Scalar>
LossVars<Scalar> record_unrolled_loss(const NetworkBundle<Scalar>& networks,
                                      const typename NetworkBundle<Scalar>::Bound& bound, const UnrollBatch& batch,
                                      const LossWeights& weights) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  const int K = batch.unroll_steps;
  const Eigen::Index L = K + 1;
  const int A = networks.config().num_actions;
  const int obs = networks.config().observation_size;
  if (B == 0) throw UsageError("empty batch");
  if (batch.actions.size() != static_cast<std::size_t>(B * K) || batch.targets.size() != static_cast<std::size_t>(B)) {
    throw DimensionError("batch holds " + std::to_string(batch.actions.size()) + " actions and " +
                         std::to_string(batch.targets.size()) + " target sets for " + std::to_string(B) +
                         " samples of " + std::to_string(K) + " steps");
  }
  Tape<Scalar>& tape = *bound.p.front().tape;

  Tensor<Scalar> observations(B, obs);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& o = batch.observations[static_cast<std::size_t>(b)];
    if (static_cast<int>(o.size()) != obs) throw DimensionError("observation size mismatch in batch");
    for (int c = 0; c < obs; ++c) observations(b, c) = static_cast<Scalar>(o[static_cast<std::size_t>(c)]);
  }
  Var<Scalar> roots = networks.represent(bound, tape.constant(std::move(observations)));

  Var<Scalar> sequences = roots;
  if (K > 0) {
    std::vector<int> depths;
    depths.reserve(batch.actions.size());
    for (Eigen::Index b = 0; b < B; ++b) {
      for (int k = 1; k <= K; ++k) depths.push_back(k);
    }
    Var<Scalar> tokens = networks.embed_actions(bound, batch.actions, depths);
    std::vector<Eigen::Index> order;
    order.reserve(static_cast<std::size_t>(B * L));
    for (Eigen::Index b = 0; b < B; ++b) {
      order.push_back(b);
      for (int k = 0; k < K; ++k) order.push_back(B + b * K + k);
    }
    sequences = gather_rows(concat_rows<Scalar>({roots, tokens}), std::move(order));
  }
  Var<Scalar> latents = networks.dynamics(bound, sequences, AttentionMask::causal(static_cast<int>(L)));
  PredictionVars<Scalar> out = networks.predict(bound, latents);

  const Eigen::Index R = B * L;
  Tensor<Scalar> value_target(R, 1), reward_target(R, 1), reward_weight(R, 1), value_weight(R, 1);
  Tensor<Scalar> policy_target(R, A), policy_weight(R, 1);
  const auto inv_b = static_cast<Scalar>(1.0 / static_cast<double>(B));
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& tg = batch.targets[static_cast<std::size_t>(b)];
    for (Eigen::Index k = 0; k < L; ++k) {
      const Eigen::Index r = b * L + k;
      const auto kk = static_cast<std::size_t>(k);
      value_target(r, 0) = static_cast<Scalar>(tg.value[kk]);
      value_weight(r, 0) = inv_b;
      reward_target(r, 0) = static_cast<Scalar>(tg.reward[kk]);
      reward_weight(r, 0) = static_cast<Scalar>(tg.reward_weight[kk]) * inv_b;
      for (int a = 0; a < A; ++a) policy_target(r, a) = static_cast<Scalar>(tg.policy[kk][static_cast<std::size_t>(a)]);
      policy_weight(r, 0) = static_cast<Scalar>(tg.policy_weight[kk]) * inv_b;
    }
  }
  LossVars<Scalar> loss;
  loss.value = weighted_squared_error(out.value, value_target, value_weight);
  loss.reward = weighted_squared_error(out.reward, reward_target, reward_weight);
  loss.policy = cross_entropy(out.policy_logits, policy_target, policy_weight);
  loss.total = add(add(scale(loss.value, static_cast<Scalar>(weights.value)),
                       scale(loss.reward, static_cast<Scalar>(weights.reward))),
                   scale(loss.policy, static_cast<Scalar>(weights.policy)));
  return loss;
}

template <typename Scalar>
LossGradients<Scalar> unrolled_loss(const NetworkBundle<Scalar>& networks, const UnrollBatch& batch,
                                    const LossWeights& weights) {
  Tape<Scalar> tape(true);
  const auto bound = networks.bind(tape);
  const auto loss = record_unrolled_loss(networks, bound, batch, weights);
  LossGradients<Scalar> result;
  result.report.total = static_cast<double>(loss.total.value()(0, 0));
  result.report.value_loss = static_cast<double>(loss.value.value()(0, 0));
  result.report.reward_loss = static_cast<double>(loss.reward.value()(0, 0));
  result.report.policy_loss = static_cast<double>(loss.policy.value()(0, 0));
  if (!std::isfinite(result.report.total)) {
    throw TrainingError("non-finite loss (value " + std::to_string(result.report.value_loss) + ", reward " +
                        std::to_string(result.report.reward_loss) + ", policy " +
                        std::to_string(result.report.policy_loss) + ")");
  }
  tape.backward(loss.total);
  double sq = 0.0;
  const auto& params = networks.parameters();
  for (std::size_t i = 0; i < bound.p.size(); ++i) {
    const auto& g = tape.grad(bound.p[i]);
    if (!g.allFinite()) throw TrainingError("non-finite gradient for parameter " + params[i].name);
    sq += static_cast<double>(g.squaredNorm());
    result.grads.push_back(g);
  }
  result.report.grad_norm = std::sqrt(sq);
  return result;
}

template <typename Scalar>
Trajectory self_play_episode(Environment& env, std::uint64_t env_seed, const NetworkBundle<Scalar>& networks,
                             const PlannerConfig& planner, double temperature, Rng& rng, SelfPlayStats* stats) {
  Trajectory traj;
  std::vector<double> obs = env.reset(env_seed);
  std::vector<Scalar> cast(obs.size());
  while (!env.done()) {
    std::transform(obs.begin(), obs.end(), cast.begin(), [](double v) { return static_cast<Scalar>(v); });
    const auto result = plan<Scalar>(cast, networks, planner, rng);
    const int action = act(result, temperature, rng);
    if (stats != nullptr) {
      stats->plan_seconds += result.wall_time.count();
      stats->plans += 1;
      stats->nodes += result.actions_considered;
      stats->simulations += static_cast<std::size_t>(planner.num_simulations);
    }
    StepResult step = env.step(action);
    traj.observations.push_back(std::move(obs));
    traj.actions.push_back(action);
    traj.rewards.push_back(step.reward);
    traj.policies.push_back(result.root_policy);
    traj.root_values.push_back(result.root_value);
    obs = std::move(step.observation);
  }
  return traj;
}

void TrainConfig::validate() const {
  if (episodes < 1) throw ConfigError("train.episodes must be positive");
  if (updates_per_episode < 0) throw ConfigError("train.updates_per_episode must be non-negative");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (unroll_steps < 0) throw ConfigError("train.unroll_steps must be non-negative");
  if (td_steps < 1) throw ConfigError("train.td_steps must be positive");
  if (!(loss.value >= 0 && loss.reward >= 0 && loss.policy >= 0)) throw ConfigError("loss weights must be >= 0");
  if (!(adam.learning_rate > 0)) throw ConfigError("train.learning_rate must be positive");
  if (!(max_grad_norm >= 0)) throw ConfigError("train.max_grad_norm must be >= 0 (0 disables clipping)");
  if (buffer_capacity < 1) throw ConfigError("train.buffer_capacity must be positive");
  if (warmup_episodes < 1) throw ConfigError("train.warmup_episodes must be positive");
  if (log_interval < 1) throw ConfigError("train.log_interval must be positive");
  if (checkpoint_interval < 0) throw ConfigError("train.checkpoint_interval must be non-negative");
  if (!(late_temperature > 0)) throw ConfigError("train.late_temperature must be positive");
}

std::string format_metrics_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%" PRId64 ",%d,%" PRId64 ",%.6f,%.6f,%.6f,%.6f,%.4f,%.4f", r.step, r.episodes,
                r.env_steps, r.mean_reward, r.value_loss, r.reward_loss, r.policy_loss, r.nodes_per_sim, r.plan_ms);
  return buf;
}

std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the pair.
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + index + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

template <typename Scalar>
TrainSummary train(const TrainConfig& config, const PlannerConfig& planner, NetworkBundle<Scalar>& networks,
                   Environment& env, std::uint64_t seed, std::uint64_t config_hash,
                   const std::optional<std::filesystem::path>& output_dir) {
  config.validate();
  planner.validate();
  if (env.num_actions() != networks.config().num_actions ||
      env.observation_size() != networks.config().observation_size) {
    throw ConfigError("network shapes do not match the environment");
  }
  TrainSummary summary;
  ReplayBuffer buffer(config.buffer_capacity);
  AdamState<Scalar> adam = AdamState<Scalar>::zeros_like(networks.parameters());
  Rng play_rng(episode_seed(seed, 0xA11CEull));
  Rng sample_rng(episode_seed(seed, 0xB0Bull));

  std::ofstream metrics;
  if (output_dir) {
    std::filesystem::create_directories(*output_dir);
    metrics.open(*output_dir / "metrics.csv", std::ios::trunc);
    if (!metrics) throw ResourceError("cannot write " + (*output_dir / "metrics.csv").string());
    metrics << kMetricsHeader << '\n';
  }
  auto save = [&](const std::string& name) {
    if (!output_dir) return;
    const auto path = *output_dir / name;
    write_checkpoint(path, make_checkpoint(networks.parameters(), config_hash));
    summary.checkpoints.push_back(path);
  };

  std::int64_t env_steps = 0;
  double window_reward = 0.0, window_value = 0.0, window_reward_loss = 0.0, window_policy = 0.0;
  int window_episodes = 0, window_updates = 0;
  SelfPlayStats window_stats;

  for (int episode = 0; episode < config.episodes; ++episode) {
    if (stop_flag().load()) {
      summary.interrupted = true;
      break;
    }
    const double temperature = episode < config.episodes / 2 ? planner.temperature : config.late_temperature;
    Trajectory traj = self_play_episode(env, episode_seed(seed, static_cast<std::uint64_t>(episode) + 1), networks,
                                        planner, temperature, play_rng, &window_stats);
    env_steps += static_cast<std::int64_t>(traj.size());
    window_reward += traj.total_reward();
    window_episodes += 1;
    buffer.push(std::move(traj));
    summary.episodes = episode + 1;

    if (static_cast<int>(buffer.size()) >= config.warmup_episodes) {
      for (int u = 0; u < config.updates_per_episode; ++u) {
        const auto batch = sample_batch(buffer, config.batch_size, config.unroll_steps, config.td_steps,
                                        planner.mvc.gamma, env.num_actions(), sample_rng);
        auto lg = unrolled_loss(networks, batch, config.loss);
        if (config.max_grad_norm > 0 && lg.report.grad_norm > config.max_grad_norm) {
          const auto f = static_cast<Scalar>(config.max_grad_norm / lg.report.grad_norm);
          for (auto& g : lg.grads) g *= f;
        }
        adam_step(networks.parameters(), lg.grads, adam, config.adam);
        summary.gradient_steps += 1;
        window_value += lg.report.value_loss;
        window_reward_loss += lg.report.reward_loss;
        window_policy += lg.report.policy_loss;
        window_updates += 1;
        if (config.checkpoint_interval > 0 && summary.gradient_steps % config.checkpoint_interval == 0) {
          save("checkpoint_" + std::to_string(summary.gradient_steps) + ".bin");
        }
      }
    }

    if ((episode + 1) % config.log_interval == 0 || episode + 1 == config.episodes) {
      MetricsRow row;
      row.step = summary.gradient_steps;
      row.episodes = episode + 1;
      row.env_steps = env_steps;
      row.mean_reward = window_reward / window_episodes;
      if (window_updates > 0) {
        row.value_loss = window_value / window_updates;
        row.reward_loss = window_reward_loss / window_updates;
        row.policy_loss = window_policy / window_updates;
      }
      if (window_stats.simulations > 0) {
        row.nodes_per_sim =
            static_cast<double>(window_stats.nodes) / static_cast<double>(window_stats.simulations);
      }
      if (config.log_timing && window_stats.plans > 0) {
        row.plan_ms = 1000.0 * window_stats.plan_seconds / static_cast<double>(window_stats.plans);
      }
      summary.metrics.push_back(row);
      if (metrics) metrics << format_metrics_row(row) << '\n' << std::flush;
      window_reward = window_value = window_reward_loss = window_policy = 0.0;
      window_episodes = window_updates = 0;
      window_stats = {};
    }
  }
  if (summary.interrupted && window_episodes > 0 && metrics) {
    MetricsRow row;
    row.step = summary.gradient_steps;
    row.episodes = summary.episodes;
    row.env_steps = env_steps;
    row.mean_reward = window_reward / window_episodes;
    summary.metrics.push_back(row);
    metrics << format_metrics_row(row) << '\n' << std::flush;
  }
  save("checkpoint.bin");
  return summary;
}

template <typename Scalar>
EvalSummary evaluate(const NetworkBundle<Scalar>& networks, Environment& env, const PlannerConfig& planner,
                     int episodes, std::uint64_t seed) {
  if (episodes < 1) throw ConfigError("evaluation needs at least one episode");
  PlannerConfig greedy = planner;
  greedy.dirichlet_fraction = 0.0;
  Rng rng(seed);
  std::vector<double> returns;
  for (int e = 0; e < episodes; ++e) {
    // Evaluation layouts come from a seed stream disjoint from training's.
    const auto traj = self_play_episode(env, episode_seed(~seed, static_cast<std::uint64_t>(e)), networks, greedy,
                                        1e-6, rng);
    returns.push_back(traj.total_reward());
  }
  EvalSummary s;
  s.episodes = episodes;
  s.mean_reward = std::accumulate(returns.begin(), returns.end(), 0.0) / episodes;
  if (episodes > 1) {
    double ss = 0.0;
    for (double r : returns) ss += (r - s.mean_reward) * (r - s.mean_reward);
    s.standard_error = std::sqrt(ss / (episodes - 1)) / std::sqrt(static_cast<double>(episodes));
  }
  return s;
}

double random_policy_baseline(Environment& env, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw ConfigError("baseline needs at least one episode");
  Rng rng(seed);
  std::uniform_int_distribution<int> pick(0, env.num_actions() - 1);
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    env.reset(episode_seed(~seed, static_cast<std::uint64_t>(e)));
    while (!env.done()) total += env.step(pick(rng)).reward;
  }
  return total / episodes;
}

template LossVars<float> record_unrolled_loss(const NetworkBundle<float>&, const NetworkBundle<float>::Bound&,
                                              const UnrollBatch&, const LossWeights&);
template LossVars<double> record_unrolled_loss(const NetworkBundle<double>&, const NetworkBundle<double>::Bound&,
                                               const UnrollBatch&, const LossWeights&);
template LossGradients<float> unrolled_loss(const NetworkBundle<float>&, const UnrollBatch&, const LossWeights&);
template LossGradients<double> unrolled_loss(const NetworkBundle<double>&, const UnrollBatch&, const LossWeights&);
template Trajectory self_play_episode(Environment&, std::uint64_t, const NetworkBundle<float>&, const PlannerConfig&,
                                      double, Rng&, SelfPlayStats*);
template Trajectory self_play_episode(Environment&, std::uint64_t, const NetworkBundle<double>&, const PlannerConfig&,
                                      double, Rng&, SelfPlayStats*);
template TrainSummary train(const TrainConfig&, const PlannerConfig&, NetworkBundle<float>&, Environment&,
                            std::uint64_t, std::uint64_t, const std::optional<std::filesystem::path>&);
template TrainSummary train(const TrainConfig&, const PlannerConfig&, NetworkBundle<double>&, Environment&,
                            std::uint64_t, std::uint64_t, const std::optional<std::filesystem::path>&);
template EvalSummary evaluate(const NetworkBundle<float>&, Environment&, const PlannerConfig&, int, std::uint64_t);
template EvalSummary evaluate(const NetworkBundle<double>&, Environment&, const PlannerConfig&, int, std::uint64_t);

}  // namespace tz
