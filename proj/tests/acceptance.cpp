// Prints one PASS/FAIL line per acceptance criterion; exits 1 if any fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "support.hpp"
#include "transzero/bench.hpp"
#include "transzero/config.hpp"
#include "transzero/gradcheck.hpp"
#include "transzero/ops.hpp"

using namespace tz;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

PlannerConfig quiet(PlannerMode mode, int sims, int layers) {
  PlannerConfig c;
  c.mode = mode;
  c.num_simulations = sims;
  c.subtree_layers = layers;
  c.dirichlet_fraction = 0.0;
  return c;
}

template <typename Scalar>
RowVector<Scalar> path_latent(const NetworkBundle<Scalar>& nets, const RowVector<Scalar>& root,
                              const std::vector<int>& actions) {
  std::vector<int> depths(actions.size());
  std::iota(depths.begin(), depths.end(), 1);
  const auto n = static_cast<Eigen::Index>(actions.size());
  const TokenSequence<Scalar> seq = n == 0 ? TokenSequence<Scalar>{Tensor<Scalar>(0, nets.config().d_model), {}}
                                           : nets.embed_actions(actions, depths);
  return nets.dynamics_forward(root, seq, AttentionMask::causal(n + 1)).row(n);
}

Outcome mask_correctness() {
  double worst = 0.0;
  std::size_t nodes = 0;
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 7000);
    const int A = 2 + seed % 3;
    const NetworkBundle<double> nets(tzt::tiny_config(5, A), static_cast<std::uint64_t>(seed) + 1);
    const auto obs = tzt::random_observation<double>(5, rng);
    Rng r(static_cast<std::uint64_t>(seed));
    const auto result = plan<double>(obs, nets, quiet(PlannerMode::parallel_mvc, 1 + seed % 4, 1 + seed % 3), r);
    const auto root = nets.represent(obs);
    for (NodeId id = 0; id < static_cast<NodeId>(result.tree->size()); ++id) {
      const auto expect = path_latent(nets, root, result.tree->path_actions(id));
      worst = std::max(worst, (result.tree->latent(id) - expect).cwiseAbs().maxCoeff());
      ++nodes;
    }
  }
  return {worst <= 1e-10, std::to_string(nodes) + " nodes, max diff " + fmt("%.3g", worst)};
}

void post_order(SearchTree<double>& tree, NodeId id, const MvcParams& p) {
  for (NodeId c : tree.node(id).children) {
    if (c != kNoNode) post_order(tree, c, p);
  }
  q_backup(tree, id, p);
}

Outcome backup_equivalence() {
  double worst = 0.0;
  for (int seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 8000);
    auto a = tzt::random_tree(2 + seed % 3, 5 + seed % 40, 5, rng);
    auto b = a;
    MvcParams p;
    p.reward_variance = 0.05 * (seed % 3);
    backup_depth_parallel(a, 0, p);
    post_order(b, 0, p);
    for (std::size_t i = 0; i < a.size(); ++i) {
      worst = std::max({worst, std::abs(a.nodes()[i].q_value - b.nodes()[i].q_value),
                        std::abs(a.nodes()[i].variance - b.nodes()[i].variance)});
    }
  }
  return {worst <= 1e-10, "200 trees, max diff " + fmt("%.3g", worst)};
}

// Written from the recursive definitions, top-down.
std::pair<double, double> recursive_mvc(const SearchTree<double>& tree, NodeId id, const MvcParams& p,
                                        std::vector<std::pair<double, double>>& out) {
  const auto& n = tree.node(id);
  std::vector<std::pair<double, double>> opts;
  for (NodeId c : n.children) {
    if (c != kNoNode) opts.push_back(recursive_mvc(tree, c, p, out));
  }
  const bool leaf = opts.empty();
  opts.emplace_back(n.value, p.value_variance);
  double lo = opts[0].first, hi = opts[0].first;
  for (const auto& o : opts) {
    lo = std::min(lo, o.first);
    hi = std::max(hi, o.first);
  }
  std::vector<double> w;
  for (const auto& o : opts) {
    const double qn = hi - lo > 1e-12 ? (o.first - lo) / (hi - lo) : 0.5;
    w.push_back(leaf ? 1.0 : std::exp(p.beta * qn) / o.second);
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double q = 0.0, v = 0.0;
  for (std::size_t i = 0; i < opts.size(); ++i) {
    q += w[i] / total * opts[i].first;
    v += (w[i] / total) * (w[i] / total) * opts[i].second;
  }
  out[static_cast<std::size_t>(id)] = {n.reward + p.gamma * q, p.reward_variance + p.gamma * p.gamma * v};
  return out[static_cast<std::size_t>(id)];
}

Outcome mvc_oracle() {
  double worst = 0.0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 9000);
    auto tree = tzt::random_tree(2 + seed % 3, 4 + seed % 30, 5, rng);
    MvcParams p;
    p.beta = 0.5 + seed % 7;
    p.gamma = 0.8 + 0.01 * (seed % 20);
    p.value_variance = 0.5 + 0.25 * (seed % 4);
    backup_depth_parallel(tree, 0, p);
    std::vector<std::pair<double, double>> expect(tree.size());
    recursive_mvc(tree, 0, p, expect);
    for (std::size_t i = 0; i < tree.size(); ++i) {
      worst = std::max({worst, std::abs(tree.nodes()[i].q_value - expect[i].first),
                        std::abs(tree.nodes()[i].variance - expect[i].second)});
    }
  }
  return {worst <= 1e-10, "100 trees, max diff " + fmt("%.3g", worst)};
}

Outcome mvc_limits() {
  double var_dist = 0.0, min_mass = 1.0;
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 10000);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int A = 2 + seed % 3;
    SearchTree<double> tree(A, 8);
    Prediction pr;
    pr.prior.assign(static_cast<std::size_t>(A), 1.0 / A);
    tree.set_outputs(0, pr, {});
    std::vector<int> slots(static_cast<std::size_t>(A) + 1);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    tree.node(0).value = slots.back() / (A + 1.0);
    for (int a = 0; a < A; ++a) {
      const NodeId c = tree.add_child(0, a);
      tree.set_outputs(c, pr, {});
      tree.node(c).q_value = slots[static_cast<std::size_t>(a)] / (A + 1.0);
      tree.node(c).variance = 0.2 + u(rng);
      tree.node(c).has_stats = true;
    }
    MvcParams p;
    p.value_variance = 0.2 + u(rng);
    p.beta = 1e-9;
    const auto flat = mvc_policy(tree, 0, p);
    double total = 1.0 / p.value_variance;
    for (int a = 0; a < A; ++a) total += 1.0 / tree.node(a + 1).variance;
    var_dist = std::max(var_dist, std::abs(flat.back() - 1.0 / p.value_variance / total));
    for (int a = 0; a < A; ++a) {
      var_dist = std::max(var_dist, std::abs(flat[static_cast<std::size_t>(a)] - 1.0 / tree.node(a + 1).variance / total));
    }
    p.beta = 1e3;
    const auto best = static_cast<std::size_t>(std::max_element(slots.begin(), slots.end()) - slots.begin());
    min_mass = std::min(min_mass, mvc_policy(tree, 0, p)[best]);
  }
  return {var_dist <= 1e-6 && min_mass >= 1.0 - 1e-6,
          "inverse-variance L-inf " + fmt("%.3g", var_dist) + ", greedy mass >= " + fmt("%.9f", min_mass)};
}

Outcome gradient_suite() {
  double worst = 0.0;
  int checks = 0;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 11000);
    const NetworkBundle<double> nets(tzt::tiny_config(5, 3), static_cast<std::uint64_t>(seed));
    std::vector<int> parent{-1, 0, 0, 1, 3};
    const auto mask = AttentionMask::from_parents(parent);
    const Tensor<double> w = tzt::random_tensor<double>(8, 1, rng);
    auto readout = [&](Var<double> y) {
      auto p = matmul(y, y.tape->constant(w));
      return weighted_squared_error(p, Tensor<double>(Tensor<double>::Zero(p.rows(), 1)),
                                    Tensor<double>(Tensor<double>::Ones(p.rows(), 1)));
    };
    auto check = [&](double e) {
      worst = std::max(worst, e);
      ++checks;
    };
    check(finite_diff_check<double>([&](Tape<double>& t, Var<double> x) { return readout(nets.represent(nets.bind(t), x)); },
                                    tzt::random_tensor<double>(2, 5, rng)));
    check(finite_diff_check<double>(
        [&](Tape<double>& t, Var<double> x) { return readout(nets.dynamics(nets.bind(t), x, mask)); },
        tzt::random_tensor<double>(5, 8, rng)));
    check(finite_diff_check<double>(
        [&](Tape<double>& t, Var<double> x) {
          const auto p = nets.predict(nets.bind(t), x);
          return add(add(sum(p.value), sum(p.reward)),
                     cross_entropy(p.policy_logits, Tensor<double>(Tensor<double>::Constant(3, 3, 1.0 / 3.0)),
                                   Tensor<double>(Tensor<double>::Ones(3, 1))));
        },
        tzt::random_tensor<double>(3, 8, rng)));
    const auto e = nets.parameter_index("action_embedding");
    check(finite_diff_check<double>(
        [&](Tape<double>& t, Var<double> x) {
          auto b = nets.bind(t);
          b.p[e] = x;
          return readout(nets.embed_actions(b, std::vector<int>{0, 2, 1, 1}, std::vector<int>{1, 1, 2, 3}));
        },
        nets.parameters()[e].value));

    // Full unrolled loss through representation and dynamics parameters.
    ReplayBuffer buffer(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 3; ++k) {
      Trajectory tr;
      for (int s = 0; s < 2 + k; ++s) {
        tr.observations.push_back({u(rng), u(rng), u(rng), u(rng), u(rng)});
        tr.actions.push_back(s % 3);
        tr.rewards.push_back(s == 1 + k ? 7.0 : 0.0);
        tr.policies.push_back({0.2, 0.3, 0.5});
        tr.root_values.push_back(u(rng));
      }
      buffer.push(tr);
    }
    Rng r(static_cast<std::uint64_t>(seed));
    const auto batch = sample_batch(buffer, 3, 3, 2, 0.95, 3, r);
    for (const char* name : {"representation.in.weight", "dynamics.block0.attn.query.weight", "prediction.reward.out.weight"}) {
      const auto k = nets.parameter_index(name);
      check(finite_diff_check<double>(
          [&](Tape<double>& t, Var<double> x) {
            auto b = nets.bind(t);
            b.p[k] = x;
            return record_unrolled_loss(nets, b, batch, LossWeights{}).total;
          },
          nets.parameters()[k].value));
    }
  }
  return {worst < 1e-4, std::to_string(checks) + " checks over 20 seeds, max relative error " + fmt("%.3g", worst)};
}

Outcome ancestry_gradient() {
  int violations = 0, live = 0;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 12000);
    const NetworkBundle<double> nets(tzt::tiny_config(5, 4), static_cast<std::uint64_t>(seed));
    std::vector<int> parent{-1};
    for (int i = 1; i <= 8; ++i) parent.push_back(std::uniform_int_distribution<int>(0, i - 1)(rng));
    const auto mask = AttentionMask::from_parents(parent);
    for (int i = 0; i <= 8; ++i) {
      Tape<double> tape;
      auto seq = tape.variable(tzt::random_tensor<double>(9, 8, rng));
      const auto out = nets.dynamics(nets.bind(tape), seq, mask);
      tape.backward(sum(matmul(gather_rows(out, {i}), tape.constant(tzt::random_tensor<double>(8, 1, rng)))));
      for (int j = 0; j <= 8; ++j) {
        bool ancestor = false;
        for (int at = i; at >= 0; at = parent[static_cast<std::size_t>(at)]) ancestor |= at == j;
        const double g = tape.grad(seq).row(j).cwiseAbs().maxCoeff();
        if (!ancestor && g != 0.0) ++violations;
        if (ancestor && g > 0.0) ++live;
      }
    }
  }
  return {violations == 0 && live > 0, "20 trees x 9 outputs, " + std::to_string(violations) + " non-zero non-ancestor gradients"};
}

Outcome mode_equivalence() {
  double worst = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 13000);
    const int A = 2 + seed % 3;
    const NetworkBundle<float> nets(tzt::tiny_config(5, A), static_cast<std::uint64_t>(seed));
    const auto obs = tzt::random_observation<float>(5, rng);
    Rng r1(static_cast<std::uint64_t>(seed)), r2(static_cast<std::uint64_t>(seed));
    const auto par = plan<float>(obs, nets, quiet(PlannerMode::parallel_mvc, 4, 1), r1);
    const auto schedule = sequential_schedule(par.expansions, 1, A);
    const auto seq = plan<float>(obs, nets, quiet(PlannerMode::seq_mvc, static_cast<int>(schedule.size()), 1), r2, &schedule);
    worst = std::max(worst, plan_difference(par, seq));
  }
  return {worst <= 1e-6, "20 nets, max diff " + fmt("%.3g", worst)};
}

Outcome expansion_counts() {
  SearchTree<double> a(3, 64), b(4, 128);
  const auto na = add_subtree_nodes(a, 0, 2).size();
  const auto nb = add_subtree_nodes(b, 0, 3).size();
  return {na == 12 && nb == 84, std::to_string(na) + " and " + std::to_string(nb)};
}

Outcome speedup() {
  RunConfig cfg;
  const NetworkBundle<float> nets(network_for(cfg), 0);
  GridWorld env(cfg.env);
  const auto obs = env.reset(episode_seed(0, 0));
  const std::vector<float> cast(obs.begin(), obs.end());
  BenchConfig b;
  b.simulations = {4};
  b.layers = {2};
  b.repetitions = 15;
  const auto rows = run_bench<float>(nets, cast, quiet(PlannerMode::parallel_mvc, 4, 2), b);
  const double ratio = rows[1].time_per_node_us / rows[0].time_per_node_us;
  return {ratio < 1.0, "48 nodes, 12 per simulation: per-node time parallel/sequential = " + fmt("%.3f", ratio) +
                           " (" + fmt("%.2f", rows[1].time_per_node_us) + " vs " +
                           fmt("%.2f", rows[0].time_per_node_us) + " us)"};
}

Outcome learning_smoke() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = load_config(TZ_SMOKE_CONFIG);
  GridWorld probe(cfg.env);
  const double baseline = random_policy_baseline(probe, 1000, 12345);
  std::ostringstream detail;
  detail << "random baseline " << fmt("%.3f", baseline) << "; greedy means";
  int good = 0, above = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    GridWorld env(cfg.env);
    NetworkBundle<float> nets(network_for(cfg), seed);
    train(cfg.train, cfg.planner, nets, env, seed, config_hash(cfg), std::nullopt);
    const auto eval = evaluate(nets, env, cfg.planner, 100, seed);
    detail << " " << fmt("%.2f", eval.mean_reward);
    good += eval.mean_reward >= 5.0;
    above += eval.mean_reward > baseline;
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  detail << "; " << fmt("%.1f", minutes) << " min";
  return {good >= 2 && above == 3 && minutes <= 60.0, detail.str()};
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / "tz_acceptance_determinism";
  fs::remove_all(root);
  auto run = [&](const std::string& name) {
    const auto dir = root / name;
    const std::string cmd = std::string("\"") + TZ_CLI_PATH + "\" train -c \"" + TZ_SMOKE_CONFIG +
                            "\" --episodes 20 --seed 4 -o \"" + dir.string() + "\" >/dev/null";
    if (std::system(cmd.c_str()) != 0) return std::string();
    std::ifstream in(dir / "metrics.csv");
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const auto a = run("a"), b = run("b");
  fs::remove_all(root);
  const auto rows = std::count(a.begin(), a.end(), '\n');
  return {!a.empty() && a == b, std::to_string(rows) + " lines, " + (a == b ? "identical" : "different")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"mask correctness", mask_correctness},   {"backup equivalence", backup_equivalence},
      {"MVC recursive oracle", mvc_oracle},    {"MVC beta limits", mvc_limits},
      {"gradient suite", gradient_suite},      {"ancestry zero gradient", ancestry_gradient},
      {"mode equivalence", mode_equivalence},  {"expansion counts", expansion_counts},
      {"per-node speedup", speedup},           {"learning smoke test", learning_smoke},
      {"training determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s %2zu %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(), s);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
