#include "transzero/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tz {

std::string to_string(PlannerMode mode) {
  switch (mode) {
    case PlannerMode::parallel_mvc:
      return "parallel_mvc";
    case PlannerMode::seq_mvc:
      return "seq_mvc";
    case PlannerMode::seq_counts:
      return "seq_counts";
  }
  return "unknown";
}

PlannerMode parse_planner_mode(const std::string& name) {
  if (name == "parallel_mvc") return PlannerMode::parallel_mvc;
  if (name == "seq_mvc") return PlannerMode::seq_mvc;
  if (name == "seq_counts") return PlannerMode::seq_counts;
  throw ConfigError("planner.mode must be one of parallel_mvc, seq_mvc, seq_counts (got '" + name + "')");
}

void PlannerConfig::validate() const {
  if (num_simulations < 0) throw ConfigError("planner.num_simulations must be non-negative");
  if (subtree_layers < 1) throw ConfigError("planner.subtree_layers must be at least 1");
  if (!(temperature > 0)) throw ConfigError("planner.temperature must be positive");
  if (!(dirichlet_alpha > 0)) throw ConfigError("planner.dirichlet_alpha must be positive");
  if (!(dirichlet_fraction >= 0 && dirichlet_fraction <= 1)) {
    throw ConfigError("planner.dirichlet_fraction must lie in [0, 1]");
  }
  if (max_depth < 1) throw ConfigError("planner.max_depth must be at least 1");
  if (max_nodes < 2) throw ConfigError("planner.max_nodes must be at least 2");
  mvc.validate();
}

namespace {

// Running bounds for the visit-count baseline.
struct MinMaxStats {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void update(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double normalize(double v) const { return hi > lo ? (v - lo) / (hi - lo) : v; }
};

double mean_value(const SearchNode& n) { return n.visits > 0 ? n.value_sum / n.visits : 0.0; }

// Selection rule with visit counts:
//   Q(x+a) + c_puct * p(x,a) * sqrt(sum_b N(x+b)) / (1 + N(x+a)).
template <typename Scalar>
int counts_select(const SearchTree<Scalar>& tree, NodeId id, const MvcParams& params, const MinMaxStats& stats) {
  const auto& n = tree.node(id);
  int total = 0;
  for (NodeId c : n.children) total += c == kNoNode ? 0 : tree.node(c).visits;
  const double root_total = std::sqrt(static_cast<double>(total));
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < tree.num_actions(); ++a) {
    const NodeId c = n.children[static_cast<std::size_t>(a)];
    const int visits = c == kNoNode ? 0 : tree.node(c).visits;
    double q = 0.0;
    if (visits > 0) {
      const auto& cn = tree.node(c);
      q = params.normalize_q ? stats.normalize(cn.reward + params.gamma * mean_value(cn))
                             : cn.reward + params.gamma * mean_value(cn);
    }
    const double s = q + params.c_puct * n.prior[static_cast<std::size_t>(a)] * root_total / (1.0 + visits);
    if (s > best_score) {
      best_score = s;
      best = a;
    }
  }
  return best;
}

template <typename Scalar>
void counts_backup(SearchTree<Scalar>& tree, NodeId leaf, const MvcParams& params, MinMaxStats& stats) {
  double g = tree.node(leaf).value;
  for (NodeId at = leaf; at != kNoNode; at = tree.node(at).parent) {
    auto& n = tree.node(at);
    n.value_sum += g;
    n.visits += 1;
    stats.update(n.reward + params.gamma * mean_value(n));
    g = n.reward + params.gamma * g;
  }
}

std::vector<double> dirichlet(int k, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> x(static_cast<std::size_t>(k));
  double total = 0.0;
  for (auto& v : x) {
    v = gamma(rng);
    total += v;
  }
  if (total <= 0) return std::vector<double>(static_cast<std::size_t>(k), 1.0 / k);
  for (auto& v : x) v /= total;
  return x;
}

template <typename Scalar>
std::vector<double> real_action_policy(const SearchTree<Scalar>& tree, const MvcParams& params) {
  const auto pi = mvc_policy(tree, 0, params);
  std::vector<double> out(pi.begin(), pi.end() - 1);
  const double mass = std::accumulate(out.begin(), out.end(), 0.0);
  if (!(mass > 0)) return tree.node(0).prior;
  for (auto& p : out) p /= mass;
  return out;
}

}  // namespace

template <typename Scalar>
std::vector<NodeId> expand_parallel(SearchTree<Scalar>& tree, NodeId leaf, int layers,
                                    const NetworkBundle<Scalar>& networks) {
  const auto added = add_subtree_nodes(tree, leaf, layers);
  std::vector<NodeId> token_nodes = tree.path_nodes(leaf);
  const std::size_t first_new = token_nodes.size();
  token_nodes.insert(token_nodes.end(), added.begin(), added.end());

  std::vector<int> actions, depths;
  actions.reserve(token_nodes.size() - 1);
  depths.reserve(token_nodes.size() - 1);
  for (std::size_t i = 1; i < token_nodes.size(); ++i) {
    actions.push_back(tree.node(token_nodes[i]).action_from_parent);
    depths.push_back(tree.node(token_nodes[i]).depth);
  }
  const auto mask = build_tree_mask(tree, token_nodes);
  const auto tokens = networks.embed_actions(actions, depths);
  const Tensor<Scalar> out = networks.dynamics_forward(tree.root_token(), tokens, mask);
  const Tensor<Scalar> latents = out.bottomRows(static_cast<Eigen::Index>(added.size()));
  const auto preds = networks.predict_batch(latents);
  for (std::size_t i = 0; i < added.size(); ++i) {
    tree.set_outputs(added[i], preds[i], out.row(static_cast<Eigen::Index>(first_new + i)));
  }
  return added;
}

template <typename Scalar>
NodeId expand_sequential(SearchTree<Scalar>& tree, NodeId leaf, int action, const NetworkBundle<Scalar>& networks) {
  const NodeId id = tree.add_child(leaf, action);
  const auto actions = tree.path_actions(id);
  std::vector<int> depths(actions.size());
  std::iota(depths.begin(), depths.end(), 1);
  const auto tokens = networks.embed_actions(actions, depths);
  const Tensor<Scalar> out =
      networks.dynamics_forward(tree.root_token(), tokens, AttentionMask::causal(1 + static_cast<Eigen::Index>(actions.size())));
  const RowVector<Scalar> latent = out.row(out.rows() - 1);
  tree.set_outputs(id, networks.predict(latent), latent);
  return id;
}

template <typename Scalar>
PlanResult<Scalar> plan(std::span<const Scalar> observation, const NetworkBundle<Scalar>& networks,
                        const PlannerConfig& config, Rng& rng, const std::vector<ActionPath>* schedule) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const int A = networks.config().num_actions;
  auto tree = std::make_shared<SearchTree<Scalar>>(A, config.max_nodes);

  tree->set_root_token(networks.represent(observation));
  const Tensor<Scalar> root_out =
      networks.dynamics_forward(tree->root_token(), TokenSequence<Scalar>{Tensor<Scalar>(0, networks.config().d_model), {}},
                                AttentionMask::causal(1));
  const RowVector<Scalar> root_latent = root_out.row(0);
  Prediction root_pred = networks.predict(root_latent);
  root_pred.reward = 0.0;
  tree->set_outputs(0, root_pred, root_latent);
  q_backup(*tree, 0, config.mvc);

  PlanResult<Scalar> result;
  if (config.num_simulations > 0 && config.dirichlet_fraction > 0) {
    auto& prior = tree->node(0).prior;
    const auto noise = dirichlet(A, config.dirichlet_alpha, rng);
    for (int a = 0; a < A; ++a) {
      auto& p = prior[static_cast<std::size_t>(a)];
      p = (1.0 - config.dirichlet_fraction) * p + config.dirichlet_fraction * noise[static_cast<std::size_t>(a)];
    }
  }

  MinMaxStats count_stats;
  for (int sim = 0; sim < config.num_simulations; ++sim) {
    const ActionPath* forced =
        schedule && static_cast<std::size_t>(sim) < schedule->size() ? &(*schedule)[static_cast<std::size_t>(sim)] : nullptr;

    if (config.mode == PlannerMode::parallel_mvc) {
      NodeId leaf = 0;
      if (forced) {
        leaf = tree->find(*forced);
        if (leaf == kNoNode) throw UsageError("schedule names a leaf that is not in the tree");
      } else {
        while (!tree->node(leaf).is_leaf()) {
          leaf = tree->node(leaf).children[static_cast<std::size_t>(puct_select(*tree, leaf, config.mvc))];
        }
      }
      const int room = config.max_depth - tree->node(leaf).depth;
      const int layers = std::min(config.subtree_layers, room);
      if (layers < config.subtree_layers) ++result.truncated_expansions;
      if (layers < 1) continue;
      expand_parallel(*tree, leaf, layers, networks);
      backup_depth_parallel(*tree, leaf, config.mvc);
      result.expansions.push_back(tree->path_actions(leaf));
      continue;
    }

    NodeId parent = 0;
    int action = 0;
    if (forced) {
      if (forced->empty()) throw UsageError("schedule entry for a sequential mode must name a non-root node");
      parent = tree->find(ActionPath(forced->begin(), forced->end() - 1));
      action = forced->back();
      if (parent == kNoNode) throw UsageError("schedule names a node whose parent is not in the tree");
    } else {
      while (true) {
        action = config.mode == PlannerMode::seq_counts ? counts_select(*tree, parent, config.mvc, count_stats)
                                                        : puct_select(*tree, parent, config.mvc);
        const NodeId child = tree->node(parent).children[static_cast<std::size_t>(action)];
        if (child == kNoNode) break;
        parent = child;
      }
    }
    if (tree->node(parent).depth + 1 > config.max_depth) {
      ++result.truncated_expansions;
      continue;
    }
    const NodeId created = expand_sequential(*tree, parent, action, networks);
    if (config.mode == PlannerMode::seq_counts) {
      q_backup(*tree, created, config.mvc);
      counts_backup(*tree, created, config.mvc, count_stats);
    } else {
      backup_path(*tree, created, config.mvc);
    }
    result.expansions.push_back(tree->path_actions(created));
  }

  const auto& root = tree->node(0);
  if (config.num_simulations == 0 || root.is_leaf()) {
    result.root_policy = root_pred.prior;
    result.root_value = root_pred.value;
  } else if (config.mode == PlannerMode::seq_counts) {
    result.root_policy.assign(static_cast<std::size_t>(A), 0.0);
    double total = 0.0;
    for (int a = 0; a < A; ++a) {
      const NodeId c = root.children[static_cast<std::size_t>(a)];
      const double n = c == kNoNode ? 0.0 : tree->node(c).visits;
      result.root_policy[static_cast<std::size_t>(a)] = n;
      total += n;
    }
    for (auto& p : result.root_policy) p /= total;
    result.root_value = mean_value(root);
  } else {
    result.root_policy = real_action_policy(*tree, config.mvc);
    const auto pi = mvc_policy(*tree, 0, config.mvc);
    double v = pi.back() * root.value;
    for (int a = 0; a < A; ++a) {
      const NodeId c = root.children[static_cast<std::size_t>(a)];
      if (pi[static_cast<std::size_t>(a)] > 0) v += pi[static_cast<std::size_t>(a)] * tree->node(c).q_value;
    }
    result.root_value = v;
  }
  result.actions_considered = tree->size() - 1;
  result.tree = std::move(tree);
  result.wall_time = std::chrono::steady_clock::now() - start;
  return result;
}

std::vector<ActionPath> sequential_schedule(const std::vector<ActionPath>& parallel_leaves, int layers,
                                            int num_actions) {
  std::vector<ActionPath> out;
  for (const auto& leaf : parallel_leaves) {
    std::vector<ActionPath> frontier{leaf};
    for (int l = 0; l < layers; ++l) {
      std::vector<ActionPath> next;
      for (const auto& f : frontier) {
        for (int a = 0; a < num_actions; ++a) {
          ActionPath p = f;
          p.push_back(a);
          out.push_back(p);
          next.push_back(std::move(p));
        }
      }
      frontier = std::move(next);
    }
  }
  return out;
}

int act(std::span<const double> root_policy, double temperature, Rng& rng) {
  if (root_policy.empty()) throw DimensionError("act: empty policy");
  if (!(temperature > 0)) throw UsageError("act: temperature must be positive");
  if (temperature < 1e-3) {
    return static_cast<int>(std::max_element(root_policy.begin(), root_policy.end()) - root_policy.begin());
  }
  std::vector<double> w(root_policy.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = root_policy[i] > 0 ? std::log(root_policy[i]) / temperature : -std::numeric_limits<double>::infinity();
    top = std::max(top, w[i]);
  }
  double total = 0.0;
  for (auto& v : w) {
    v = std::isinf(v) ? 0.0 : std::exp(v - top);
    total += v;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng) * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    if (u < w[i]) return static_cast<int>(i);
    u -= w[i];
  }
  for (std::size_t i = w.size(); i-- > 0;) {
    if (w[i] > 0) return static_cast<int>(i);
  }
  return 0;
}

template std::vector<NodeId> expand_parallel(SearchTree<float>&, NodeId, int, const NetworkBundle<float>&);
template std::vector<NodeId> expand_parallel(SearchTree<double>&, NodeId, int, const NetworkBundle<double>&);
template NodeId expand_sequential(SearchTree<float>&, NodeId, int, const NetworkBundle<float>&);
template NodeId expand_sequential(SearchTree<double>&, NodeId, int, const NetworkBundle<double>&);
template PlanResult<float> plan(std::span<const float>, const NetworkBundle<float>&, const PlannerConfig&, Rng&,
                                const std::vector<ActionPath>*);
template PlanResult<double> plan(std::span<const double>, const NetworkBundle<double>&, const PlannerConfig&, Rng&,
                                 const std::vector<ActionPath>*);

}  // namespace tz
