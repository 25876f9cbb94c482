#pragma once

// Flat-array search tree with mean-variance constrained (MVC) evaluation.
//
// Each node x stores the network outputs r(x), v(x), p(x, .) and the evaluated
// statistics Q(x) and Var[Q(x)]. The tree policy at x ranges over the expanded
// children plus the simulation action a_v, whose value is v(x) itself:
//
//   pi(x, a)   ~ Var[Q(x+a)]^-1 * exp(beta * Qn(x+a))
//   Q(x)       = r(x) + gamma * sum_a pi(x, a) Q(x+a)
//   Var[Q(x)]  = Var[r] + gamma^2 * sum_a pi(x, a)^2 Var[Q(x+a)]
//
// with Q(x+a_v) = v(x), Var[Q(x+a_v)] = Var[v]. Qn is the min-max normalized Q
// over the values the node compares (its evaluated children and v(x)), which
// makes every node's statistics a pure function of its own subtree.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "transzero/mask.hpp"
#include "transzero/networks.hpp"

namespace tz {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

struct MvcParams {
  double beta = 10.0;
  double c_puct = 1.25;
  double gamma = 0.97;
  double reward_variance = 0.0;
  double value_variance = 1.0;
  bool normalize_q = true;

  void validate() const {
    if (!(beta > 0)) throw ConfigError("mvc.beta must be positive");
    if (!(c_puct > 0)) throw ConfigError("mvc.c_puct must be positive");
    if (!(gamma >= 0 && gamma <= 1)) throw ConfigError("mvc.gamma must lie in [0, 1]");
    if (!(reward_variance >= 0)) throw ConfigError("mvc.reward_variance must be non-negative");
    if (!(value_variance > 0)) throw ConfigError("mvc.value_variance must be positive");
  }
  bool operator==(const MvcParams&) const = default;
};

struct SearchNode {
  NodeId parent = kNoNode;
  int action_from_parent = -1;
  int depth = 0;
  NodeId latent_ref = kNoNode;
  double reward = 0.0;
  double value = 0.0;
  std::vector<double> prior;
  double q_value = 0.0;
  double variance = 0.0;
  bool has_stats = false;
  std::vector<NodeId> children;
  // Network outputs (r, v, p and latent) are present.
  bool expanded = false;
  // Visit-count statistics, used only by the counting planner.
  int visits = 0;
  double value_sum = 0.0;

  bool is_leaf() const {
    return std::all_of(children.begin(), children.end(), [](NodeId c) { return c == kNoNode; });
  }
};

template <typename Scalar>
class SearchTree {
 public:
  using Latent = RowVector<Scalar>;

  SearchTree(int num_actions, std::size_t capacity) : num_actions_(num_actions), capacity_(capacity) {
    if (num_actions < 1) throw ConfigError("tree needs at least one action");
    if (capacity < 1) throw ConfigError("tree capacity must be positive");
    nodes_.reserve(std::min<std::size_t>(capacity, 1 << 16));
    SearchNode root;
    root.children.assign(static_cast<std::size_t>(num_actions), kNoNode);
    root.latent_ref = 0;
    nodes_.push_back(std::move(root));
    latents_.emplace_back();
    by_depth_.push_back({0});
  }

  int num_actions() const { return num_actions_; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t capacity() const { return capacity_; }
  const SearchNode& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  SearchNode& node(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<SearchNode>& nodes() const { return nodes_; }
  const Latent& latent(NodeId id) const { return latents_.at(static_cast<std::size_t>(node(id).latent_ref)); }
  const std::vector<std::vector<NodeId>>& depth_index() const { return by_depth_; }
  int max_depth() const { return static_cast<int>(by_depth_.size()) - 1; }

  // The representation output fed to the dynamics network as token 0.
  const Latent& root_token() const { return root_token_; }
  void set_root_token(Latent token) { root_token_ = std::move(token); }

  NodeId add_child(NodeId parent, int action) {
    if (action < 0 || action >= num_actions_) throw DimensionError("add_child: action " + std::to_string(action));
    if (node(parent).children[static_cast<std::size_t>(action)] != kNoNode) {
      throw StructuralError("node " + std::to_string(parent) + " already has a child for action " +
                            std::to_string(action));
    }
    if (nodes_.size() >= capacity_) {
      throw ResourceError("search tree capacity of " + std::to_string(capacity_) + " nodes exceeded");
    }
    const auto id = static_cast<NodeId>(nodes_.size());
    SearchNode n;
    n.parent = parent;
    n.action_from_parent = action;
    n.depth = node(parent).depth + 1;
    n.children.assign(static_cast<std::size_t>(num_actions_), kNoNode);
    n.latent_ref = id;
    nodes_.push_back(std::move(n));
    latents_.emplace_back();
    node(parent).children[static_cast<std::size_t>(action)] = id;
    const auto depth = static_cast<std::size_t>(nodes_.back().depth);
    if (by_depth_.size() <= depth) by_depth_.resize(depth + 1);
    by_depth_[depth].push_back(id);
    return id;
  }

  void set_outputs(NodeId id, const Prediction& p, Latent latent) {
    if (static_cast<int>(p.prior.size()) != num_actions_) {
      throw DimensionError("prior has " + std::to_string(p.prior.size()) + " entries for " +
                           std::to_string(num_actions_) + " actions");
    }
    auto& n = node(id);
    n.reward = p.reward;
    n.value = p.value;
    n.prior = p.prior;
    n.expanded = true;
    latents_[static_cast<std::size_t>(n.latent_ref)] = std::move(latent);
  }

  // Actions from the root to `id`.
  std::vector<int> path_actions(NodeId id) const {
    std::vector<int> out;
    for (NodeId at = id; node(at).parent != kNoNode; at = node(at).parent) out.push_back(node(at).action_from_parent);
    std::reverse(out.begin(), out.end());
    return out;
  }

  // Node ids from the root down to `id`, both included.
  std::vector<NodeId> path_nodes(NodeId id) const {
    std::vector<NodeId> out;
    for (NodeId at = id; at != kNoNode; at = node(at).parent) out.push_back(at);
    std::reverse(out.begin(), out.end());
    return out;
  }

  NodeId find(const std::vector<int>& actions) const {
    NodeId at = 0;
    for (int a : actions) {
      if (a < 0 || a >= num_actions_) return kNoNode;
      at = node(at).children[static_cast<std::size_t>(a)];
      if (at == kNoNode) return kNoNode;
    }
    return at;
  }

 private:
  int num_actions_;
  std::size_t capacity_;
  std::vector<SearchNode> nodes_;
  std::vector<Latent> latents_;
  std::vector<std::vector<NodeId>> by_depth_;
  Latent root_token_;
};

namespace detail {

inline constexpr double kNormalizationFloor = 1e-12;
inline constexpr double kVarianceFloor = 1e-300;

template <typename Scalar>
bool evaluated_child(const SearchTree<Scalar>& tree, NodeId c) {
  if (c == kNoNode) return false;
  const auto& n = tree.node(c);
  if (!n.expanded || !n.has_stats) {
    throw StructuralError("child " + std::to_string(c) + " of node " + std::to_string(n.parent) +
                          " has no statistics yet (backup ordering bug)");
  }
  return true;
}

// Bounds over the values a node compares: v(x) and its evaluated children.
struct QRange {
  double lo = 0.0, hi = 0.0;
  double normalize(double q) const { return hi - lo > kNormalizationFloor ? (q - lo) / (hi - lo) : 0.5; }
};

template <typename Scalar>
QRange local_range(const SearchTree<Scalar>& tree, NodeId id) {
  const auto& n = tree.node(id);
  QRange r{n.value, n.value};
  for (NodeId c : n.children) {
    if (c == kNoNode || !tree.node(c).has_stats) continue;
    r.lo = std::min(r.lo, tree.node(c).q_value);
    r.hi = std::max(r.hi, tree.node(c).q_value);
  }
  return r;
}

}  // namespace detail

// Tree policy over A_v at node `id`: entries 0..|A|-1 for real actions (zero
// where no evaluated child exists), entry |A| for a_v.
template <typename Scalar>
std::vector<double> mvc_policy(const SearchTree<Scalar>& tree, NodeId id, const MvcParams& params) {
  const auto& n = tree.node(id);
  const int A = tree.num_actions();
  std::vector<double> pi(static_cast<std::size_t>(A) + 1, 0.0);
  std::vector<double> log_w(static_cast<std::size_t>(A) + 1, -std::numeric_limits<double>::infinity());
  const auto range = detail::local_range(tree, id);
  auto score = [&](double q, double var) {
    const double qn = params.normalize_q ? range.normalize(q) : q;
    return -std::log(std::max(var, detail::kVarianceFloor)) + params.beta * qn;
  };
  bool any_child = false;
  for (int a = 0; a < A; ++a) {
    const NodeId c = n.children[static_cast<std::size_t>(a)];
    if (!detail::evaluated_child(tree, c)) continue;
    any_child = true;
    log_w[static_cast<std::size_t>(a)] = score(tree.node(c).q_value, tree.node(c).variance);
  }
  if (!any_child) {
    pi[static_cast<std::size_t>(A)] = 1.0;
    return pi;
  }
  log_w[static_cast<std::size_t>(A)] = score(n.value, params.value_variance);
  const double m = *std::max_element(log_w.begin(), log_w.end());
  double total = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    pi[i] = std::isinf(log_w[i]) ? 0.0 : std::exp(log_w[i] - m);
    total += pi[i];
  }
  for (auto& p : pi) p /= total;
  return pi;
}

// Recomputes Q and Var[Q] of `id` from its children; returns (Q, Var).
template <typename Scalar>
std::pair<double, double> q_backup(SearchTree<Scalar>& tree, NodeId id, const MvcParams& params) {
  auto& n = tree.node(id);
  if (!n.expanded) throw StructuralError("q_backup on node " + std::to_string(id) + " without network outputs");
  const auto pi = mvc_policy(tree, id, params);
  const int A = tree.num_actions();
  const double g = params.gamma;
  const double pv = pi[static_cast<std::size_t>(A)];
  double mean = pv * n.value;
  double spread = pv * pv * params.value_variance;
  for (int a = 0; a < A; ++a) {
    const double p = pi[static_cast<std::size_t>(a)];
    if (p == 0.0) continue;
    const auto& c = tree.node(n.children[static_cast<std::size_t>(a)]);
    mean += p * c.q_value;
    spread += p * p * c.variance;
  }
  n.q_value = n.reward + g * mean;
  n.variance = params.reward_variance + g * g * spread;
  n.has_stats = true;
  return {n.q_value, n.variance};
}

// q_backup on `id` and then on every ancestor up to the root.
template <typename Scalar>
void backup_path(SearchTree<Scalar>& tree, NodeId id, const MvcParams& params) {
  for (NodeId at = id; at != kNoNode; at = tree.node(at).parent) q_backup(tree, at, params);
}

// Updates the whole subtree under `subtree_root` one depth at a time, deepest
// first, then refreshes the ancestors of `subtree_root`. Nodes sharing a depth
// only read their children, so each depth is an independent batch.
template <typename Scalar>
void backup_depth_parallel(SearchTree<Scalar>& tree, NodeId subtree_root, const MvcParams& params) {
  std::vector<std::vector<NodeId>> levels{{subtree_root}};
  while (true) {
    std::vector<NodeId> next;
    for (NodeId id : levels.back()) {
      for (NodeId c : tree.node(id).children) {
        if (c != kNoNode) next.push_back(c);
      }
    }
    if (next.empty()) break;
    levels.push_back(std::move(next));
  }
  for (auto level = levels.rbegin(); level != levels.rend(); ++level) {
    for (NodeId id : *level) q_backup(tree, id, params);
  }
  for (NodeId at = tree.node(subtree_root).parent; at != kNoNode; at = tree.node(at).parent) q_backup(tree, at, params);
}

// PUCT over real actions with the variance-based exploration term:
//   Qn(x+a) + c_puct * p(x,a) * sqrt(1/Var[Q(x)]) / (1 + 1/Var[Q(x+a)]).
// Missing children score Qn = 0.5 (0 without normalization) and 1/Var = 0.
// Ties go to the lowest action id.
template <typename Scalar>
int puct_select(const SearchTree<Scalar>& tree, NodeId id, const MvcParams& params) {
  const auto& n = tree.node(id);
  if (n.prior.empty()) throw StructuralError("puct_select on node " + std::to_string(id) + " without a prior");
  const auto range = detail::local_range(tree, id);
  const double parent_precision = std::sqrt(1.0 / std::max(n.variance, detail::kVarianceFloor));
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < tree.num_actions(); ++a) {
    const NodeId c = n.children[static_cast<std::size_t>(a)];
    double qn = params.normalize_q ? 0.5 : 0.0;
    double child_precision = 0.0;
    if (c != kNoNode && tree.node(c).has_stats) {
      const auto& cn = tree.node(c);
      qn = params.normalize_q ? range.normalize(cn.q_value) : cn.q_value;
      child_precision = 1.0 / std::max(cn.variance, detail::kVarianceFloor);
    }
    const double s =
        qn + params.c_puct * n.prior[static_cast<std::size_t>(a)] * parent_precision / (1.0 + child_precision);
    if (s > best_score) {
      best_score = s;
      best = a;
    }
  }
  return best;
}

// Appends the complete subtree of `layers` levels under `root_id` in
// breadth-first order: |A| + |A|^2 + ... + |A|^layers nodes. New nodes carry
// no network outputs yet.
template <typename Scalar>
std::vector<NodeId> add_subtree_nodes(SearchTree<Scalar>& tree, NodeId root_id, int layers) {
  if (layers < 1) throw UsageError("add_subtree_nodes: layers must be at least 1");
  if (!tree.node(root_id).is_leaf()) {
    throw StructuralError("add_subtree_nodes: node " + std::to_string(root_id) + " already has children");
  }
  std::size_t needed = 0, width = 1;
  for (int l = 0; l < layers; ++l) {
    width *= static_cast<std::size_t>(tree.num_actions());
    needed += width;
  }
  if (tree.size() + needed > tree.capacity()) {
    throw ResourceError("subtree of " + std::to_string(needed) + " nodes does not fit: tree holds " +
                        std::to_string(tree.size()) + " of " + std::to_string(tree.capacity()));
  }
  std::vector<NodeId> added;
  added.reserve(needed);
  std::vector<NodeId> frontier{root_id};
  for (int l = 0; l < layers; ++l) {
    std::vector<NodeId> next;
    for (NodeId parent : frontier) {
      for (int a = 0; a < tree.num_actions(); ++a) {
        const NodeId c = tree.add_child(parent, a);
        added.push_back(c);
        next.push_back(c);
      }
    }
    frontier = std::move(next);
  }
  return added;
}

// allow[i][j] iff node_ids[j] is node_ids[i] or one of its ancestors. Every
// node after position 0 must have its parent earlier in the list.
template <typename Scalar>
AttentionMask build_tree_mask(const SearchTree<Scalar>& tree, const std::vector<NodeId>& node_ids) {
  if (node_ids.empty()) throw DimensionError("build_tree_mask: no nodes");
  std::vector<int> parent_token(node_ids.size(), -1);
  std::vector<int> position(tree.size(), -1);
  for (std::size_t i = 0; i < node_ids.size(); ++i) {
    const NodeId id = node_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= tree.size()) {
      throw DimensionError("build_tree_mask: node " + std::to_string(id) + " not in tree");
    }
    if (position[static_cast<std::size_t>(id)] >= 0) {
      throw StructuralError("build_tree_mask: node " + std::to_string(id) + " listed twice");
    }
    position[static_cast<std::size_t>(id)] = static_cast<int>(i);
    if (i == 0) continue;
    const NodeId p = tree.node(id).parent;
    const int at = p == kNoNode ? -1 : position[static_cast<std::size_t>(p)];
    if (at < 0) {
      throw StructuralError("build_tree_mask: node " + std::to_string(id) +
                            " appears before its parent (ordering is not topological)");
    }
    parent_token[i] = at;
  }
  return AttentionMask::from_parents(parent_token);
}

// Human-readable dump, one line per node:
//   id parent action depth r v Q Var | pi(a_0) ... pi(a_{|A|-1}) pi(a_v)
template <typename Scalar>
std::string dump_tree(const SearchTree<Scalar>& tree, const MvcParams& params) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "# id parent action depth reward value q variance | policy(actions..., a_v)\n";
  for (std::size_t i = 0; i < tree.size(); ++i) {
    const auto& n = tree.nodes()[i];
    os << i << ' ' << n.parent << ' ' << n.action_from_parent << ' ' << n.depth << ' ' << n.reward << ' ' << n.value
       << ' ' << n.q_value << ' ' << n.variance << " |";
    if (n.expanded && n.has_stats) {
      for (double p : mvc_policy(tree, static_cast<NodeId>(i), params)) os << ' ' << p;
    } else {
      os << " -";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace tz
