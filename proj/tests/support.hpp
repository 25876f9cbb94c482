#pragma once

#include <random>

#include "transzero/networks.hpp"
#include "transzero/tree.hpp"

namespace tzt {

template <typename Scalar>
tz::Tensor<Scalar> random_tensor(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  tz::Tensor<Scalar> t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(n(rng));
  return t;
}

inline tz::NetworkConfig tiny_config(int obs = 5, int actions = 3) {
  tz::NetworkConfig c;
  c.observation_size = obs;
  c.num_actions = actions;
  c.d_model = 8;
  c.layers = 2;
  c.heads = 2;
  c.ffn_hidden = 12;
  c.representation_hidden = 10;
  c.head_hidden = 6;
  return c;
}

template <typename Scalar>
std::vector<Scalar> random_observation(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Scalar> o(static_cast<std::size_t>(size));
  for (auto& v : o) v = static_cast<Scalar>(u(rng));
  return o;
}

// Random tree with made-up network outputs on every node. Each new node picks
// a random existing node with a free action slot, up to `max_depth`.
inline tz::SearchTree<double> random_tree(int actions, int nodes, int max_depth, std::mt19937_64& rng,
                                         std::size_t spare = 1) {
  tz::SearchTree<double> tree(actions, static_cast<std::size_t>(nodes) + spare);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto outputs = [&](tz::NodeId id) {
    tz::Prediction p;
    p.reward = id == 0 ? 0.0 : 2.0 * u(rng) - 0.5;
    p.value = 4.0 * u(rng) - 1.0;
    double total = 0.0;
    for (int a = 0; a < actions; ++a) {
      p.prior.push_back(u(rng) + 0.05);
      total += p.prior.back();
    }
    for (auto& x : p.prior) x /= total;
    tree.set_outputs(id, p, tz::RowVector<double>());
  };
  outputs(0);
  for (int k = 1; k < nodes; ++k) {
    std::vector<std::pair<tz::NodeId, int>> free;
    for (std::size_t i = 0; i < tree.size(); ++i) {
      const auto& n = tree.nodes()[i];
      if (n.depth >= max_depth) continue;
      for (int a = 0; a < actions; ++a) {
        if (n.children[static_cast<std::size_t>(a)] == tz::kNoNode) free.emplace_back(static_cast<tz::NodeId>(i), a);
      }
    }
    if (free.empty()) break;
    const auto [parent, action] = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
    outputs(tree.add_child(parent, action));
  }
  return tree;
}

}  // namespace tzt
