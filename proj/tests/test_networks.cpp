#include <doctest.h>

#include "support.hpp"
#include "transzero/checkpoint.hpp"
#include "transzero/gradcheck.hpp"
#include "transzero/ops.hpp"

using namespace tz;
using T = Tensor<double>;
using Nets = NetworkBundle<double>;

namespace {

struct RandomTree {
  std::vector<int> parent;   // token parents, parent[0] = -1
  std::vector<int> actions;  // per non-root token
  std::vector<int> depths;
};

RandomTree random_token_tree(int tokens, int num_actions, std::mt19937_64& rng) {
  RandomTree t;
  t.parent.push_back(-1);
  std::vector<int> depth{0};
  for (int i = 1; i <= tokens; ++i) {
    const int p = std::uniform_int_distribution<int>(0, i - 1)(rng);
    t.parent.push_back(p);
    depth.push_back(depth[static_cast<std::size_t>(p)] + 1);
    t.actions.push_back(std::uniform_int_distribution<int>(0, num_actions - 1)(rng));
    t.depths.push_back(depth.back());
  }
  return t;
}

// Output of token i computed from its own root path only.
RowVector<double> path_forward(const Nets& nets, const RowVector<double>& root, const RandomTree& t, int i) {
  std::vector<int> chain;
  for (int at = i; at > 0; at = t.parent[static_cast<std::size_t>(at)]) chain.push_back(at);
  std::reverse(chain.begin(), chain.end());
  if (chain.empty()) {
    TokenSequence<double> none{T(0, nets.config().d_model), {}};
    return nets.dynamics_forward(root, none, AttentionMask::causal(1)).row(0);
  }
  std::vector<int> actions, depths;
  for (int c : chain) {
    actions.push_back(t.actions[static_cast<std::size_t>(c - 1)]);
    depths.push_back(t.depths[static_cast<std::size_t>(c - 1)]);
  }
  const auto seq = nets.embed_actions(actions, depths);
  const auto n = static_cast<Eigen::Index>(chain.size());
  return nets.dynamics_forward(root, seq, AttentionMask::causal(n + 1)).row(n);
}

bool is_ancestor(const RandomTree& t, int j, int i) {
  for (int at = i; at >= 0; at = t.parent[static_cast<std::size_t>(at)]) {
    if (at == j) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("sinusoidal encoding matches the closed form") {
  for (int width : {4, 8, 9, 64}) {
    for (int depth : {1, 2, 7, 63}) {
      const auto pe = sinusoidal_encoding<double>(depth, width);
      for (int c = 0; c < width; ++c) {
        const long double freq = std::pow(10000.0L, -static_cast<long double>(2 * (c / 2)) / width);
        const long double expect = c % 2 == 0 ? std::sin(depth * freq) : std::cos(depth * freq);
        CHECK(std::abs(pe(c) - static_cast<double>(expect)) <= 1e-12);
      }
    }
  }
}

TEST_CASE("initialization is a pure function of the seed") {
  const Nets a(tzt::tiny_config(), 4), b(tzt::tiny_config(), 4), c(tzt::tiny_config(), 5);
  CHECK(weights_fingerprint(a.parameters()) == weights_fingerprint(b.parameters()));
  CHECK(weights_fingerprint(a.parameters()) != weights_fingerprint(c.parameters()));
  CHECK_THROWS_AS(Nets(NetworkConfig{}, 0), ConfigError);
  auto odd = tzt::tiny_config();
  odd.heads = 3;
  CHECK_THROWS_AS(Nets(odd, 0), ConfigError);
}

TEST_CASE("tree-mask forward equals per-path forwards and ignores non-ancestors") {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 100);
    const Nets nets(tzt::tiny_config(5, 4), static_cast<std::uint64_t>(seed));
    const auto obs = tzt::random_observation<double>(5, rng);
    const auto root = nets.represent(obs);
    const auto tree = random_token_tree(9, 4, rng);
    const auto mask = AttentionMask::from_parents(tree.parent);
    auto tokens = nets.embed_actions(tree.actions, tree.depths);
    const T out = nets.dynamics_forward(root, tokens, mask);
    double worst = 0.0;
    for (int i = 0; i <= 9; ++i) worst = std::max(worst, (out.row(i) - path_forward(nets, root, tree, i)).cwiseAbs().maxCoeff());
    CHECK(worst <= 1e-10);

    // Perturbing token j leaves every row that does not descend from j untouched.
    const int j = std::uniform_int_distribution<int>(1, 9)(rng);
    tokens.tokens.row(j - 1) += tzt::random_tensor<double>(1, 8, rng);
    const T moved = nets.dynamics_forward(root, tokens, mask);
    for (int i = 0; i <= 9; ++i) {
      if (!is_ancestor(tree, j, i)) {
        CHECK((moved.row(i).array() == out.row(i).array()).all());
      } else {
        CHECK((moved.row(i) - out.row(i)).cwiseAbs().maxCoeff() > 0.0);
      }
    }
  }
}

TEST_CASE("causal mask is the path-tree mask, and a K-step unroll matches K path forwards bit for bit") {
  std::mt19937_64 rng(8);
  const Nets nets(tzt::tiny_config(), 1);
  const auto root = nets.represent(tzt::random_observation<double>(5, rng));
  const std::vector<int> actions{2, 0, 1, 1, 2};
  const std::vector<int> depths{1, 2, 3, 4, 5};
  CHECK(AttentionMask::causal(6) == AttentionMask::from_parents(std::vector<int>{-1, 0, 1, 2, 3, 4}));
  const T full = nets.dynamics_forward(root, nets.embed_actions(actions, depths), AttentionMask::causal(6));
  for (int k = 1; k <= 5; ++k) {
    const std::span<const int> a(actions.data(), static_cast<std::size_t>(k));
    const std::span<const int> d(depths.data(), static_cast<std::size_t>(k));
    const T part = nets.dynamics_forward(root, nets.embed_actions(a, d), AttentionMask::causal(k + 1));
    CHECK((part.row(k).array() == full.row(k).array()).all());
  }
}

TEST_CASE("reordering siblings permutes the outputs") {
  std::mt19937_64 rng(2);
  const Nets nets(tzt::tiny_config(5, 3), 9);
  const auto root = nets.represent(tzt::random_observation<double>(5, rng));
  // root -> {1: a0, 2: a1}, 1 -> {3: a2}; then the same tree listing 2 before 1.
  const auto a = nets.dynamics_forward(root, nets.embed_actions(std::vector<int>{0, 1, 2}, std::vector<int>{1, 1, 2}),
                                       AttentionMask::from_parents(std::vector<int>{-1, 0, 0, 1}));
  const auto b = nets.dynamics_forward(root, nets.embed_actions(std::vector<int>{1, 0, 2}, std::vector<int>{1, 1, 2}),
                                       AttentionMask::from_parents(std::vector<int>{-1, 0, 0, 2}));
  CHECK((a.row(0) - b.row(0)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.row(1) - b.row(2)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.row(2) - b.row(1)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.row(3) - b.row(3)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("batched prediction equals row-by-row prediction") {
  std::mt19937_64 rng(1);
  const Nets nets(tzt::tiny_config(), 3);
  const T latents = tzt::random_tensor<double>(6, 8, rng);
  const auto batch = nets.predict_batch(latents);
  for (Eigen::Index r = 0; r < 6; ++r) {
    const auto single = nets.predict(RowVector<double>(latents.row(r)));
    CHECK(std::abs(single.value - batch[static_cast<std::size_t>(r)].value) <= 1e-12);
    CHECK(std::abs(single.reward - batch[static_cast<std::size_t>(r)].reward) <= 1e-12);
    double total = 0.0;
    for (std::size_t a = 0; a < single.prior.size(); ++a) {
      CHECK(std::abs(single.prior[a] - batch[static_cast<std::size_t>(r)].prior[a]) <= 1e-12);
      total += single.prior[a];
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
}

TEST_CASE("gradient of an output with respect to a non-ancestor token is exactly zero") {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 500);
    const Nets nets(tzt::tiny_config(5, 4), static_cast<std::uint64_t>(seed));
    const auto tree = random_token_tree(8, 4, rng);
    const auto mask = AttentionMask::from_parents(tree.parent);
    Tape<double> tape;
    const auto bound = nets.bind(tape);
    auto seq = tape.variable(tzt::random_tensor<double>(9, 8, rng));
    const auto out = nets.dynamics(bound, seq, mask);
    const int i = std::uniform_int_distribution<int>(0, 8)(rng);
    const T w = tzt::random_tensor<double>(8, 1, rng);
    tape.backward(sum(matmul(gather_rows(out, {i}), tape.constant(w))));
    const T& g = tape.grad(seq);
    for (int j = 0; j <= 8; ++j) {
      if (is_ancestor(tree, j, i)) {
        CHECK(g.row(j).cwiseAbs().maxCoeff() > 0.0);
      } else {
        CHECK((g.row(j).array() == 0.0).all());
      }
    }
  }
}

TEST_CASE("network forward passes pass finite-difference checks") {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 900);
    const Nets nets(tzt::tiny_config(5, 3), static_cast<std::uint64_t>(seed));
    const auto tree = random_token_tree(4, 3, rng);
    const auto mask = AttentionMask::from_parents(tree.parent);
    const T w = tzt::random_tensor<double>(8, 1, rng);
    auto readout = [&](Var<double> y) {
      auto p = matmul(y, y.tape->constant(w));
      return weighted_squared_error(p, T(T::Zero(p.rows(), 1)), T(T::Ones(p.rows(), 1)));
    };
    INFO("seed " << seed);
    CHECK(finite_diff_check<double>(
              [&](Tape<double>& t, Var<double> x) { return readout(nets.represent(nets.bind(t), x)); },
              tzt::random_tensor<double>(2, 5, rng)) < 1e-4);
    CHECK(finite_diff_check<double>(
              [&](Tape<double>& t, Var<double> x) { return readout(nets.dynamics(nets.bind(t), x, mask)); },
              tzt::random_tensor<double>(5, 8, rng)) < 1e-4);
    CHECK(finite_diff_check<double>(
              [&](Tape<double>& t, Var<double> x) {
                const auto p = nets.predict(nets.bind(t), x);
                return add(add(sum(p.value), sum(p.reward)),
                           cross_entropy(p.policy_logits, T(T::Constant(3, 3, 1.0 / 3.0)), T(T::Ones(3, 1))));
              },
              tzt::random_tensor<double>(3, 8, rng)) < 1e-4);
    // Through a parameter: the query weights of the first block.
    const auto q = nets.parameter_index("dynamics.block0.attn.query.weight");
    const T seq = tzt::random_tensor<double>(5, 8, rng);
    CHECK(finite_diff_check<double>(
              [&](Tape<double>& t, Var<double> x) {
                auto b = nets.bind(t);
                b.p[q] = x;
                return readout(nets.dynamics(b, t.constant(seq), mask));
              },
              nets.parameters()[q].value) < 1e-4);
    // Action embedding table through embed_actions.
    const auto e = nets.parameter_index("action_embedding");
    CHECK(finite_diff_check<double>(
              [&](Tape<double>& t, Var<double> x) {
                auto b = nets.bind(t);
                b.p[e] = x;
                return readout(nets.embed_actions(b, tree.actions, tree.depths));
              },
              nets.parameters()[e].value) < 1e-4);
  }
}

TEST_CASE("shape errors are reported") {
  const Nets nets(tzt::tiny_config(), 0);
  std::vector<double> wrong(4, 0.0);
  CHECK_THROWS_AS(nets.represent(wrong), DimensionError);
  CHECK_THROWS_AS(nets.embed_actions(std::vector<int>{3}, std::vector<int>{1}), DimensionError);
  CHECK_THROWS_AS(nets.embed_actions(std::vector<int>{0}, std::vector<int>{0}), DimensionError);
  const auto root = nets.represent(std::vector<double>(5, 0.0));
  CHECK_THROWS_AS(nets.dynamics_forward(root, nets.embed_actions(std::vector<int>{0}, std::vector<int>{1}),
                                        AttentionMask::causal(3)),
                  DimensionError);
}
