#pragma once

// The four learned functions: representation (observation -> latent), action
// embedding with depth encoding, masked transformer dynamics, and prediction
// heads (value, reward, policy logits).
//
// Each function exists twice: a tape-level form that records onto a Tape for
// training, and a value-level form used by the planner.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "transzero/mask.hpp"
#include "transzero/ops.hpp"
#include "transzero/parameters.hpp"

namespace tz {

struct NetworkConfig {
  int observation_size = 0;
  int num_actions = 0;
  int d_model = 64;
  int layers = 2;
  int heads = 2;
  int ffn_hidden = 128;
  int representation_hidden = 128;
  int head_hidden = 64;
  // Min-max scale latents to [0, 1] per row after representation and dynamics.
  bool scale_latents = false;

  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

// Action tokens without the root: one row per action, with its tree depth.
template <typename Scalar>
struct TokenSequence {
  Tensor<Scalar> tokens;
  std::vector<int> depths;
};

struct Prediction {
  double value = 0.0;
  double reward = 0.0;
  std::vector<double> prior;
};

template <typename Scalar>
struct PredictionVars {
  Var<Scalar> value;          // R x 1
  Var<Scalar> reward;         // R x 1
  Var<Scalar> policy_logits;  // R x |A|
};

// Standard sinusoidal encoding: entry 2i is sin(depth / 10000^(2i/d)), entry
// 2i+1 the matching cos.
template <typename Scalar>
RowVector<Scalar> sinusoidal_encoding(int depth, int width) {
  RowVector<Scalar> pe(width);
  for (int c = 0; c < width; ++c) {
    const int pair = c / 2;
    const double freq = std::pow(10000.0, -2.0 * pair / static_cast<double>(width));
    const double angle = depth * freq;
    pe(c) = static_cast<Scalar>(c % 2 == 0 ? std::sin(angle) : std::cos(angle));
  }
  return pe;
}

template <typename Scalar>
class NetworkBundle {
 public:
  using Latent = RowVector<Scalar>;

  NetworkBundle(NetworkConfig config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  ParameterSet<Scalar>& parameters() { return params_; }
  const ParameterSet<Scalar>& parameters() const { return params_; }
  std::size_t parameter_index(std::string_view name) const;

  // Parameter Vars on one tape, indexed like parameters().
  struct Bound {
    std::vector<Var<Scalar>> p;
  };
  Bound bind(Tape<Scalar>& tape) const;

  // B x obs -> B x d_model.
  Var<Scalar> represent(const Bound& b, Var<Scalar> observations) const;
  // One token per (action, depth) pair: embedding[action] + encoding(depth).
  Var<Scalar> embed_actions(const Bound& b, std::span<const int> actions, std::span<const int> depths) const;
  // B stacked sequences of mask.size() tokens each, token 0 of every sequence
  // being its root latent. Returns one output latent per input token.
  Var<Scalar> dynamics(const Bound& b, Var<Scalar> sequences, const AttentionMask& mask) const;
  PredictionVars<Scalar> predict(const Bound& b, Var<Scalar> latents) const;

  Latent represent(std::span<const Scalar> observation) const;
  TokenSequence<Scalar> embed_actions(std::span<const int> actions, std::span<const int> depths) const;
  // Rows of the result: output latent for the root, then for each token.
  Tensor<Scalar> dynamics_forward(const Latent& root, const TokenSequence<Scalar>& tokens,
                                  const AttentionMask& mask) const;
  Prediction predict(const Latent& latent) const;
  std::vector<Prediction> predict_batch(const Tensor<Scalar>& latents) const;

 private:
  struct Linear {
    std::size_t weight, bias;
  };
  struct Block {
    std::size_t ln1_gain, ln1_bias;
    Linear query, key, value, out;
    std::size_t ln2_gain, ln2_bias;
    Linear ffn_in, ffn_out;
  };
  struct Head {
    Linear hidden, out;
  };

  Linear add_linear(const std::string& name, int in, int out, std::mt19937_64& rng);
  Var<Scalar> apply(const Bound& b, const Linear& l, Var<Scalar> x) const;
  Var<Scalar> apply_head(const Bound& b, const Head& h, Var<Scalar> x) const;
  std::vector<Prediction> to_predictions(const PredictionVars<Scalar>& out) const;

  NetworkConfig config_;
  ParameterSet<Scalar> params_;
  Linear repr_in_{}, repr_out_{};
  std::size_t action_table_ = 0;
  std::vector<Block> blocks_;
  std::size_t final_gain_ = 0, final_bias_ = 0;
  Head value_head_{}, reward_head_{}, policy_head_{};
};

extern template class NetworkBundle<float>;
extern template class NetworkBundle<double>;

}  // namespace tz
