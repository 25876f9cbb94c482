#include "transzero/networks.hpp"

#include <random>

namespace tz {

void NetworkConfig::validate() const {
  if (observation_size <= 0) throw ConfigError("network.observation_size must be positive");
  if (num_actions <= 0) throw ConfigError("network.num_actions must be positive");
  if (d_model < 2) throw ConfigError("network.d_model must be at least 2");
  if (layers < 1) throw ConfigError("network.layers must be at least 1");
  if (heads < 1 || d_model % heads != 0) throw ConfigError("network.heads must divide network.d_model");
  if (ffn_hidden < 1 || representation_hidden < 1 || head_hidden < 1) {
    throw ConfigError("network hidden widths must be positive");
  }
}

namespace {

template <typename Scalar>
Tensor<Scalar> gaussian(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<Scalar> t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(dist(rng));
  return t;
}

}  // namespace

template <typename Scalar>
NetworkBundle<Scalar>::NetworkBundle(NetworkConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int d = config_.d_model;
  repr_in_ = add_linear("representation.in", config_.observation_size, config_.representation_hidden, rng);
  repr_out_ = add_linear("representation.out", config_.representation_hidden, d, rng);
  action_table_ = params_.add("action_embedding", gaussian<Scalar>(config_.num_actions, d, 1.0, rng));
  for (int l = 0; l < config_.layers; ++l) {
    const std::string pre = "dynamics.block" + std::to_string(l) + ".";
    Block b{};
    b.ln1_gain = params_.add(pre + "ln1.gain", Tensor<Scalar>::Ones(1, d));
    b.ln1_bias = params_.add(pre + "ln1.bias", Tensor<Scalar>::Zero(1, d));
    b.query = add_linear(pre + "attn.query", d, d, rng);
    b.key = add_linear(pre + "attn.key", d, d, rng);
    b.value = add_linear(pre + "attn.value", d, d, rng);
    b.out = add_linear(pre + "attn.out", d, d, rng);
    b.ln2_gain = params_.add(pre + "ln2.gain", Tensor<Scalar>::Ones(1, d));
    b.ln2_bias = params_.add(pre + "ln2.bias", Tensor<Scalar>::Zero(1, d));
    b.ffn_in = add_linear(pre + "ffn.in", d, config_.ffn_hidden, rng);
    b.ffn_out = add_linear(pre + "ffn.out", config_.ffn_hidden, d, rng);
    blocks_.push_back(b);
  }
  final_gain_ = params_.add("dynamics.final.gain", Tensor<Scalar>::Ones(1, d));
  final_bias_ = params_.add("dynamics.final.bias", Tensor<Scalar>::Zero(1, d));
  value_head_ = {add_linear("prediction.value.hidden", d, config_.head_hidden, rng),
                 add_linear("prediction.value.out", config_.head_hidden, 1, rng)};
  reward_head_ = {add_linear("prediction.reward.hidden", d, config_.head_hidden, rng),
                  add_linear("prediction.reward.out", config_.head_hidden, 1, rng)};
  policy_head_ = {add_linear("prediction.policy.hidden", d, config_.head_hidden, rng),
                  add_linear("prediction.policy.out", config_.head_hidden, config_.num_actions, rng)};
}

template <typename Scalar>
typename NetworkBundle<Scalar>::Linear NetworkBundle<Scalar>::add_linear(const std::string& name, int in, int out,
                                                                         std::mt19937_64& rng) {
  Linear l{};
  l.weight = params_.add(name + ".weight", gaussian<Scalar>(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  l.bias = params_.add(name + ".bias", Tensor<Scalar>::Zero(1, out));
  return l;
}

template <typename Scalar>
std::size_t NetworkBundle<Scalar>::parameter_index(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw UsageError("no parameter named " + std::string(name));
}

template <typename Scalar>
typename NetworkBundle<Scalar>::Bound NetworkBundle<Scalar>::bind(Tape<Scalar>& tape) const {
  Bound b;
  b.p.reserve(params_.size());
  for (const auto& p : params_) b.p.push_back(tape.parameter(p.value));
  return b;
}

template <typename Scalar>
Var<Scalar> NetworkBundle<Scalar>::apply(const Bound& b, const Linear& l, Var<Scalar> x) const {
  return add_row(matmul(x, b.p[l.weight]), b.p[l.bias]);
}

template <typename Scalar>
Var<Scalar> NetworkBundle<Scalar>::apply_head(const Bound& b, const Head& h, Var<Scalar> x) const {
  return apply(b, h.out, silu(apply(b, h.hidden, x)));
}

template <typename Scalar>
Var<Scalar> NetworkBundle<Scalar>::represent(const Bound& b, Var<Scalar> observations) const {
  if (observations.cols() != config_.observation_size) {
    throw DimensionError("represent: observation " + shape_string(observations.value()) + " but network expects " +
                         std::to_string(config_.observation_size) + " features");
  }
  auto latent = apply(b, repr_out_, silu(apply(b, repr_in_, observations)));
  return config_.scale_latents ? minmax_scale_rows(latent) : latent;
}

template <typename Scalar>
Var<Scalar> NetworkBundle<Scalar>::embed_actions(const Bound& b, std::span<const int> actions,
                                                 std::span<const int> depths) const {
  if (actions.size() != depths.size()) throw DimensionError("embed_actions: actions and depths differ in length");
  if (actions.empty()) throw DimensionError("embed_actions: no actions");
  std::vector<Eigen::Index> rows;
  rows.reserve(actions.size());
  Tensor<Scalar> encoding(static_cast<Eigen::Index>(actions.size()), config_.d_model);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i] < 0 || actions[i] >= config_.num_actions) {
      throw DimensionError("embed_actions: action id " + std::to_string(actions[i]) + " outside [0, " +
                           std::to_string(config_.num_actions) + ")");
    }
    if (depths[i] < 1) throw DimensionError("embed_actions: depth must be at least 1");
    rows.push_back(actions[i]);
    encoding.row(static_cast<Eigen::Index>(i)) = sinusoidal_encoding<Scalar>(depths[i], config_.d_model);
  }
  auto* tape = b.p[action_table_].tape;
  return add(gather_rows(b.p[action_table_], std::move(rows)), tape->constant(std::move(encoding)));
}

template <typename Scalar>
Var<Scalar> NetworkBundle<Scalar>::dynamics(const Bound& b, Var<Scalar> sequences, const AttentionMask& mask) const {
  mask.validate();
  const Eigen::Index n = mask.size();
  if (sequences.cols() != config_.d_model || sequences.rows() % n != 0) {
    throw DimensionError("dynamics: sequences " + shape_string(sequences.value()) + " incompatible with mask size " +
                         std::to_string(n));
  }
  const int head_width = config_.d_model / config_.heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(head_width));
  Var<Scalar> x = sequences;
  for (const auto& blk : blocks_) {
    auto h = layer_norm(x, b.p[blk.ln1_gain], b.p[blk.ln1_bias]);
    auto q = apply(b, blk.query, h);
    auto k = apply(b, blk.key, h);
    auto v = apply(b, blk.value, h);
    std::vector<Var<Scalar>> heads;
    for (int hd = 0; hd < config_.heads; ++hd) {
      auto qh = config_.heads == 1 ? q : slice_cols(q, hd * head_width, head_width);
      auto kh = config_.heads == 1 ? k : slice_cols(k, hd * head_width, head_width);
      auto vh = config_.heads == 1 ? v : slice_cols(v, hd * head_width, head_width);
      auto weights = masked_softmax(scale(batched_scores(qh, kh, n), inv_sqrt), mask);
      heads.push_back(batched_mix(weights, vh, n));
    }
    auto attended = config_.heads == 1 ? heads.front() : concat_cols(heads);
    x = add(x, apply(b, blk.out, attended));
    auto h2 = layer_norm(x, b.p[blk.ln2_gain], b.p[blk.ln2_bias]);
    x = add(x, apply(b, blk.ffn_out, silu(apply(b, blk.ffn_in, h2))));
  }
  auto out = layer_norm(x, b.p[final_gain_], b.p[final_bias_]);
  return config_.scale_latents ? minmax_scale_rows(out) : out;
}

template <typename Scalar>
PredictionVars<Scalar> NetworkBundle<Scalar>::predict(const Bound& b, Var<Scalar> latents) const {
  if (latents.cols() != config_.d_model) {
    throw DimensionError("predict: latent " + shape_string(latents.value()) + " but d_model is " +
                         std::to_string(config_.d_model));
  }
  return {apply_head(b, value_head_, latents), apply_head(b, reward_head_, latents),
          apply_head(b, policy_head_, latents)};
}

template <typename Scalar>
typename NetworkBundle<Scalar>::Latent NetworkBundle<Scalar>::represent(std::span<const Scalar> observation) const {
  Tape<Scalar> tape(false);
  const auto bound = bind(tape);
  Tensor<Scalar> obs(1, static_cast<Eigen::Index>(observation.size()));
  for (std::size_t i = 0; i < observation.size(); ++i) obs(0, static_cast<Eigen::Index>(i)) = observation[i];
  return represent(bound, tape.constant(std::move(obs))).value().row(0);
}

template <typename Scalar>
TokenSequence<Scalar> NetworkBundle<Scalar>::embed_actions(std::span<const int> actions,
                                                           std::span<const int> depths) const {
  Tape<Scalar> tape(false);
  const auto bound = bind(tape);
  return {embed_actions(bound, actions, depths).value(), std::vector<int>(depths.begin(), depths.end())};
}

template <typename Scalar>
Tensor<Scalar> NetworkBundle<Scalar>::dynamics_forward(const Latent& root, const TokenSequence<Scalar>& tokens,
                                                       const AttentionMask& mask) const {
  if (mask.size() != 1 + tokens.tokens.rows()) {
    throw DimensionError("dynamics_forward: mask of size " + std::to_string(mask.size()) + " for " +
                         std::to_string(tokens.tokens.rows()) + " tokens plus root");
  }
  if (root.cols() != config_.d_model) throw DimensionError("dynamics_forward: root latent width " + std::to_string(root.cols()));
  Tensor<Scalar> seq(1 + tokens.tokens.rows(), config_.d_model);
  seq.row(0) = root;
  if (tokens.tokens.rows() > 0) seq.bottomRows(tokens.tokens.rows()) = tokens.tokens;
  Tape<Scalar> tape(false);
  const auto bound = bind(tape);
  return dynamics(bound, tape.constant(std::move(seq)), mask).value();
}

template <typename Scalar>
std::vector<Prediction> NetworkBundle<Scalar>::to_predictions(const PredictionVars<Scalar>& out) const {
  const auto& value = out.value.value();
  const auto& reward = out.reward.value();
  const Eigen::MatrixXd prior = softmax_rows(out.policy_logits.value().template cast<double>());
  std::vector<Prediction> preds(static_cast<std::size_t>(value.rows()));
  for (Eigen::Index r = 0; r < value.rows(); ++r) {
    auto& p = preds[static_cast<std::size_t>(r)];
    p.value = static_cast<double>(value(r, 0));
    p.reward = static_cast<double>(reward(r, 0));
    p.prior.resize(static_cast<std::size_t>(prior.cols()));
    for (Eigen::Index a = 0; a < prior.cols(); ++a) p.prior[static_cast<std::size_t>(a)] = static_cast<double>(prior(r, a));
  }
  return preds;
}

template <typename Scalar>
Prediction NetworkBundle<Scalar>::predict(const Latent& latent) const {
  return predict_batch(Tensor<Scalar>(latent)).front();
}

template <typename Scalar>
std::vector<Prediction> NetworkBundle<Scalar>::predict_batch(const Tensor<Scalar>& latents) const {
  Tape<Scalar> tape(false);
  const auto bound = bind(tape);
  return to_predictions(predict(bound, tape.constant(latents)));
}

template class NetworkBundle<float>;
template class NetworkBundle<double>;

}  // namespace tz
