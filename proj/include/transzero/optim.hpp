#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "transzero/parameters.hpp"

namespace tz {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

template <typename Scalar>
struct AdamState {
  std::vector<Tensor<Scalar>> first_moment;
  std::vector<Tensor<Scalar>> second_moment;
  std::int64_t step = 0;

  static AdamState zeros_like(const ParameterSet<Scalar>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.first_moment.push_back(Tensor<Scalar>::Zero(p.value.rows(), p.value.cols()));
      s.second_moment.push_back(Tensor<Scalar>::Zero(p.value.rows(), p.value.cols()));
    }
    return s;
  }
};

// One bias-corrected Adam update. Gradients are checked for finiteness
// before anything is modified, so a failed step leaves params untouched.
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, const std::vector<Tensor<Scalar>>& grads, AdamState<Scalar>& state,
               const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients / " +
                         std::to_string(state.first_moment.size()) + " moments for " + std::to_string(params.size()) +
                         " parameters");
  }
  if (state.step < 0) throw UsageError("adam_step: negative step counter");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads[i];
    if (g.rows() != params[i].value.rows() || g.cols() != params[i].value.cols()) {
      throw DimensionError("adam_step: gradient " + shape_string(g) + " for parameter " + params[i].name + " " +
                           shape_string(params[i].value));
    }
    if (!g.allFinite()) throw TrainingError("non-finite gradient for parameter " + params[i].name);
  }
  state.step += 1;
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar correction1 = Scalar(1) - static_cast<Scalar>(std::pow(cfg.beta1, static_cast<double>(state.step)));
  const Scalar correction2 = Scalar(1) - static_cast<Scalar>(std::pow(cfg.beta2, static_cast<double>(state.step)));
  const auto lr = static_cast<Scalar>(cfg.learning_rate);
  const auto eps = static_cast<Scalar>(cfg.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = b1 * m + (Scalar(1) - b1) * grads[i];
    v = (b2 * v.array() + (Scalar(1) - b2) * grads[i].array().square()).matrix();
    params[i].value.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  }
}

}  // namespace tz
