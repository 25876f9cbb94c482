#pragma once

// Primitive differentiable ops. Each op computes its forward value eagerly and
// records a closure that accumulates adjoints into its inputs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "transzero/mask.hpp"
#include "transzero/tensor.hpp"

namespace tz {

namespace detail {

template <typename Scalar, typename Expr>
void accumulate(Tape<Scalar>& t, Var<Scalar> input, const Expr& adjoint) {
  if (t.needs_grad_at(input.id)) t.grad_mut(input.id) += adjoint;
}

template <typename Scalar>
void require_same_tape(Var<Scalar> a, Var<Scalar> b) {
  if (a.tape != b.tape) throw UsageError("operands recorded on different tapes");
}

template <typename Scalar>
void require_same_shape(const char* op, Var<Scalar> a, Var<Scalar> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.value()) + " vs " +
                         shape_string(b.value()));
  }
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.value()) + " x " +
                         shape_string(b.value()));
  }
  Tensor<Scalar> out = a.value() * b.value();
  return a.tape->push(std::move(out), {a, b},
                      [a, b](Tape<Scalar>& t, std::uint32_t self) {
                        const auto& g = t.grad_mut(self);
                        detail::accumulate(t, a, g * t.value(b).transpose());
                        detail::accumulate(t, b, t.value(a).transpose() * g);
                      },
                      "matmul");
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("add", a, b);
  Tensor<Scalar> out = a.value() + b.value();
  return a.tape->push(std::move(out), {a, b},
                      [a, b](Tape<Scalar>& t, std::uint32_t self) {
                        detail::accumulate(t, a, t.grad_mut(self));
                        detail::accumulate(t, b, t.grad_mut(self));
                      },
                      "add");
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("sub", a, b);
  Tensor<Scalar> out = a.value() - b.value();
  return a.tape->push(std::move(out), {a, b},
                      [a, b](Tape<Scalar>& t, std::uint32_t self) {
                        detail::accumulate(t, a, t.grad_mut(self));
                        detail::accumulate(t, b, -t.grad_mut(self));
                      },
                      "sub");
}

// x + row, with a 1 x cols row broadcast over every row of x.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> x, Var<Scalar> row) {
  detail::require_same_tape(x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw DimensionError("add_row: " + shape_string(row.value()) + " does not broadcast over " +
                         shape_string(x.value()));
  }
  Tensor<Scalar> out = x.value().rowwise() + row.value().row(0);
  return x.tape->push(std::move(out), {x, row},
                      [x, row](Tape<Scalar>& t, std::uint32_t self) {
                        const auto& g = t.grad_mut(self);
                        detail::accumulate(t, x, g);
                        detail::accumulate(t, row, g.colwise().sum());
                      },
                      "add_row");
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor) {
  Tensor<Scalar> out = x.value() * factor;
  return x.tape->push(std::move(out), {x},
                      [x, factor](Tape<Scalar>& t, std::uint32_t self) {
                        detail::accumulate(t, x, t.grad_mut(self) * factor);
                      },
                      "scale");
}

// x * sigmoid(x)
template <typename Scalar>
Var<Scalar> silu(Var<Scalar> x) {
  const auto& v = x.value();
  Tensor<Scalar> sig = (Scalar(1) + (-v.array()).exp()).inverse().matrix();
  Tensor<Scalar> out = (v.array() * sig.array()).matrix();
  return x.tape->push(std::move(out), {x},
                      [x, sig = std::move(sig)](Tape<Scalar>& t, std::uint32_t self) {
                        const auto& xv = t.value(x);
                        auto d = sig.array() * (Scalar(1) + xv.array() * (Scalar(1) - sig.array()));
                        detail::accumulate(t, x, (t.grad_mut(self).array() * d).matrix());
                      },
                      "silu");
}

// Per row (x - min) / (max - min), with the range floored at 1e-6.
template <typename Scalar>
Var<Scalar> minmax_scale_rows(Var<Scalar> x) {
  const auto& v = x.value();
  Tensor<Scalar> out(v.rows(), v.cols());
  std::vector<Eigen::Index> lo(static_cast<std::size_t>(v.rows())), hi(static_cast<std::size_t>(v.rows()));
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> range(v.rows());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    Eigen::Index a = 0, b = 0;
    const Scalar mn = v.row(r).minCoeff(&a);
    const Scalar mx = v.row(r).maxCoeff(&b);
    lo[static_cast<std::size_t>(r)] = a;
    hi[static_cast<std::size_t>(r)] = b;
    range(r) = std::max(mx - mn, Scalar(1e-6));
    out.row(r) = ((v.row(r).array() - mn) / range(r)).matrix();
  }
  return x.tape->push(std::move(out), {x},
                      [x, lo = std::move(lo), hi = std::move(hi), range](Tape<Scalar>& t, std::uint32_t self) {
                        if (!t.needs_grad_at(x.id)) return;
                        const auto& y = t.value_at(self);
                        const auto& g = t.grad_mut(self);
                        auto& gx = t.grad_mut(x.id);
                        for (Eigen::Index r = 0; r < y.rows(); ++r) {
                          const Scalar s = range(r);
                          gx.row(r) += g.row(r) / s;
                          gx(r, lo[static_cast<std::size_t>(r)]) += (g.row(r).array() * (y.row(r).array() - Scalar(1))).sum() / s;
                          gx(r, hi[static_cast<std::size_t>(r)]) -= (g.row(r).array() * y.row(r).array()).sum() / s;
                        }
                      },
                      "minmax_scale_rows");
}

inline constexpr double kLayerNormEpsilon = 1e-5;

// Row-wise normalization over the last axis followed by gain * x + bias.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gain, Var<Scalar> bias) {
  const auto d = x.cols();
  if (d < 2) throw DimensionError("layer_norm: last axis must have at least 2 entries");
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.value()) + "/" + shape_string(bias.value()) +
                         " do not match " + shape_string(x.value()));
  }
  const auto& xv = x.value();
  const Eigen::Index n = xv.rows();
  Tensor<Scalar> normalized(n, d);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar mean = xv.row(i).mean();
    auto centered = (xv.row(i).array() - mean);
    const Scalar var = centered.square().mean();
    inv_std(i) = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEpsilon));
    normalized.row(i) = (centered * inv_std(i)).matrix();
  }
  Tensor<Scalar> out = (normalized.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return x.tape->push(
      std::move(out), {x, gain, bias},
      [x, gain, bias, normalized = std::move(normalized), inv_std = std::move(inv_std)](Tape<Scalar>& t,
                                                                                       std::uint32_t self) {
        const auto& g = t.grad_mut(self);
        detail::accumulate(t, bias, g.colwise().sum());
        detail::accumulate(t, gain, (g.array() * normalized.array()).matrix().colwise().sum());
        if (!t.needs_grad_at(x.id)) return;
        Tensor<Scalar> dn = (g.array().rowwise() * t.value(gain).row(0).array()).matrix();
        auto& gx = t.grad_mut(x.id);
        for (Eigen::Index i = 0; i < dn.rows(); ++i) {
          const Scalar mean_dn = dn.row(i).mean();
          const Scalar mean_dn_n = (dn.row(i).array() * normalized.row(i).array()).mean();
          gx.row(i).array() +=
              inv_std(i) * (dn.row(i).array() - mean_dn - normalized.row(i).array() * mean_dn_n);
        }
      },
      "layer_norm");
}

// Row r of `logits` is gated by row (r mod n) of the n x n mask, so a stack of
// B sequences of length n shares one mask. Masked entries come out exactly 0.
template <typename Scalar>
Var<Scalar> masked_softmax(Var<Scalar> logits, const AttentionMask& mask) {
  const Eigen::Index n = mask.size();
  const auto& z = logits.value();
  if (z.cols() != n || n == 0 || z.rows() % n != 0) {
    throw DimensionError("masked_softmax: logits " + shape_string(z) + " incompatible with mask of size " +
                         std::to_string(n));
  }
  Tensor<Scalar> out = Tensor<Scalar>::Zero(z.rows(), n);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const Eigen::Index mr = r % n;
    Scalar row_max = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (mask.allowed(mr, j)) row_max = std::max(row_max, z(r, j));
    }
    if (row_max == -std::numeric_limits<Scalar>::infinity()) {
      throw StructuralError("masked_softmax: row " + std::to_string(mr) + " of the mask allows no entries");
    }
    Scalar total = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (mask.allowed(mr, j)) {
        out(r, j) = std::exp(z(r, j) - row_max);
        total += out(r, j);
      }
    }
    out.row(r) /= total;
  }
  return logits.tape->push(std::move(out), {logits},
                           [logits](Tape<Scalar>& t, std::uint32_t self) {
                             const auto& y = t.value_at(self);
                             const auto& g = t.grad_mut(self);
                             Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot =
                                 (y.array() * g.array()).rowwise().sum();
                             detail::accumulate(t, logits,
                                                (y.array() * (g.array().colwise() - dot.array())).matrix());
                           },
                           "masked_softmax");
}

// Rows of `source` selected by `rows` (repetition allowed). Covers embedding
// lookups as well as reordering stacked sequences.
template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> source, std::vector<Eigen::Index> rows) {
  const auto& s = source.value();
  Tensor<Scalar> out(static_cast<Eigen::Index>(rows.size()), s.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= s.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " outside " + shape_string(s));
    }
    out.row(static_cast<Eigen::Index>(i)) = s.row(rows[i]);
  }
  return source.tape->push(std::move(out), {source},
                           [source, rows = std::move(rows)](Tape<Scalar>& t, std::uint32_t self) {
                             if (!t.needs_grad_at(source.id)) return;
                             const auto& g = t.grad_mut(self);
                             auto& gs = t.grad_mut(source.id);
                             for (std::size_t i = 0; i < rows.size(); ++i) {
                               gs.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
                             }
                           },
                           "gather_rows");
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const auto& p : parts) {
    detail::require_same_tape(parts.front(), p);
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts.front().value()) + " vs " +
                           shape_string(p.value()));
    }
    rows += p.rows();
  }
  Tensor<Scalar> out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return parts.front().tape->push(std::move(out), parts,
                                  [parts](Tape<Scalar>& t, std::uint32_t self) {
                                    const auto& g = t.grad_mut(self);
                                    Eigen::Index at = 0;
                                    for (const auto& p : parts) {
                                      const auto r = t.value(p).rows();
                                      detail::accumulate(t, p, g.middleRows(at, r));
                                      at += r;
                                    }
                                  },
                                  "concat_rows");
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().rows();
  for (const auto& p : parts) {
    detail::require_same_tape(parts.front(), p);
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts.front().value()) + " vs " +
                           shape_string(p.value()));
    }
    cols += p.cols();
  }
  Tensor<Scalar> out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape->push(std::move(out), parts,
                                  [parts](Tape<Scalar>& t, std::uint32_t self) {
                                    const auto& g = t.grad_mut(self);
                                    Eigen::Index at = 0;
                                    for (const auto& p : parts) {
                                      const auto c = t.value(p).cols();
                                      detail::accumulate(t, p, g.middleCols(at, c));
                                      at += c;
                                    }
                                  },
                                  "concat_cols");
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count <= 0 || begin + count > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") outside " +
                         shape_string(x.value()));
  }
  Tensor<Scalar> out = x.value().middleCols(begin, count);
  return x.tape->push(std::move(out), {x},
                      [x, begin, count](Tape<Scalar>& t, std::uint32_t self) {
                        if (t.needs_grad_at(x.id)) t.grad_mut(x.id).middleCols(begin, count) += t.grad_mut(self);
                      },
                      "slice_cols");
}

// Attention scores for B stacked sequences of length n:
// out[b*n + i, j] = <q[b*n + i], k[b*n + j]>.
// Inner products accumulate in a fixed order so a row's result depends only on
// the rows it reads, never on how many sequences are stacked.
template <typename Scalar>
Var<Scalar> batched_scores(Var<Scalar> q, Var<Scalar> k, Eigen::Index n) {
  detail::require_same_tape(q, k);
  detail::require_same_shape("batched_scores", q, k);
  if (n <= 0 || q.rows() % n != 0) throw DimensionError("batched_scores: rows not a multiple of sequence length");
  const auto& qv = q.value();
  const auto& kv = k.value();
  const Eigen::Index batch = qv.rows() / n;
  const Eigen::Index dh = qv.cols();
  Tensor<Scalar> out(qv.rows(), n);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        Scalar acc = 0;
        for (Eigen::Index c = 0; c < dh; ++c) acc += qv(b * n + i, c) * kv(b * n + j, c);
        out(b * n + i, j) = acc;
      }
    }
  }
  return q.tape->push(std::move(out), {q, k},
                      [q, k, n](Tape<Scalar>& t, std::uint32_t self) {
                        const auto& g = t.grad_mut(self);
                        const auto& qv = t.value(q);
                        const auto& kv = t.value(k);
                        const Eigen::Index batch = qv.rows() / n;
                        for (Eigen::Index b = 0; b < batch; ++b) {
                          auto gb = g.middleRows(b * n, n);
                          if (t.needs_grad_at(q.id)) t.grad_mut(q.id).middleRows(b * n, n) += gb * kv.middleRows(b * n, n);
                          if (t.needs_grad_at(k.id))
                            t.grad_mut(k.id).middleRows(b * n, n) += gb.transpose() * qv.middleRows(b * n, n);
                        }
                      },
                      "batched_scores");
}

// Attention-weighted values for B stacked sequences of length n:
// out[b*n + i] = sum_j p[b*n + i, j] * v[b*n + j], summed in increasing j.
template <typename Scalar>
Var<Scalar> batched_mix(Var<Scalar> p, Var<Scalar> v, Eigen::Index n) {
  detail::require_same_tape(p, v);
  if (n <= 0 || p.cols() != n || p.rows() != v.rows() || v.rows() % n != 0) {
    throw DimensionError("batched_mix: weights " + shape_string(p.value()) + " vs values " + shape_string(v.value()));
  }
  const auto& pv = p.value();
  const auto& vv = v.value();
  const Eigen::Index batch = vv.rows() / n;
  Tensor<Scalar> out = Tensor<Scalar>::Zero(vv.rows(), vv.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index i = 0; i < n; ++i) {
      auto row = out.row(b * n + i);
      for (Eigen::Index j = 0; j < n; ++j) {
        const Scalar w = pv(b * n + i, j);
        if (w != Scalar(0)) row += w * vv.row(b * n + j);
      }
    }
  }
  return p.tape->push(std::move(out), {p, v},
                      [p, v, n](Tape<Scalar>& t, std::uint32_t self) {
                        const auto& g = t.grad_mut(self);
                        const auto& pv = t.value(p);
                        const auto& vv = t.value(v);
                        const Eigen::Index batch = vv.rows() / n;
                        for (Eigen::Index b = 0; b < batch; ++b) {
                          auto gb = g.middleRows(b * n, n);
                          if (t.needs_grad_at(p.id)) t.grad_mut(p.id).middleRows(b * n, n) += gb * vv.middleRows(b * n, n).transpose();
                          if (t.needs_grad_at(v.id))
                            t.grad_mut(v.id).middleRows(b * n, n) += pv.middleRows(b * n, n).transpose() * gb;
                        }
                      },
                      "batched_mix");
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Tensor<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape->push(std::move(out), {x},
                      [x](Tape<Scalar>& t, std::uint32_t self) {
                        if (t.needs_grad_at(x.id)) t.grad_mut(x.id).array() += t.grad_mut(self)(0, 0);
                      },
                      "sum");
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.value().size()));
}

// sum_i weight_i * (pred_i - target_i)^2 over a column of predictions.
template <typename Scalar>
Var<Scalar> weighted_squared_error(Var<Scalar> pred, const Tensor<Scalar>& target, const Tensor<Scalar>& weight) {
  const auto& p = pred.value();
  if (p.rows() != target.rows() || p.cols() != target.cols() || p.rows() != weight.rows() || weight.cols() != 1) {
    throw DimensionError("weighted_squared_error: pred " + shape_string(p) + ", target " + shape_string(target) +
                         ", weight " + shape_string(weight));
  }
  Tensor<Scalar> diff = p - target;
  Tensor<Scalar> out(1, 1);
  out(0, 0) = (diff.array().square().colwise() * weight.col(0).array()).sum();
  return pred.tape->push(std::move(out), {pred},
                         [pred, diff = std::move(diff), weight](Tape<Scalar>& t, std::uint32_t self) {
                           const Scalar g = t.grad_mut(self)(0, 0);
                           detail::accumulate(t, pred,
                                              (Scalar(2) * g * (diff.array().colwise() * weight.col(0).array())).matrix());
                         },
                         "weighted_squared_error");
}

template <typename Scalar>
Var<Scalar> mse(Var<Scalar> pred, const Tensor<Scalar>& target) {
  Tensor<Scalar> w = Tensor<Scalar>::Constant(pred.rows(), 1, Scalar(1) / static_cast<Scalar>(pred.value().size()));
  return weighted_squared_error(pred, target, w);
}

// -sum_r weight_r * sum_a target[r,a] * log_softmax(logits)[r,a].
template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, const Tensor<Scalar>& target, const Tensor<Scalar>& weight) {
  const auto& z = logits.value();
  if (z.rows() != target.rows() || z.cols() != target.cols() || z.rows() != weight.rows() || weight.cols() != 1) {
    throw DimensionError("cross_entropy: logits " + shape_string(z) + ", target " + shape_string(target) +
                         ", weight " + shape_string(weight));
  }
  Tensor<Scalar> probs(z.rows(), z.cols());
  Scalar total = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const Scalar m = z.row(r).maxCoeff();
    const Scalar lse = m + std::log((z.row(r).array() - m).exp().sum());
    probs.row(r) = (z.row(r).array() - lse).exp().matrix();
    if (weight(r, 0) != Scalar(0)) total -= weight(r, 0) * (target.row(r).array() * (z.row(r).array() - lse)).sum();
  }
  Tensor<Scalar> out(1, 1);
  out(0, 0) = total;
  return logits.tape->push(std::move(out), {logits},
                           [logits, probs = std::move(probs), target, weight](Tape<Scalar>& t, std::uint32_t self) {
                             if (!t.needs_grad_at(logits.id)) return;
                             const Scalar g = t.grad_mut(self)(0, 0);
                             auto& gz = t.grad_mut(logits.id);
                             for (Eigen::Index r = 0; r < probs.rows(); ++r) {
                               if (weight(r, 0) == Scalar(0)) continue;
                               const Scalar mass = target.row(r).sum();
                               gz.row(r) += g * weight(r, 0) * (probs.row(r) * mass - target.row(r));
                             }
                           },
                           "cross_entropy");
}

// Plain row-wise softmax on values; not recorded.
template <typename Derived>
auto softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Tensor<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace tz
