#pragma once

// Dense row-major tensors and a reverse-mode tape.
//
// Every tensor is two dimensional (rows x cols); vectors are 1 x d rows.
// A Tape records primitive ops in order; backward() replays their adjoints in
// reverse record order. Vars are lightweight handles into one tape.

#include <Eigen/Core>

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "transzero/errors.hpp"

namespace tz {

template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Derived>
std::string shape_string(const Eigen::MatrixBase<Derived>& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<Scalar>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <typename Scalar>
class Tape {
 public:
  using Matrix = Tensor<Scalar>;
  // Accumulates the adjoint of node `self` into the adjoints of its inputs.
  using Backward = std::function<void(Tape&, std::uint32_t self)>;

  // With record_gradients == false no adjoints are stored; forward only.
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var<Scalar> constant(Matrix value) { return push_owned(std::move(value), false, {}, "constant"); }

  // Differentiable leaf owning its value.
  Var<Scalar> variable(Matrix value) { return push_owned(std::move(value), recording_, {}, "variable"); }

  // Differentiable leaf referencing storage that must outlive the tape.
  Var<Scalar> parameter(const Matrix& value) {
    Node n;
    n.external = &value;
    n.needs_grad = recording_;
    n.op = "parameter";
    nodes_.push_back(std::move(n));
    return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Matrix& value(Var<Scalar> v) const {
    check(v);
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.owned;
  }

  bool needs_grad(Var<Scalar> v) const { return nodes_[v.id].needs_grad; }
  const char* op_name(std::uint32_t id) const { return nodes_[id].op; }

  // Adjoint of v after backward(); zero-shaped like value when unreachable.
  const Matrix& grad(Var<Scalar> v) const {
    check(v);
    return nodes_[v.id].grad;
  }

  Matrix& grad_mut(std::uint32_t id) { return nodes_[id].grad; }
  const Matrix& value_at(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }
  bool needs_grad_at(std::uint32_t id) const { return nodes_[id].needs_grad; }

  Var<Scalar> push(Matrix value, std::initializer_list<Var<Scalar>> inputs, Backward backward, const char* op) {
    bool needs = false;
    if (recording_) {
      for (const auto& in : inputs) {
        check(in);
        needs = needs || nodes_[in.id].needs_grad;
      }
    }
    Var<Scalar> out = push_owned(std::move(value), needs, needs ? std::move(backward) : Backward{}, op);
#ifndef NDEBUG
    if (!nodes_.back().owned.allFinite()) {
      bool inputs_finite = true;
      for (const auto& in : inputs) inputs_finite = inputs_finite && this->value(in).allFinite();
      assert(!inputs_finite && "non-finite output from finite inputs");
    }
#endif
    return out;
  }

  Var<Scalar> push(Matrix value, const std::vector<Var<Scalar>>& inputs, Backward backward, const char* op) {
    bool needs = false;
    if (recording_) {
      for (const auto& in : inputs) {
        check(in);
        needs = needs || nodes_[in.id].needs_grad;
      }
    }
    return push_owned(std::move(value), needs, needs ? std::move(backward) : Backward{}, op);
  }

  // Seeds d(output)/d(output) = 1 for a 1x1 output and replays every recorded
  // op once in reverse order. Calling it again recomputes from scratch.
  // `visit` observes the node ids in the order their adjoints are replayed.
  void backward(Var<Scalar> output, const std::function<void(std::uint32_t)>& visit = {}) {
    check(output);
    if (!recording_) throw UsageError("backward() on a tape that does not record gradients");
    if (value(output).size() != 1) {
      throw DimensionError("backward() needs a scalar output, got " + shape_string(value(output)));
    }
    for (auto& n : nodes_) {
      if (n.needs_grad) {
        const Matrix& v = n.external ? *n.external : n.owned;
        n.grad.setZero(v.rows(), v.cols());
      } else {
        n.grad.resize(0, 0);
      }
    }
    if (!nodes_[output.id].needs_grad) return;
    nodes_[output.id].grad(0, 0) = Scalar(1);
    for (std::uint32_t i = output.id + 1; i-- > 0;) {
      if (visit) visit(i);
      if (nodes_[i].needs_grad && nodes_[i].backward) nodes_[i].backward(*this, i);
    }
  }

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
    const char* op = "";
  };

  Var<Scalar> push_owned(Matrix value, bool needs, Backward backward, const char* op) {
    Node n;
    n.owned = std::move(value);
    n.needs_grad = needs;
    n.backward = std::move(backward);
    n.op = op;
    nodes_.push_back(std::move(n));
    return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void check(Var<Scalar> v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw UsageError("Var does not belong to this tape");
  }

  bool recording_;
  std::vector<Node> nodes_;
};

}  // namespace tz
