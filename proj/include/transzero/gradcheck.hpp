#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "transzero/tensor.hpp"

namespace tz {

template <typename Scalar>
using ScalarFunction = std::function<Var<Scalar>(Tape<Scalar>&, Var<Scalar>)>;

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |central difference| + 1e-8). `f` must build a 1x1 output
// from its input on the tape it is given.
template <typename Scalar>
double finite_diff_check(const ScalarFunction<Scalar>& f, const Tensor<Scalar>& x, double epsilon = 1e-5) {
  Tensor<Scalar> analytic;
  {
    Tape<Scalar> tape;
    auto in = tape.variable(x);
    auto out = f(tape, in);
    tape.backward(out);
    analytic = tape.grad(in);
    if (analytic.size() == 0) analytic = Tensor<Scalar>::Zero(x.rows(), x.cols());
  }
  auto evaluate = [&](const Tensor<Scalar>& point) {
    Tape<Scalar> tape(false);
    return static_cast<double>(f(tape, tape.constant(point)).value()(0, 0));
  };
  double worst = 0.0;
  Tensor<Scalar> probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar original = probe.data()[i];
    probe.data()[i] = original + static_cast<Scalar>(epsilon);
    const double up = evaluate(probe);
    probe.data()[i] = original - static_cast<Scalar>(epsilon);
    const double down = evaluate(probe);
    probe.data()[i] = original;
    const double cd = (up - down) / (2.0 * epsilon);
    const double a = static_cast<double>(analytic.data()[i]);
    worst = std::max(worst, std::abs(a - cd) / (std::abs(a) + std::abs(cd) + 1e-8));
  }
  return worst;
}

}  // namespace tz
