#pragma once

// Central-difference verification of the tape's analytic gradients.

#include "moegan/tensor.hpp"

namespace moegan {

// f must be a scalar-valued function, smooth at x, callable on Tensor<S> and
// on Tensor<double> (write it as a generic lambda and cast its captures).
// The analytic gradient is taken from the S-precision tape under test; the
// central differences are evaluated in double so the oracle's own rounding
// stays far below the asserted bound. Returns the maximum over coordinates of
// |analytic - numeric| / max(1, |analytic|) and never throws on disagreement.
template <typename S, typename F>
double finite_difference_check(F&& f, Tensor<S> x, double eps) {
  x.set_requires_grad(true);
  x.zero_grad();
  Mat<S> analytic = Mat<S>::Zero(x.rows(), x.cols());
  {
    Tape<S> tape;
    Tensor<S> loss = f(x);
    // A constant f never touches the tape; its analytic gradient is zero.
    if (tape.recorded(loss)) {
      tape.backward(loss);
      if (x.has_grad()) analytic = x.grad();
    }
  }

  Tensor<double> probe = cast<double>(x);
  Mat<double> base = probe.value();
  double worst = 0.0;
  for (long i = 0; i < base.rows(); ++i) {
    for (long j = 0; j < base.cols(); ++j) {
      probe.value()(i, j) = base(i, j) + eps;
      double up = f(probe).item();
      probe.value()(i, j) = base(i, j) - eps;
      double down = f(probe).item();
      probe.value()(i, j) = base(i, j);
      double numeric = (up - down) / (2.0 * eps);
      double a = static_cast<double>(analytic(i, j));
      double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err > worst) worst = err;
    }
  }
  return worst;
}

}  // namespace moegan
