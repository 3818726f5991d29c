#pragma once

#include <functional>

#include "upet/core/tensor.hpp"

namespace upet {

/// Raised when the function under test returns different values for the
/// same parameters.
class NonDeterministicFunction : public Error {
 public:
  using Error::Error;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  Index worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Central difference (f(θ + h e_i) − f(θ − h e_i)) / 2h for one element,
/// extrapolated over the steps h = ε, ε/2, ε/4, ... (Ridders' method). Each
/// tableau entry is scored by its extrapolation error estimate plus the
/// rounding noise it inherits from f (a few ulps of `value_scale`, divided by
/// h); the best-scored entry is returned. This keeps the estimate accurate
/// both for small gradients and next to ReLU / max-pool kinks that a large
/// step straddles.
double central_difference(const std::function<double()>& f, double& element, double eps, double value_scale);

/// Compares reverse-mode gradients of `f` with respect to `theta` against
/// central_difference() estimates, element by element.
///
/// `f` must read `theta` through the handle it captured; the checker perturbs
/// the elements in place and restores them bitwise. The returned error is
/// max_i |g_a − g_n| / max(1e-8, |g_a| + |g_n|). Only the 64-bit precision is
/// accepted: central differences are unreliable in 32-bit.
GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& f, Tensor<double> theta,
                                        double eps = 1e-4);

}  // namespace upet
