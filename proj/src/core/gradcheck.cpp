#include "upet/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "upet/core/tape.hpp"

namespace upet {
namespace {

double evaluate(const std::function<Tensor<double>()>& f) {
  auto paused = Tape<double>::pause();
  const Tensor<double> value = f();
  if (value.numel() != 1) throw AutogradError("gradient check needs a scalar-valued function");
  return value.item();
}

bool bitwise_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

constexpr int kLevels = 8;
constexpr double kShrink = 2.0;
constexpr double kNoiseUlps = 8.0;

}  // namespace

double central_difference(const std::function<double()>& f, double& element, double eps, double value_scale) {
  const double saved = element;
  auto diff = [&](double h) {
    element = saved + h;
    const double plus = f();
    element = saved - h;
    const double minus = f();
    element = saved;
    return (plus - minus) / (2.0 * h);
  };
  // Rounding noise of one evaluation of f, as a few ulps of its magnitude. A
  // difference at step h carries about noise / h of it, so candidates from
  // small steps are charged for it; otherwise a noisy pair that agrees by
  // chance would win over a clean estimate from a larger step.
  const double noise = kNoiseUlps * std::numeric_limits<double>::epsilon() * std::abs(value_scale);

  // table[j][i]: j-th extrapolation of the central difference at step eps / 2^i.
  double table[kLevels][kLevels];
  double h = eps;
  table[0][0] = diff(h);
  double best = table[0][0];
  double best_score = std::numeric_limits<double>::infinity();
  for (int i = 1; i < kLevels; ++i) {
    h /= kShrink;
    table[0][i] = diff(h);
    double factor = kShrink * kShrink;
    for (int j = 1; j <= i; ++j) {
      table[j][i] = (table[j - 1][i] * factor - table[j - 1][i - 1]) / (factor - 1.0);
      factor *= kShrink * kShrink;
      const double err =
          std::max(std::abs(table[j][i] - table[j - 1][i]), std::abs(table[j][i] - table[j - 1][i - 1]));
      const double score = err + 2.0 * noise / h;
      if (score <= best_score) {
        best_score = score;
        best = table[j][i];
      }
    }
  }
  return best;
}

GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& f, Tensor<double> theta,
                                        double eps) {
  if (!(eps > 0.0)) throw ValueError("finite_difference_check: step must be positive");
  if (!theta.defined()) throw ValueError("finite_difference_check: parameter tensor is undefined");

  const double first = evaluate(f);
  const double second = evaluate(f);
  if (!bitwise_equal(first, second)) {
    throw NonDeterministicFunction("finite_difference_check: two evaluations at the same point differ");
  }

  const bool previously_required = theta.requires_grad();
  theta.clear_grad();
  theta.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape<double> tape;
    auto scope = tape.activate();
    const Tensor<double> loss = f();
    tape.backward(loss);
    auto g = theta.grad();
    analytic.assign(g.begin(), g.end());
    if (analytic.empty()) analytic.assign(static_cast<std::size_t>(theta.numel()), 0.0);
  }
  theta.clear_grad();
  theta.set_requires_grad(previously_required);

  GradCheckResult result;
  auto values = theta.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double numeric = central_difference([&] { return evaluate(f); }, values[i], eps, first);
    const double err = std::abs(analytic[i] - numeric) /
                       std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    if (err > result.max_rel_error || result.worst_index < 0) {
      result.max_rel_error = err;
      result.worst_index = static_cast<Index>(i);
      result.analytic_at_worst = analytic[i];
      result.numeric_at_worst = numeric;
    }
  }
  return result;
}

}  // namespace upet
