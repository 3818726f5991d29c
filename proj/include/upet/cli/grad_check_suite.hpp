#pragma once

#include <functional>
#include <string>
#include <vector>

#include "upet/core/errors.hpp"

namespace upet {

/// Raised when a gradient check is requested in 32-bit precision.
class PrecisionRefusedError : public Error {
 public:
  using Error::Error;
};

struct GradCheckOptions {
  /// "f64" only; "f32" is refused because central differences are
  /// unreliable at that precision.
  std::string precision = "f64";
  /// Test fixture: "sigmoid" swaps in a sigmoid with a corrupted derivative.
  std::string inject_fault;
  bool include_model = true;
  int instances = 3;  // random instances per operator
  double tolerance = 1e-5;
};

struct GradCheckRow {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
  std::string worst;  // where the largest error occurred
};

/// Finite-difference check of every differentiable operator and of the
/// end-to-end tiny model (levels 3, base 2, 8^3 input) under the combined
/// loss. `progress` is called after each row.
std::vector<GradCheckRow> run_grad_check_suite(const GradCheckOptions& options,
                                               const std::function<void(const GradCheckRow&)>& progress = {});

std::string format_grad_check_row(const GradCheckRow& row);

}  // namespace upet
