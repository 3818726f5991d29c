#pragma once

#include <span>
#include <string>
#include <vector>

#include "upet/core/tensor.hpp"

namespace upet {

/// Adam moments for a named parameter list. Buffers are created lazily on the
/// first step and keyed by parameter name, so a state can be saved and
/// restored together with the parameters.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<std::string> names;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  bool initialized() const { return !names.empty(); }
  void validate() const;
};

/// One bias-corrected Adam update with explicit gradients, one span per
/// parameter in the same order:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// The update is evaluated in double and rounded once into the parameter.
void adam_step(std::vector<NamedTensor<float>>& params, const std::vector<std::span<const float>>& grads,
               AdamState& state);

/// Same, reading each parameter's accumulated gradient. A parameter without
/// a gradient buffer is rejected.
void adam_step(std::vector<NamedTensor<float>>& params, AdamState& state);

}  // namespace upet
