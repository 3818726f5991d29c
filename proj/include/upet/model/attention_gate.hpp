#pragma once

#include "upet/core/random.hpp"
#include "upet/core/tensor.hpp"

namespace upet {

/// Additive attention gate parameters. W_x is applied with stride 2 so that
/// x (C_x channels) lands on the grid of the gating signal g (C_g channels).
template <typename T>
struct AttentionGateParams {
  Tensor<T> w_x;    // F_int x C_x x 1 x 1 x 1, no bias
  Tensor<T> w_g;    // F_int x C_g x 1 x 1 x 1
  Tensor<T> b_g;    // F_int
  Tensor<T> psi;    // 1 x F_int x 1 x 1 x 1
  Tensor<T> b_psi;  // 1

  static AttentionGateParams zeros(Index c_x, Index c_g);
  Index f_int() const { return w_x.dim(0); }
  /// Throws ShapeError unless all five tensors are present and consistent.
  void validate(Index c_x, Index c_g) const;
};

/// F_int = max(1, C_x / 2).
inline Index gate_inner_channels(Index c_x) { return c_x / 2 > 0 ? c_x / 2 : 1; }

template <typename T>
struct GateOutput {
  Tensor<T> x_hat;  // N x C_x x D x H x W
  Tensor<T> alpha;  // N x 1 x D x H x W, in (0, 1)
};

/// alpha = up2(sigmoid(psi^T relu(W_x^T x + W_g^T g + b_g) + b_psi)), x_hat = x * alpha.
/// `g` must have exactly half the spatial extent of `x` on every axis.
template <typename T>
GateOutput<T> attention_gate(const Tensor<T>& x, const Tensor<T>& g, const AttentionGateParams<T>& p);

}  // namespace upet
