#pragma once

#include <vector>

#include "upet/core/tape.hpp"
#include "upet/core/tensor.hpp"

// Differentiable operator set. Volumetric tensors use the N,C,D,H,W layout.
// Every operator records itself on the active tape (if any) together with
// its gradient rule; without an active tape they are plain functions.

namespace upet {

/// 3D cross-correlation. `weight` is C_out x C_in x k x k x k, `bias` is C_out
/// or undefined. Output extents follow floor((D + 2p - k) / s) + 1.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int padding = 0);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// Natural logarithm; inputs must be positive.
template <typename T>
Tensor<T> log(const Tensor<T>& x);

/// Element-wise sum. Shapes must match, except that either operand may carry
/// extent 1 on the channel axis (axis 1), which is then broadcast.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
/// Element-wise product with the same broadcasting rule as add().
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// Sum / mean of all elements as a rank-0 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Element-wise mean of equally shaped tensors: (t0 + ... + tk) / (k + 1).
template <typename T>
Tensor<T> mean_of(const std::vector<Tensor<T>>& terms);

/// 2x2x2 max pooling with stride 2. Ties route the gradient to the lowest
/// linear index inside the window.
template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x);

/// Non-overlapping average pooling with an integer window.
template <typename T>
Tensor<T> avg_pool3d(const Tensor<T>& x, int factor);

/// Trilinear resize by an integer factor using half-voxel centres
/// (sample positions (o + 0.5) / f - 0.5, clamped at the borders).
template <typename T>
Tensor<T> upsample_trilinear(const Tensor<T>& x, int factor = 2);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// N x C x D x H x W -> N x C.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Per-sample, per-channel normalization over the spatial axes, no affine.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5));

/// x: N x F, weight: F x K, bias: K -> N x K.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Row-wise softmax of an N x K tensor, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

}  // namespace upet
