#pragma once

#include <vector>

#include "upet/core/tensor.hpp"
#include "upet/model/config.hpp"
#include "upet/model/upet_model.hpp"

namespace upet {

/// Mean over the batch of -log softmax(logits)[label], in log-sum-exp form.
/// Labels must be class indices in [0, K).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

template <typename T>
struct MaskedL1 {
  Tensor<T> value;       // rank-0
  int paired_count = 0;  // masked-in samples
};

/// Mean |pred - target| over every voxel of the masked-in samples; (0, 0)
/// when the mask is empty, in which case `target` may be undefined.
template <typename T>
MaskedL1<T> masked_l1(const Tensor<T>& pred, const Tensor<T>& target, const std::vector<bool>& mask);

template <typename T>
struct LossBreakdown {
  Tensor<T> ce;
  Tensor<T> l1_main;
  std::vector<Tensor<T>> l1_aux;  // one per aux output, unweighted
  Tensor<T> total;
  int paired_count = 0;

  double l1_aux_sum() const;  // weighted sum, as it enters total
  std::vector<double> aux_weights;
};

/// total = ce + lambda_l1 * (l1_main + sum_l w_l * l1_aux[l]). Aux targets are
/// the PET targets average-pooled to each aux resolution. Without a PET head,
/// with lambda_l1 = 0 or without paired samples, total is ce itself.
template <typename T>
LossBreakdown<T> combined_loss(const ModelOutputs<T>& outputs, const std::vector<int>& labels,
                               const Tensor<T>& pet_targets, const std::vector<bool>& pet_mask,
                               const UPetConfig& config);

}  // namespace upet
