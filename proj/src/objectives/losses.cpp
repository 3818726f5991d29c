#include "upet/objectives/losses.hpp"

#include <algorithm>
#include <cmath>

#include "upet/core/errors.hpp"
#include "upet/core/ops.hpp"

namespace upet {

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (!logits.defined() || logits.rank() != 2) throw ShapeError("cross_entropy: logits must be N x K");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= k) throw ValueError("cross_entropy: label " + std::to_string(y) + " out of range");
  }
  Tensor<T> out(Shape{});
  return record_op<T>(
      "cross_entropy", {logits}, out,
      [z = logits, out, labels, n, k]() mutable {
        double total = 0.0;
        for (Index i = 0; i < n; ++i) {
          const T* r = z.ptr() + i * k;
          const double m = *std::max_element(r, r + k);
          double s = 0.0;
          for (Index j = 0; j < k; ++j) s += std::exp(static_cast<double>(r[j]) - m);
          total += m + std::log(s) - static_cast<double>(r[labels[i]]);
        }
        out.data()[0] = static_cast<T>(total / static_cast<double>(n));
      },
      [z = logits, out, labels, n, k]() mutable {
        if (!wants_grad(z)) return;
        const double g = static_cast<double>(out.grad()[0]) / static_cast<double>(n);
        auto dz = z.ensure_grad();
        for (Index i = 0; i < n; ++i) {
          const T* r = z.ptr() + i * k;
          const double m = *std::max_element(r, r + k);
          double s = 0.0;
          for (Index j = 0; j < k; ++j) s += std::exp(static_cast<double>(r[j]) - m);
          for (Index j = 0; j < k; ++j) {
            const double p = std::exp(static_cast<double>(r[j]) - m) / s;
            dz[i * k + j] += static_cast<T>(g * (p - (j == labels[i] ? 1.0 : 0.0)));
          }
        }
      });
}

template <typename T>
MaskedL1<T> masked_l1(const Tensor<T>& pred, const Tensor<T>& target, const std::vector<bool>& mask) {
  if (!pred.defined() || pred.rank() < 2) throw ShapeError("masked_l1: prediction must be batched");
  const Index n = pred.dim(0);
  if (static_cast<Index>(mask.size()) != n) throw ShapeError("masked_l1: mask length differs from batch size");
  const int count = static_cast<int>(std::count(mask.begin(), mask.end(), true));
  if (count == 0) return {Tensor<T>::scalar(T(0)), 0};
  if (!target.defined()) throw ValueError("masked_l1: targets are required when the mask selects samples");
  if (target.shape() != pred.shape()) {
    throw ShapeError("masked_l1: prediction " + pred.shape().str() + " vs target " + target.shape().str());
  }
  const Index per = pred.numel() / n;
  const double denom = static_cast<double>(count) * static_cast<double>(per);
  Tensor<T> out(Shape{});
  Tensor<T> value = record_op<T>(
      "masked_l1", {pred, target}, out,
      [p = pred, t = target, out, mask, n, per, denom]() mutable {
        double acc = 0.0;
        for (Index b = 0; b < n; ++b) {
          if (!mask[b]) continue;
          for (Index i = b * per; i < (b + 1) * per; ++i) acc += std::abs(static_cast<double>(p.ptr()[i]) - t.ptr()[i]);
        }
        out.data()[0] = static_cast<T>(acc / denom);
      },
      [p = pred, t = target, out, mask, n, per, denom]() mutable {
        const T g = static_cast<T>(static_cast<double>(out.grad()[0]) / denom);
        if (wants_grad(p)) {
          auto dp = p.ensure_grad();
          for (Index b = 0; b < n; ++b) {
            if (!mask[b]) continue;
            for (Index i = b * per; i < (b + 1) * per; ++i) {
              const T d = p.ptr()[i] - t.ptr()[i];
              dp[i] += d > T(0) ? g : d < T(0) ? -g : T(0);
            }
          }
        }
        if (wants_grad(t)) {
          auto dt = t.ensure_grad();
          for (Index b = 0; b < n; ++b) {
            if (!mask[b]) continue;
            for (Index i = b * per; i < (b + 1) * per; ++i) {
              const T d = p.ptr()[i] - t.ptr()[i];
              dt[i] += d > T(0) ? -g : d < T(0) ? g : T(0);
            }
          }
        }
      });
  return {value, count};
}

template <typename T>
double LossBreakdown<T>::l1_aux_sum() const {
  double s = 0.0;
  for (std::size_t i = 0; i < l1_aux.size(); ++i) s += aux_weights[i] * static_cast<double>(l1_aux[i].item());
  return s;
}

template <typename T>
LossBreakdown<T> combined_loss(const ModelOutputs<T>& outputs, const std::vector<int>& labels,
                               const Tensor<T>& pet_targets, const std::vector<bool>& pet_mask,
                               const UPetConfig& config) {
  LossBreakdown<T> out;
  out.ce = cross_entropy(outputs.class_logits, labels);
  out.l1_main = Tensor<T>::scalar(T(0));
  out.total = out.ce;
  if (!config.use_pet_head) return out;

  if (static_cast<Index>(pet_mask.size()) != outputs.class_logits.dim(0)) {
    throw ShapeError("combined_loss: PET mask length differs from batch size");
  }
  const bool any = std::find(pet_mask.begin(), pet_mask.end(), true) != pet_mask.end();
  if (any && !pet_targets.defined()) throw ValueError("combined_loss: PET targets missing for a non-empty mask");

  const auto main = masked_l1(outputs.pet_pred, pet_targets, pet_mask);
  out.l1_main = main.value;
  out.paired_count = main.paired_count;
  out.aux_weights = config.aux_weights();
  Tensor<T> l1_sum = main.value;
  for (std::size_t a = 0; a < outputs.aux_pet_preds.size(); ++a) {
    Tensor<T> target;
    if (any) {
      auto paused = Tape<T>::pause();
      target = avg_pool3d(pet_targets, 1 << (a + 1));
    }
    const auto aux = masked_l1(outputs.aux_pet_preds[a], target, pet_mask);
    out.l1_aux.push_back(aux.value);
    if (any) l1_sum = add(l1_sum, scale(aux.value, static_cast<T>(out.aux_weights[a])));
  }
  if (any && config.lambda_l1 != 0.0) {
    out.total = add(out.ce, scale(l1_sum, static_cast<T>(config.lambda_l1)));
  }
  return out;
}

#define UPET_INSTANTIATE_LOSSES(T)                                                                            \
  template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<int>&);                                \
  template MaskedL1<T> masked_l1(const Tensor<T>&, const Tensor<T>&, const std::vector<bool>&);              \
  template struct LossBreakdown<T>;                                                                          \
  template LossBreakdown<T> combined_loss(const ModelOutputs<T>&, const std::vector<int>&, const Tensor<T>&, \
                                          const std::vector<bool>&, const UPetConfig&);

UPET_INSTANTIATE_LOSSES(float)
UPET_INSTANTIATE_LOSSES(double)

}  // namespace upet
