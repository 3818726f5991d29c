#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "upet/core/errors.hpp"
#include "upet/core/tensor.hpp"
#include "upet/data/volume.hpp"
#include "upet/model/attention_gate.hpp"
#include "upet/model/config.hpp"

namespace upet {

/// Raised when attention maps are requested from a model built without gates.
class NoAttentionError : public Error {
 public:
  using Error::Error;
};

template <typename T>
struct ModelOutputs {
  Tensor<T> class_logits;                    // N x 3, aggregated
  std::vector<Tensor<T>> per_scale_logits;   // finer gated scale first, bottleneck last
  Tensor<T> pet_pred;                        // N x 1 x D x H x W, undefined without PET head
  std::vector<Tensor<T>> aux_pet_preds;      // entry l-1 at 1/2^l of the input resolution
  std::vector<std::pair<std::string, Tensor<T>>> attention_maps;  // "skip-l" / "cls-l" -> N x 1 x ...

  const Tensor<T>* attention(const std::string& name) const;
};

/// Attention-gated 3D U-Net with a PET synthesis decoder and a multi-scale
/// gated classification head.
///
/// Encoder level l (1..levels) is two (3x3x3 conv -> instance norm -> ReLU)
/// stages with max pooling in between levels. Decoder level l upsamples the
/// coarser output trilinearly, applies conv -> IN -> ReLU, concatenates it
/// with the (gated) encoder skip and runs another double-conv block.
/// Convolutions feeding an instance norm carry no bias: the normalization
/// removes any per-channel constant.
///
/// Parameters are handles; copies of a model share parameter storage.
template <typename T>
class UPetModel {
 public:
  UPetModel(UPetConfig config, std::uint64_t seed);

  const UPetConfig& config() const { return cfg_; }

  ModelOutputs<T> forward(const Tensor<T>& mri) const;

  std::vector<NamedTensor<T>>& parameters() { return params_; }
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  Tensor<T>& parameter(const std::string& name);
  const Tensor<T>& parameter(const std::string& name) const;
  bool has_parameter(const std::string& name) const { return index_.count(name) != 0; }

  Index parameter_count() const;
  Index attention_parameter_count() const;

  void set_requires_grad(bool flag);
  void zero_grad();

  /// Copies every parameter value from `other` (same names and shapes).
  template <typename U>
  void copy_parameters_from(const UPetModel<U>& other) {
    for (auto& p : params_) {
      const Tensor<U>& src = other.parameter(p.name);
      if (src.shape() != p.tensor.shape()) throw ShapeError("parameter " + p.name + " shape mismatch");
      auto dst = p.tensor.data();
      auto s = src.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(s[i]);
    }
  }

  template <typename U>
  UPetModel<U> converted() const {
    UPetModel<U> m(cfg_, 0);
    m.copy_parameters_from(*this);
    return m;
  }

  /// Plain-text block table: one row per block with its output shape,
  /// parameter tensors and parameter count, followed by totals.
  std::string describe() const;

 private:
  struct Block {
    std::string name;
    std::string kind;
    std::vector<Index> out_shape;  // C, D, H, W
    std::vector<std::string> params;
  };

  Tensor<T>& add_param(const std::string& name, Shape shape, Index fan_in, Rng* rng);
  AttentionGateParams<T> gate(const std::string& prefix) const;
  Tensor<T> double_conv(const Tensor<T>& x, const std::string& prefix) const;

  UPetConfig cfg_;
  std::vector<NamedTensor<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Block> blocks_;
};

struct AttentionVolume {
  std::string name;
  Volume volume;
};

/// Attention maps of sample `sample`, trilinearly resized to the input
/// resolution. `selector` is "all", "skip", "cls" or an exact gate name such
/// as "skip-1". Throws NoAttentionError without gates, ValueError for an
/// unknown selector.
std::vector<AttentionVolume> export_attention_maps(const ModelOutputs<float>& outputs, const UPetConfig& config,
                                                   const std::string& selector = "all", Index sample = 0);

}  // namespace upet
