#include "upet/model/upet_model.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "upet/core/ops.hpp"
#include "upet/core/random.hpp"

namespace upet {

namespace {

std::string join_shape(const std::vector<Index>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s;
}

}  // namespace

template <typename T>
const Tensor<T>* ModelOutputs<T>::attention(const std::string& name) const {
  for (const auto& [n, t] : attention_maps) {
    if (n == name) return &t;
  }
  return nullptr;
}

template <typename T>
Tensor<T>& UPetModel<T>::add_param(const std::string& name, Shape shape, Index fan_in, Rng* rng) {
  Tensor<T> t(std::move(shape));
  if (rng != nullptr) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    fill_uniform(t, *rng, -bound, bound);
  }
  index_[name] = params_.size();
  params_.push_back({name, t});
  blocks_.back().params.push_back(name);
  return params_.back().tensor;
}

template <typename T>
UPetModel<T>::UPetModel(UPetConfig config, std::uint64_t seed) : cfg_(std::move(config)) {
  cfg_.validate();
  Rng rng = make_rng({seed, 0x75706574u});
  const int L = cfg_.levels;
  const Dims in = cfg_.input_shape;
  auto spatial = [&](int level) {
    const Index f = Index{1} << (level - 1);
    return std::vector<Index>{in.d / f, in.h / f, in.w / f};
  };
  auto out_shape = [&](Index c, int level) {
    auto s = spatial(level);
    s.insert(s.begin(), c);
    return s;
  };
  auto conv3 = [&](const std::string& name, Index cin, Index cout) {
    add_param(name, Shape{cout, cin, 3, 3, 3}, cin * 27, &rng);
  };
  auto gate_params = [&](const std::string& prefix, Index c_x, Index c_g, int level) {
    const Index f = gate_inner_channels(c_x);
    blocks_.push_back({prefix, "attention-gate", out_shape(1, level), {}});
    add_param(prefix + ".w_x", Shape{f, c_x, 1, 1, 1}, c_x, &rng);
    add_param(prefix + ".w_g", Shape{f, c_g, 1, 1, 1}, c_g, &rng);
    add_param(prefix + ".b_g", Shape{f}, 1, nullptr);
    add_param(prefix + ".psi", Shape{1, f, 1, 1, 1}, f, &rng);
    add_param(prefix + ".b_psi", Shape{1}, 1, nullptr);
  };
  auto head = [&](const std::string& prefix, const std::string& kind, Index cin, Index cout, int level) {
    blocks_.push_back({prefix, kind, out_shape(cout, level), {}});
    add_param(prefix + ".weight", Shape{cout, cin, 1, 1, 1}, cin, &rng);
    add_param(prefix + ".bias", Shape{cout}, 1, nullptr);
  };

  for (int l = 1; l <= L; ++l) {
    const Index cin = l == 1 ? 1 : cfg_.channels(l - 1);
    const Index c = cfg_.channels(l);
    blocks_.push_back({"enc" + std::to_string(l), l == L ? "bottleneck" : "encoder", out_shape(c, l), {}});
    conv3("enc" + std::to_string(l) + ".conv1.weight", cin, c);
    conv3("enc" + std::to_string(l) + ".conv2.weight", c, c);
  }

  if (cfg_.use_attention) {
    for (int l : {L - 2, L - 1}) {
      gate_params("gate.cls" + std::to_string(l), cfg_.channels(l), cfg_.channels(L), l);
    }
  }
  std::vector<int> cls_levels{L - 2, L - 1};
  if (cfg_.bottleneck_prediction) cls_levels.push_back(L);
  for (int l : cls_levels) {
    const std::string prefix = "cls" + std::to_string(l);
    const Index c = cfg_.channels(l);
    blocks_.push_back({prefix, "linear", {cfg_.num_classes}, {}});
    add_param(prefix + ".weight", Shape{c, cfg_.num_classes}, c, &rng);
    add_param(prefix + ".bias", Shape{cfg_.num_classes}, 1, nullptr);
  }

  if (cfg_.use_pet_head) {
    for (int l = L - 1; l >= 1; --l) {
      const Index c = cfg_.channels(l);
      const std::string prefix = "dec" + std::to_string(l);
      if (cfg_.use_attention) gate_params("gate.skip" + std::to_string(l), c, cfg_.channels(l + 1), l);
      blocks_.push_back({prefix, "decoder", out_shape(c, l), {}});
      conv3(prefix + ".up.weight", cfg_.channels(l + 1), c);
      conv3(prefix + ".conv1.weight", 2 * c, c);
      conv3(prefix + ".conv2.weight", c, c);
    }
    head("pet_head", "pet-head", cfg_.channels(1), 1, 1);
    for (int a = 1; a <= cfg_.aux_count(); ++a) {
      head("aux" + std::to_string(a), "aux-pet-head", cfg_.channels(a + 1), 1, a + 1);
    }
  }
}

template <typename T>
Tensor<T>& UPetModel<T>::parameter(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("no parameter named " + name);
  return params_[it->second].tensor;
}

template <typename T>
const Tensor<T>& UPetModel<T>::parameter(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("no parameter named " + name);
  return params_[it->second].tensor;
}

template <typename T>
Index UPetModel<T>::parameter_count() const {
  Index n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
Index UPetModel<T>::attention_parameter_count() const {
  Index n = 0;
  for (const auto& p : params_) {
    if (p.name.rfind("gate.", 0) == 0) n += p.tensor.numel();
  }
  return n;
}

template <typename T>
void UPetModel<T>::set_requires_grad(bool flag) {
  for (auto& p : params_) p.tensor.set_requires_grad(flag);
}

template <typename T>
void UPetModel<T>::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

template <typename T>
AttentionGateParams<T> UPetModel<T>::gate(const std::string& prefix) const {
  return {parameter(prefix + ".w_x"), parameter(prefix + ".w_g"), parameter(prefix + ".b_g"),
          parameter(prefix + ".psi"), parameter(prefix + ".b_psi")};
}

template <typename T>
Tensor<T> UPetModel<T>::double_conv(const Tensor<T>& x, const std::string& prefix) const {
  const Tensor<T> none;
  Tensor<T> h = relu(instance_norm(conv3d(x, parameter(prefix + ".conv1.weight"), none, 1, 1)));
  return relu(instance_norm(conv3d(h, parameter(prefix + ".conv2.weight"), none, 1, 1)));
}

template <typename T>
ModelOutputs<T> UPetModel<T>::forward(const Tensor<T>& mri) const {
  const Dims& in = cfg_.input_shape;
  if (!mri.defined() || mri.rank() != 5 || mri.dim(1) != 1 || mri.dim(2) != in.d || mri.dim(3) != in.h ||
      mri.dim(4) != in.w) {
    throw ShapeError("forward: expected input N x 1 x " + in.str() + ", got " +
                     (mri.defined() ? mri.shape().str() : std::string("undefined")));
  }
  const int L = cfg_.levels;
  const Tensor<T> none;
  ModelOutputs<T> out;

  std::vector<Tensor<T>> enc(L + 1);
  enc[1] = double_conv(mri, "enc1");
  for (int l = 2; l <= L; ++l) enc[l] = double_conv(maxpool3d(enc[l - 1]), "enc" + std::to_string(l));

  // Classification: the bottleneck gates the two levels above it.
  std::vector<int> cls_levels{L - 2, L - 1};
  if (cfg_.bottleneck_prediction) cls_levels.push_back(L);
  for (int l : cls_levels) {
    Tensor<T> feat = enc[l];
    if (cfg_.use_attention && l < L) {
      // The gate contract is a factor-2 resolution step, so for the level two
      // steps above the bottleneck the gating signal is upsampled once first.
      const Tensor<T> g = l == L - 1 ? enc[L] : upsample_trilinear(enc[L], 2);
      auto gated = attention_gate(feat, g, gate("gate.cls" + std::to_string(l)));
      out.attention_maps.emplace_back("cls-" + std::to_string(l), gated.alpha);
      feat = gated.x_hat;
    }
    const std::string prefix = "cls" + std::to_string(l);
    out.per_scale_logits.push_back(
        linear(global_avg_pool(feat), parameter(prefix + ".weight"), parameter(prefix + ".bias")));
  }
  if (cfg_.aggregate_probabilities) {
    std::vector<Tensor<T>> probs;
    for (const auto& z : out.per_scale_logits) probs.push_back(softmax(z));
    out.class_logits = log(mean_of(probs));
  } else {
    out.class_logits = mean_of(out.per_scale_logits);
  }

  if (cfg_.use_pet_head) {
    std::vector<Tensor<T>> dec(L + 1);
    dec[L] = enc[L];
    std::vector<std::pair<std::string, Tensor<T>>> skip_maps;
    for (int l = L - 1; l >= 1; --l) {
      const std::string prefix = "dec" + std::to_string(l);
      const Tensor<T> up =
          relu(instance_norm(conv3d(upsample_trilinear(dec[l + 1], 2), parameter(prefix + ".up.weight"), none, 1, 1)));
      Tensor<T> skip = enc[l];
      if (cfg_.use_attention) {
        auto gated = attention_gate(enc[l], dec[l + 1], gate("gate.skip" + std::to_string(l)));
        skip_maps.emplace_back("skip-" + std::to_string(l), gated.alpha);
        skip = gated.x_hat;
      }
      dec[l] = double_conv(concat_channels(skip, up), prefix);
    }
    out.pet_pred = conv3d(dec[1], parameter("pet_head.weight"), parameter("pet_head.bias"));
    for (int a = 1; a <= cfg_.aux_count(); ++a) {
      const std::string prefix = "aux" + std::to_string(a);
      out.aux_pet_preds.push_back(conv3d(dec[a + 1], parameter(prefix + ".weight"), parameter(prefix + ".bias")));
    }
    // Skip maps listed finest first, ahead of the classification maps.
    out.attention_maps.insert(out.attention_maps.begin(), skip_maps.rbegin(), skip_maps.rend());
  }
  return out;
}

template <typename T>
std::string UPetModel<T>::describe() const {
  std::ostringstream s;
  s << std::left << std::setw(14) << "block" << std::setw(16) << "kind" << std::setw(14) << "output"
    << std::setw(10) << "params"
    << "tensors\n";
  for (const auto& b : blocks_) {
    Index count = 0;
    std::string tensors;
    for (const auto& name : b.params) {
      const auto& t = parameter(name);
      count += t.numel();
      tensors += (tensors.empty() ? "" : " ") + name + "[" + t.shape().str() + "]";
    }
    s << std::setw(14) << b.name << std::setw(16) << b.kind << std::setw(14) << join_shape(b.out_shape)
      << std::setw(10) << count << tensors << "\n";
  }
  s << "total_parameters " << parameter_count() << "\n";
  s << "attention_parameters " << attention_parameter_count() << "\n";
  return s.str();
}

std::vector<AttentionVolume> export_attention_maps(const ModelOutputs<float>& outputs, const UPetConfig& config,
                                                   const std::string& selector, Index sample) {
  if (!config.use_attention || outputs.attention_maps.empty()) {
    throw NoAttentionError("model was built without attention gates; no attention maps to export");
  }
  std::vector<AttentionVolume> result;
  bool matched = false;
  for (const auto& [name, alpha] : outputs.attention_maps) {
    const bool take = selector == "all" || name == selector || (selector == "skip" && name.rfind("skip-", 0) == 0) ||
                      (selector == "cls" && name.rfind("cls-", 0) == 0);
    if (!take) continue;
    matched = true;
    if (sample < 0 || sample >= alpha.dim(0)) throw ValueError("attention export: sample index out of range");
    const Index factor = config.input_shape.d / alpha.dim(2);
    Tensor<float> one(Shape{1, 1, alpha.dim(2), alpha.dim(3), alpha.dim(4)});
    const Index n = one.numel();
    std::copy_n(alpha.ptr() + sample * n, n, one.ptr());
    Tensor<float> full = one;
    if (factor > 1) {
      auto pause = Tape<float>::pause();
      full = upsample_trilinear(one, static_cast<int>(factor));
    }
    std::vector<float> values(full.data().begin(), full.data().end());
    result.push_back({name, Volume(config.input_shape, Modality::ATTN, std::move(values))});
  }
  if (!matched) throw ValueError("attention export: no gate matches selector '" + selector + "'");
  return result;
}

template struct ModelOutputs<float>;
template struct ModelOutputs<double>;
template class UPetModel<float>;
template class UPetModel<double>;

}  // namespace upet
