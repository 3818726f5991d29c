#include "upet/training/adam.hpp"

#include <cmath>

#include "upet/core/errors.hpp"

namespace upet {

void AdamState::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValueError("learning rate must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ValueError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ValueError("Adam epsilon must be positive");
  if (t < 0) throw ValueError("Adam step count must be >= 0");
  if (m.size() != names.size() || v.size() != names.size()) throw ValueError("Adam moment buffers are inconsistent");
}

namespace {

void bind_state(const std::vector<NamedTensor<float>>& params, AdamState& state) {
  if (!state.initialized()) {
    for (const auto& p : params) {
      state.names.push_back(p.name);
      state.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
      state.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
    }
    return;
  }
  if (state.names.size() != params.size()) throw ValueError("Adam state was built for a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.names[i] != params[i].name || state.m[i].size() != static_cast<std::size_t>(params[i].tensor.numel())) {
      throw ValueError("Adam state does not match parameter " + params[i].name);
    }
  }
}

}  // namespace

void adam_step(std::vector<NamedTensor<float>>& params, const std::vector<std::span<const float>>& grads,
               AdamState& state) {
  state.validate();
  if (grads.size() != params.size()) throw ValueError("adam_step: one gradient per parameter required");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != static_cast<std::size_t>(params[i].tensor.numel())) {
      throw ValueError("adam_step: missing or mis-sized gradient for " + params[i].name);
    }
  }
  bind_state(params, state);
  state.t += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].tensor.data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = grads[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double step = state.lr * (mk / c1) / (std::sqrt(vk / c2) + state.eps);
      theta[k] = static_cast<float>(theta[k] - step);
    }
  }
}

void adam_step(std::vector<NamedTensor<float>>& params, AdamState& state) {
  std::vector<std::span<const float>> grads;
  for (auto& p : params) {
    if (!p.tensor.has_grad()) throw ValueError("adam_step: parameter " + p.name + " has no gradient");
    grads.emplace_back(p.tensor.grad());
  }
  adam_step(params, grads, state);
}

}  // namespace upet
