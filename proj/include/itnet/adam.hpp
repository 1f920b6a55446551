#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "itnet/autodiff.hpp"

namespace itnet {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

template <Real T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update of every parameter from its gradient buffer.
// Moment buffers are created on the first call.
template <Real T>
void adam_step(std::vector<Parameter<T>>& params, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state/parameter count mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t j = 0; j < params.size(); ++j) {
    auto& p = params[j];
    if (p.grad.shape() != p.value.shape() || state.m[j].shape() != p.value.shape()) {
      throw std::invalid_argument("adam_step: shape mismatch for parameter '" + p.name + "'");
    }
    auto& m = state.m[j];
    auto& v = state.v[j];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
      p.value[i] = static_cast<T>(p.value[i] - update);
    }
  }
}

}  // namespace itnet
