#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mtlforge/autodiff/tape.hpp"
#include "mtlforge/error.hpp"

namespace mtl {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-5;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update over `params`, reading Parameter::grad.
///
/// Moment buffers are created on the first call and must keep matching the
/// parameter list afterwards.
inline void adam_step(std::span<Parameter> params, OptimizerState& state, double lr,
                      const AdamConfig& cfg = {}) {
  require(lr > 0.0, "adam_step: learning rate must be positive");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value.shape(), 0.0);
      state.second_moment.emplace_back(p.value.shape(), 0.0);
    }
  }
  require(state.first_moment.size() == params.size(), "adam_step: state/parameter count mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    if (!m.same_shape(p.value)) throw UsageError("adam_step: moment shape mismatch for " + p.name);
    if (p.grad.empty()) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace mtl
