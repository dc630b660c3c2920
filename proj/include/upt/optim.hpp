#pragma once

// AdamW with decoupled weight decay and the warmup + cosine schedule.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "upt/autodiff.hpp"

namespace upt {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear warmup from 0 at step 0 to peak at step == warmup_steps, then
/// cosine decay reaching 0 at step == total_steps - 1.
inline double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak) {
  if (warmup_steps > total_steps) throw ValueError("lr_schedule: warmup_steps exceeds total_steps");
  if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const std::size_t span = total_steps > warmup_steps + 1 ? total_steps - 1 - warmup_steps : 1;
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span));
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::size_t step = 0;

  void init(const ParameterSet<T>& ps) {
    m.clear();
    v.clear();
    for (const auto& p : ps) {
      m.emplace_back(p->value.shape());
      v.emplace_back(p->value.shape());
    }
    step = 0;
  }
};

/// One AdamW update from the gradients stored in ps. Parameters with
/// decay == false (1-D tensors) are not decayed. Throws NumericError and
/// leaves everything untouched if any gradient is non-finite.
template <class T>
void adamw_step(ParameterSet<T>& ps, AdamState<T>& st, double lr, const AdamWConfig& cfg) {
  if (st.m.size() != ps.size()) throw DimensionError("adamw_step: optimizer state does not match parameters");
  for (const auto& p : ps) {
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + p->name + "'");
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  std::size_t i = 0;
  for (auto& p : ps) {
    auto& m = st.m[i];
    auto& v = st.v[i];
    ++i;
    if (m.shape() != p->value.shape()) throw DimensionError("adamw_step: state shape mismatch for " + p->name);
    const double decay = p->decay ? lr * cfg.weight_decay : 0.0;
    for (std::size_t j = 0; j < p->value.size(); ++j) {
      const double g = p->grad[j];
      const double mj = cfg.beta1 * m[j] + (1 - cfg.beta1) * g;
      const double vj = cfg.beta2 * v[j] + (1 - cfg.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      double w = p->value[j];
      w -= decay * w;
      w -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      p->value[j] = static_cast<T>(w);
    }
  }
}

}  // namespace upt
