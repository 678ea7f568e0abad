#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pasttense/tensor.hpp"

namespace pasttense {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
};

struct AdamState {
  std::uint64_t step = 0;
  Buffer m, v;
  double beta1 = 0.9, beta2 = 0.98, epsilon = 1e-9;

  AdamState() = default;
  AdamState(std::size_t n, AdamConfig c = {})
      : m(n, 0.0), v(n, 0.0), beta1(c.beta1), beta2(c.beta2), epsilon(c.epsilon) {}
};

// One bias-corrected Adam update over flat parameter/gradient arrays.
inline void adam_step(Buffer& params, const Buffer& grads, AdamState& st, double lr) {
  if (params.size() != grads.size() || st.m.size() != params.size() || st.v.size() != params.size())
    throw ShapeError("adam_step: parameter/gradient/state lengths differ");
  if (lr < 0.0) throw UsageError("adam_step: negative learning rate");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i])) throw NumericError("adam_step: non-finite gradient at parameter index " + std::to_string(i));
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(st.beta1, t), c2 = 1.0 - std::pow(st.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
    const double mhat = st.m[i] / c1, vhat = st.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + st.epsilon);
  }
}

// Adam over a list of parameter handles, treated as one flat vector in list
// order.  Missing gradients count as zero.
class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig cfg = {}) : params_(std::move(params)) {
    std::size_t n = 0;
    for (auto& p : params_) n += p.size();
    state_ = AdamState(n, cfg);
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step(double lr) {
    std::size_t n = state_.m.size();
    flat_p_.resize(n);
    flat_g_.resize(n);
    std::size_t off = 0;
    for (auto& p : params_) {
      const auto& v = p.value().values();
      std::copy(v.begin(), v.end(), flat_p_.begin() + static_cast<std::ptrdiff_t>(off));
      if (p.has_grad())
        std::copy(p.grad().begin(), p.grad().end(), flat_g_.begin() + static_cast<std::ptrdiff_t>(off));
      else
        std::fill_n(flat_g_.begin() + static_cast<std::ptrdiff_t>(off), p.size(), 0.0);
      off += p.size();
    }
    adam_step(flat_p_, flat_g_, state_, lr);
    off = 0;
    for (auto& p : params_) {
      auto& v = p.mutable_value().values();
      std::copy_n(flat_p_.begin() + static_cast<std::ptrdiff_t>(off), v.size(), v.begin());
      off += v.size();
    }
  }

  const AdamState& state() const { return state_; }

 private:
  std::vector<Var> params_;
  AdamState state_;
  Buffer flat_p_, flat_g_;
};

struct ScheduleConfig {
  int d_model = 128;
  int warmup_steps = 400;
};

// Inverse-square-root schedule with linear warmup:
//   lr(s) = d_model^-0.5 * min(s^-0.5, s * warmup^-1.5)
inline double lr_at(std::uint64_t step, const ScheduleConfig& cfg) {
  if (step == 0) throw UsageError("lr_at: step must be >= 1");
  if (cfg.warmup_steps < 1 || cfg.d_model < 1) throw UsageError("lr_at: warmup_steps and d_model must be >= 1");
  const double s = static_cast<double>(step), w = static_cast<double>(cfg.warmup_steps);
  return std::pow(static_cast<double>(cfg.d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

}  // namespace pasttense
