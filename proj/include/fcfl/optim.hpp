#pragma once

// AdamW with decoupled weight decay and the step-decay learning-rate rule.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fcfl/config.hpp"
#include "fcfl/errors.hpp"
#include "fcfl/params.hpp"

namespace fcfl {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;

  static AdamWHyper from(const TrainConfig& cfg) {
    return {cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
  }
};

template <typename T>
struct AdamWState {
  std::size_t step = 0;
  std::vector<std::vector<T>> m;  // first moments, one per parameter
  std::vector<std::vector<T>> v;  // second moments

  static AdamWState zeros(const ParamList<T>& params) {
    AdamWState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.tensor.numel(), T(0));
      s.v.emplace_back(p.tensor.numel(), T(0));
    }
    return s;
  }
};

// lr0 * decay_factor^floor(epoch / decay_every).
inline double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
}

// Rescales all gradients so their global L2 norm is at most max_norm; returns
// the norm before clipping.
template <typename T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto p : params) {
      if (!p.tensor.has_grad()) continue;
      for (T& g : p.tensor.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

// One AdamW update of every parameter from its accumulated gradient (missing
// gradients count as zero). All gradients are checked before anything is
// modified, so a failed step leaves parameters and state untouched.
template <typename T>
void adamw_step(const ParamList<T>& params, AdamWState<T>& state, double lr, const AdamWHyper& h) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ContractError("adamw_step: optimizer state has " + std::to_string(state.m.size()) +
                        " slots for " + std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (state.m[i].size() != p.tensor.numel() || state.v[i].size() != p.tensor.numel())
      throw DimensionError("adamw_step: state for '" + p.name + "' does not match its shape " +
                           shape_str(p.tensor.shape()));
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad())
      if (!std::isfinite(static_cast<double>(g)))
        throw OptimizerError("adamw_step: non-finite gradient in '" + p.name + "'");
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T decay = static_cast<T>(1.0 - lr * h.weight_decay);
  const T step_size = static_cast<T>(lr / bc1);
  const T sqrt_bc2 = static_cast<T>(std::sqrt(bc2));
  const T eps = static_cast<T>(h.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> tensor = params[i].tensor;
    auto w = tensor.data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has = tensor.has_grad();
    const auto g = tensor.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T gj = has ? g[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      w[j] = w[j] * decay - step_size * m[j] / (std::sqrt(v[j]) / sqrt_bc2 + eps);
    }
  }
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (auto p : params) p.tensor.zero_grad();
}

}  // namespace fcfl
