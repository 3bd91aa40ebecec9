#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fcfl/tensor.hpp"

namespace fcfl {

using Rng = std::mt19937_64;

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Ordered (path, tensor) list; tensors share storage with the owning model.
template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

template <typename T>
Tensor<T> param_normal(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape), T(0), true);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> param_uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape), T(0), true);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> param_constant(Shape shape, T value) {
  return Tensor<T>(std::move(shape), value, true);
}

// Glorot-uniform [fan_in, fan_out] weight for `linear`.
template <typename T>
Tensor<T> linear_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return param_uniform<T>({fan_in, fan_out}, bound, rng);
}

template <typename T>
void append_params(ParamList<T>& out, const std::string& prefix,
                   std::initializer_list<std::pair<const char*, const Tensor<T>*>> items) {
  for (const auto& [name, t] : items) {
    if (t->defined()) out.push_back({prefix + name, *t});
  }
}

}  // namespace fcfl
