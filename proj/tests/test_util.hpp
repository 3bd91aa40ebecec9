#pragma once

#include <random>

#include "fcfl/tensor.hpp"

namespace fcfl::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape), T(0), requires_grad);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
double inner(const Tensor<T>& a, const Tensor<T>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

}  // namespace fcfl::testing
