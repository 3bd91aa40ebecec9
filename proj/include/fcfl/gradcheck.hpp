#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fcfl/tensor.hpp"

namespace fcfl {

struct GradCheckResult {
  std::string op_name;
  double max_relative_error = 0.0;
  bool pass = false;
  // Where the worst error occurred.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares the tape gradient of a scalar function against the central
// difference (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every coordinate
// of every input. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator.
template <typename T>
GradCheckResult grad_check(const std::string& name, const std::function<Tensor<T>()>& f,
                           std::vector<Tensor<T>> inputs, double epsilon, double tolerance) {
  std::vector<bool> previous;
  for (auto& x : inputs) {
    previous.push_back(x.requires_grad());
    x.set_requires_grad(true);
    x.zero_grad();
  }
  discard_tape<T>();
  const auto evaluate = [&]() {
    Tensor<T> y = f();
    if (y.numel() != 1) throw ContractError("grad_check(" + name + "): function is not scalar");
    if (!std::isfinite(static_cast<double>(y.item()))) {
      discard_tape<T>();
      throw EvaluationError("grad_check(" + name + "): non-finite function value");
    }
    return y;
  };

  Tensor<T> y = evaluate();
  backward(y);
  std::vector<std::vector<T>> analytic;
  for (auto& x : inputs) {
    if (x.has_grad()) {
      analytic.emplace_back(x.grad().begin(), x.grad().end());
    } else {
      analytic.emplace_back(x.numel(), T(0));
    }
  }

  GradCheckResult result{name};
  double worst = 0.0;
  {
    NoGradGuard no_grad;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      auto data = inputs[t].data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const T saved = data[i];
        data[i] = static_cast<T>(saved + epsilon);
        const double plus = static_cast<double>(evaluate().item());
        data[i] = static_cast<T>(saved - epsilon);
        const double minus = static_cast<double>(evaluate().item());
        data[i] = saved;
        const double numeric = (plus - minus) / (2.0 * epsilon);
        const double a = static_cast<double>(analytic[t][i]);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        const double rel = std::abs(a - numeric) / denom;
        if (rel > worst) {
          worst = rel;
          result.worst_input = t;
          result.worst_index = i;
          result.worst_analytic = a;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    inputs[t].zero_grad();
    inputs[t].set_requires_grad(previous[t]);
  }
  result.max_relative_error = worst;
  result.pass = worst < tolerance;
  return result;
}

// Single-input form.
template <typename T>
GradCheckResult grad_check(const std::string& name,
                           const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x,
                           double epsilon, double tolerance) {
  return grad_check<T>(
      name, std::function<Tensor<T>()>([&]() { return f(x); }), std::vector<Tensor<T>>{x},
      epsilon, tolerance);
}

}  // namespace fcfl
