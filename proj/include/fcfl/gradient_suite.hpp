#pragma once

// Finite-difference gradient checks of every differentiable operation at
// float64, each on several random small shapes.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fcfl {

struct GradSuiteCase {
  std::string op;
  std::string shape;  // human-readable description of the case
  double max_relative_error = 0.0;
  bool pass = false;
  double epsilon = 0.0;
  std::string worst_at;  // "input#index analytic=... numeric=..."
};

struct GradSuiteReport {
  std::vector<GradSuiteCase> cases;
  double seconds = 0.0;
  double tolerance = 0.0;

  bool pass() const;
  // Ops in first-seen order with their case count and worst error.
  std::vector<std::string> ops() const;
  std::size_t case_count(const std::string& op) const;
  double worst_error(const std::string& op) const;
};

inline constexpr double kGradCheckEpsilon = 1e-5;

// `epsilon` replaces the per-op finite-difference step when given.
GradSuiteReport run_gradient_suite(std::uint64_t seed = 0, double tolerance = 1e-6,
                                   std::optional<double> epsilon = std::nullopt);

}  // namespace fcfl
