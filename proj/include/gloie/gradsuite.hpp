#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

namespace gloie {

/// Central-difference verification of every analytic gradient: the scalar
/// loss formulas, the full VAE loss per head (frozen noise), and the full
/// fusion loss including the tied w0.
struct GradSuiteReport {
  std::map<std::string, double> family_max;
  std::size_t instances = 0;

  double overall() const;
  std::string to_json() const;
};

GradSuiteReport run_gradient_suite(std::size_t instances, std::uint64_t seed);

}  // namespace gloie
