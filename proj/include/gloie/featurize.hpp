#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace gloie {

/// Per-user sum of time-decayed set indicators. values[j] is bounded by
/// sum_{k<T} tau^k < 1/(1-tau) and is zero iff item j never appears.
struct DecayedVector {
  std::vector<double> values;
  double tau = 0.0;
};

/// values[j] = sum_k 1(j in set_k) * tau^(T-k) over 1-based k, i.e. the most
/// recent history set is weighted tau^0 = 1.
DecayedVector decayed_sum(const std::vector<std::vector<std::uint32_t>>& history,
                          double tau, std::size_t M);

/// x / max_j(x) - 0.5 when max_j(x) > 0, so the maximum maps to 0.5.
/// Degenerate inputs (max <= 0) map to the constant -0.5 vector.
std::vector<double> normalize_recon(const std::vector<double>& x_hat);

}  // namespace gloie
