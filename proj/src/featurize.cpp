#include "gloie/featurize.hpp"

#include <algorithm>
#include <cmath>

#include "gloie/errors.hpp"

namespace gloie {

DecayedVector decayed_sum(const std::vector<std::vector<std::uint32_t>>& history,
                          double tau, std::size_t M) {
  if (!(tau > 0.0 && tau < 1.0))
    throw config_error("tau must lie in (0,1), got " + std::to_string(tau));
  if (history.empty()) throw data_error("decayed_sum needs a non-empty history");

  DecayedVector out;
  out.tau = tau;
  out.values.assign(M, 0.0);
  const std::size_t T = history.size();
  for (std::size_t k = 0; k < T; ++k) {
    const double w = std::pow(tau, static_cast<double>(T - 1 - k));
    for (auto j : history[k]) out.values.at(j) += w;
  }
  return out;
}

std::vector<double> normalize_recon(const std::vector<double>& x_hat) {
  std::vector<double> out(x_hat.size(), -0.5);
  if (x_hat.empty()) return out;
  const double mx = *std::max_element(x_hat.begin(), x_hat.end());
  if (!(mx > 0.0)) return out;  // degenerate guard
  for (std::size_t j = 0; j < x_hat.size(); ++j) out[j] = x_hat[j] / mx - 0.5;
  return out;
}

}  // namespace gloie
