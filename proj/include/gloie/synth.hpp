#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace gloie {

/// Seeded synthetic benchmark: users belong to preference clusters with
/// Zipf-distributed item tastes, and re-draw previously interacted items with
/// probability repeat_prob (the local signal).
struct SynthConfig {
  std::size_t users = 2000;
  std::size_t items = 200;
  std::size_t clusters = 5;
  std::size_t t_min = 2;
  std::size_t t_max = 8;
  double mean_set_size = 1.5;
  double repeat_prob = 0.4;
  double zipf_exponent = 1.1;
  std::uint64_t seed = 0;
};

/// Writes the canonical JSONL dataset; byte-identical for identical configs.
void generate_synthetic(const SynthConfig& config, const std::string& out_path);

struct TweedieFit {
  double mu_hat = 0.0;
  std::size_t steps_run = 0;
  double grad_norm = 0.0;
  bool converged = false;
};

/// Gradient descent on log(mu) minimizing the mean Tweedie deviance for a
/// fixed power; converges to the sample mean for any p in (1,2). All-zero
/// samples have no interior minimizer: descent stops at the 1e-6 floor.
TweedieFit fit_tweedie_mu(const std::vector<double>& samples, double p,
                          std::size_t max_steps = 500, double lr = 0.5);

}  // namespace gloie
