#include "gloie/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "json.hpp"

#include "gloie/errors.hpp"
#include "gloie/likelihoods.hpp"
#include "gloie/rng.hpp"

namespace gloie {

namespace {

void check_config(const SynthConfig& c) {
  if (c.users < 1 || c.items < 1 || c.clusters < 1)
    throw config_error("synth: users, items and clusters must be >= 1");
  if (c.t_min < 2 || c.t_max < c.t_min)
    throw config_error("synth: need t_max >= t_min >= 2");
  if (c.mean_set_size < 1.0) throw config_error("synth: mean set size must be >= 1");
  if (!(c.repeat_prob >= 0.0 && c.repeat_prob < 1.0))
    throw config_error("synth: repeat probability must lie in [0,1)");
  if (!(c.zipf_exponent > 0.0)) throw config_error("synth: Zipf exponent must be > 0");
}

// Zipf(s) over a cluster-specific permutation of all items, as a CDF for
// inverse sampling.
struct ClusterDist {
  std::vector<std::uint32_t> ranked;  // rank -> item
  std::vector<double> cdf;
};

ClusterDist make_cluster(std::size_t M, double s, Rng& rng) {
  ClusterDist cd;
  cd.ranked.resize(M);
  for (std::size_t i = 0; i < M; ++i) cd.ranked[i] = static_cast<std::uint32_t>(i);
  deterministic_shuffle(cd.ranked, rng);
  cd.cdf.resize(M);
  double acc = 0.0;
  for (std::size_t r = 0; r < M; ++r) {
    acc += 1.0 / std::pow(static_cast<double>(r + 1), s);
    cd.cdf[r] = acc;
  }
  for (auto& c : cd.cdf) c /= acc;
  return cd;
}

std::uint32_t draw_from_cluster(const ClusterDist& cd, double u) {
  const auto it = std::lower_bound(cd.cdf.begin(), cd.cdf.end(), u);
  const std::size_t r = std::min<std::size_t>(
      static_cast<std::size_t>(it - cd.cdf.begin()), cd.cdf.size() - 1);
  return cd.ranked[r];
}

std::string padded_id(const char* prefix, std::size_t value, std::size_t width) {
  std::string digits = std::to_string(value);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

}  // namespace

void generate_synthetic(const SynthConfig& config, const std::string& out_path) {
  check_config(config);
  Rng rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double extra_mean = config.mean_set_size - 1.0;
  std::poisson_distribution<long> extra_items(extra_mean > 0 ? extra_mean : 1.0);

  std::vector<ClusterDist> clusters;
  clusters.reserve(config.clusters);
  for (std::size_t g = 0; g < config.clusters; ++g)
    clusters.push_back(make_cluster(config.items, config.zipf_exponent, rng));

  const std::size_t user_width = std::to_string(config.users - 1).size();
  const std::size_t item_width = std::to_string(config.items - 1).size();

  std::ofstream out(out_path);
  if (!out) throw data_error("cannot open output file: " + out_path);

  for (std::size_t u = 0; u < config.users; ++u) {
    const auto& cluster = clusters[rng() % config.clusters];
    const std::size_t T =
        config.t_min + static_cast<std::size_t>(
                           rng() % (config.t_max - config.t_min + 1));
    std::vector<std::uint32_t> past;  // occurrence list (repeats weighted)
    nlohmann::ordered_json sets = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t target_size =
          1 + static_cast<std::size_t>(extra_mean > 0 ? extra_items(rng) : 0);
      std::set<std::uint32_t> items;
      for (std::size_t n = 0; n < target_size; ++n) {
        std::uint32_t item;
        if (!past.empty() && unit(rng) < config.repeat_prob)
          item = past[rng() % past.size()];
        else
          item = draw_from_cluster(cluster, unit(rng));
        items.insert(item);  // collisions shrink the set; first draw keeps it non-empty
      }
      nlohmann::ordered_json set_json = nlohmann::ordered_json::array();
      for (auto item : items) {
        set_json.push_back(padded_id("i", item, item_width));
        past.push_back(item);
      }
      sets.push_back(std::move(set_json));
    }
    nlohmann::ordered_json j;
    j["user"] = padded_id("u", u, user_width);
    j["sets"] = std::move(sets);
    out << j.dump() << "\n";
  }
}

TweedieFit fit_tweedie_mu(const std::vector<double>& samples, double p,
                          std::size_t max_steps, double lr) {
  if (samples.empty()) throw data_error("fit_tweedie_mu: need at least one sample");
  if (!(p > 1.0 && p < 2.0))
    throw config_error("fit_tweedie_mu: power must lie in (1,2)");
  for (double z : samples)
    if (!(z >= 0.0)) throw data_error("fit_tweedie_mu: samples must be >= 0");

  double mean = 0.0;
  for (double z : samples) mean += z;
  mean /= static_cast<double>(samples.size());

  // descent on log(mu): dL/dlog(mu) = mu^(1-p) (mu - mean), preconditioned by
  // the curvature mu^(2-p) and step-clipped, so convergence does not depend
  // on the scale of the samples
  double log_mu = 0.0;
  TweedieFit fit;
  constexpr double kFloor = 1e-6;
  constexpr double kStepClip = 0.5;
  constexpr double kTol = 1e-12;
  for (std::size_t step = 0; step < max_steps; ++step) {
    const double mu = std::exp(log_mu);
    const double g = std::pow(mu, 1.0 - p) * (mu - mean);
    fit.steps_run = step + 1;
    fit.grad_norm = std::abs(g);
    if (mu < kFloor) {
      std::cerr << "warning: fit_tweedie_mu hit the 1e-6 floor "
                   "(no interior minimizer)\n";
      fit.mu_hat = kFloor;
      fit.converged = true;
      return fit;
    }
    const double delta =
        std::clamp(lr * g / std::pow(mu, 2.0 - p), -kStepClip, kStepClip);
    if (std::abs(delta) < kTol) {
      fit.mu_hat = mu;
      fit.converged = true;
      return fit;
    }
    log_mu -= delta;
  }
  fit.mu_hat = std::exp(log_mu);
  fit.converged = false;
  return fit;
}

}  // namespace gloie
