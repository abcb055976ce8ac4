#include "gloie/likelihoods.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gloie/errors.hpp"

namespace gloie {

HeadKind head_from_string(const std::string& s) {
  if (s == "gaussian") return HeadKind::Gaussian;
  if (s == "multinomial") return HeadKind::Multinomial;
  if (s == "tweedie") return HeadKind::Tweedie;
  throw config_error("unknown decoder head: " + s);
}

std::string to_string(HeadKind head) {
  switch (head) {
    case HeadKind::Gaussian: return "gaussian";
    case HeadKind::Multinomial: return "multinomial";
    case HeadKind::Tweedie: return "tweedie";
  }
  return "?";
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - mx);
    sum += out[j];
  }
  for (auto& o : out) o /= sum;
  return out;
}

double tweedie_power_from_rho(double rho) {
  const double eps = kTweediePowerMargin;
  return 1.0 + eps + (1.0 - 2.0 * eps) * sigmoid(rho);
}

double tweedie_power_to_rho(double p) {
  const double eps = kTweediePowerMargin;
  const double u = (p - 1.0 - eps) / (1.0 - 2.0 * eps);
  if (!(u > 0.0 && u < 1.0))
    throw config_error("tweedie power must lie in (1+eps, 2-eps)");
  return std::log(u / (1.0 - u));
}

double tweedie_power_drho(double rho) {
  const double s = sigmoid(rho);
  return (1.0 - 2.0 * kTweediePowerMargin) * s * (1.0 - s);
}

namespace {
void check_tweedie_domain(double z, double mu, double p) {
  if (!(z >= 0.0)) throw std::invalid_argument("tweedie: target must be >= 0");
  if (!(mu > 0.0)) throw std::invalid_argument("tweedie: mean must be > 0");
  if (!(p > 1.0 && p < 2.0))
    throw std::invalid_argument("tweedie: power must lie in (1,2)");
}
}  // namespace

double tweedie_loss(double z, double mu, double p) {
  check_tweedie_domain(z, mu, p);
  return -z * std::pow(mu, 1.0 - p) / (1.0 - p) + std::pow(mu, 2.0 - p) / (2.0 - p);
}

double tweedie_loss_dmu(double z, double mu, double p) {
  check_tweedie_domain(z, mu, p);
  return -z * std::pow(mu, -p) + std::pow(mu, 1.0 - p);
}

double tweedie_loss_dp(double z, double mu, double p) {
  check_tweedie_domain(z, mu, p);
  const double lmu = std::log(mu);
  const double a = 1.0 - p;
  const double b = 2.0 - p;
  // d/dp of -z mu^a / a: -z mu^a (1 - a lmu) / a^2
  const double da = -z * std::pow(mu, a) * (1.0 - a * lmu) / (a * a);
  // d/dp of mu^b / b: mu^b (1 - b lmu) / b^2
  const double db = std::pow(mu, b) * (1.0 - b * lmu) / (b * b);
  return da + db;
}

double gaussian_nll(std::span<const double> x, std::span<const double> x_hat) {
  if (x.size() != x_hat.size())
    throw std::invalid_argument("gaussian_nll: size mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = x[j] - x_hat[j];
    acc += d * d;
  }
  return 0.5 * acc;
}

double multinomial_nll(std::span<const double> x, std::span<const double> logits) {
  if (x.size() != logits.size())
    throw std::invalid_argument("multinomial_nll: size mismatch");
  double total = 0.0;
  for (double xj : x) total += xj;
  if (!(total > 0.0))
    throw std::invalid_argument("multinomial_nll: weights must have positive sum");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double lse = 0.0;
  for (double l : logits) lse += std::exp(l - mx);
  lse = mx + std::log(lse);
  double acc = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) acc += x[j] * (logits[j] - lse);
  return -acc;
}

double kl_std_normal(std::span<const double> mean, std::span<const double> logvar) {
  if (mean.size() != logvar.size())
    throw std::invalid_argument("kl_std_normal: size mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < mean.size(); ++k)
    acc += std::exp(logvar[k]) + mean[k] * mean[k] - 1.0 - logvar[k];
  return 0.5 * acc;
}

double sample_compound_poisson(const CompoundPoissonParams& params, Rng& rng) {
  if (!(params.lambda > 0 && params.shape > 0 && params.rate_g > 0))
    throw std::invalid_argument("compound Poisson parameters must be positive");
  std::poisson_distribution<long> poisson(params.lambda);
  const long n = poisson(rng);
  if (n == 0) return 0.0;
  std::gamma_distribution<double> gamma(params.shape, 1.0 / params.rate_g);
  double z = 0.0;
  for (long i = 0; i < n; ++i) z += gamma(rng);
  return z;
}

}  // namespace gloie
