#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gloie/rng.hpp"

namespace gloie {

enum class HeadKind { Gaussian, Multinomial, Tweedie };

HeadKind head_from_string(const std::string& s);
std::string to_string(HeadKind head);

double sigmoid(double x);

/// Numerically stable softmax (max-shift).
std::vector<double> softmax(std::span<const double> logits);

/// Learnable Tweedie power parameterization: p = 1 + eps + (1 - 2 eps) *
/// sigmoid(rho) with eps = 0.05, keeping p inside [1.05, 1.95] away from the
/// singularities of the deviance at p = 1 and p = 2.
constexpr double kTweediePowerMargin = 0.05;
double tweedie_power_from_rho(double rho);
double tweedie_power_to_rho(double p);
double tweedie_power_drho(double rho);  // dp/drho

/// -z mu^(1-p)/(1-p) + mu^(2-p)/(2-p); z >= 0, mu > 0, p in (1,2).
double tweedie_loss(double z, double mu, double p);
/// d/dmu = -z mu^-p + mu^(1-p); zero exactly at mu = z.
double tweedie_loss_dmu(double z, double mu, double p);
double tweedie_loss_dp(double z, double mu, double p);

/// 0.5 * sum_j (x_j - x_hat_j)^2 (unit variance, constants dropped).
double gaussian_nll(std::span<const double> x, std::span<const double> x_hat);

/// -sum_j x_j log softmax(logits)_j with max-shift stabilization; x are
/// non-negative weights with positive sum.
double multinomial_nll(std::span<const double> x, std::span<const double> logits);

/// 0.5 * sum_k (exp(logvar_k) + mean_k^2 - 1 - logvar_k); >= 0 always.
double kl_std_normal(std::span<const double> mean, std::span<const double> logvar);

/// Compound Poisson-Gamma parameters. Gamma uses the shape/rate convention
/// (mean = shape / rate_g); rate_g is named to avoid clashing with the
/// Poisson rate.
struct CompoundPoissonParams {
  double lambda = 1.0;
  double shape = 2.0;
  double rate_g = 1.0;
};

/// Draws N ~ Poisson(lambda); returns 0 when N = 0, else the sum of N
/// Gamma(shape, rate_g) draws. P(Z = 0) = exp(-lambda), E[Z] = lambda *
/// shape / rate_g.
double sample_compound_poisson(const CompoundPoissonParams& params, Rng& rng);

}  // namespace gloie
