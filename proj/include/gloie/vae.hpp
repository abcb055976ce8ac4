#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gloie/diffcore.hpp"
#include "gloie/featurize.hpp"
#include "gloie/likelihoods.hpp"

namespace gloie {

struct Posterior {
  std::vector<double> mean;
  std::vector<double> logvar;  // clamped to [-10, 10]
};

/// One-layer amortized encoder to a diagonal Gaussian posterior plus a
/// one-layer decoder whose output is interpreted by the configured head:
/// Tweedie (mu = exp(eta)), Gaussian (mean = eta), multinomial (softmax(eta)).
struct VaeModel {
  std::size_t M = 0;
  std::size_t d = 0;
  HeadKind head = HeadKind::Tweedie;
  bool learn_power = true;
  double fixed_power = 1.5;
  double tau = 0.6;  // featurization decay, recorded for provenance

  ParamTensor W_mu, b_mu, W_lv, b_lv, W_dec, b_dec;
  ParamTensor rho;  // unconstrained Tweedie power (scalar)

  VaeModel() = default;
  VaeModel(std::size_t M, std::size_t d, HeadKind head, double tau,
           std::uint64_t seed, bool learn_power = true, double fixed_power = 1.5);

  double power() const;
  std::vector<ParamTensor*> params();
  void zero_all_grads();
};

Posterior encode(const std::vector<double>& x, const VaeModel& model);

/// z = mean + exp(0.5 * logvar) (.) noise.
std::vector<double> reparameterize(const Posterior& post,
                                   const std::vector<double>& noise);

std::vector<double> decode_mean(const std::vector<double>& z,
                                const VaeModel& model);

struct VaeLossParts {
  double nll = 0.0;
  double kl = 0.0;
  double total() const { return nll + kl; }
};

/// Negative ELBO = head NLL + KL(q || N(0, I)). with_grad accumulates the
/// analytic gradient into every model parameter.
VaeLossParts vae_loss_parts(const DecayedVector& x, VaeModel& model,
                            const std::vector<double>& noise, bool with_grad);
double vae_loss(const DecayedVector& x, VaeModel& model,
                const std::vector<double>& noise, bool with_grad = false);

/// Deterministic inference path: decoder mean of the posterior mean. Dense;
/// strictly positive for the Tweedie head.
std::vector<double> reconstruct(const DecayedVector& x, const VaeModel& model);

/// Forward cache for the deterministic reconstruction, so joint fine-tuning
/// can push gradients back through the frozen path.
struct ReconCache {
  std::vector<double> mean, eta, x_hat;
};
std::vector<double> reconstruct_cached(const DecayedVector& x,
                                       const VaeModel& model, ReconCache* cache);
void reconstruct_backward(const DecayedVector& x, VaeModel& model,
                          const ReconCache& cache,
                          const std::vector<double>& dx_hat);

/// Minibatch Adam on the mean negative ELBO. Deterministic given seed;
/// aborts with the offending batch index on divergence.
TrainReport train_vae(const std::vector<DecayedVector>& data, VaeModel& model,
                      std::size_t epochs, std::size_t batch,
                      const OptimizerConfig& opt, std::uint64_t seed);

nlohmann::json vae_meta(const VaeModel& model);
void save_vae(const VaeModel& model, const std::string& prefix);
VaeModel load_vae(const std::string& prefix);

}  // namespace gloie
