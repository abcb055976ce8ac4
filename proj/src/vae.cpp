#include "gloie/vae.hpp"

#include <algorithm>
#include <cmath>

#include "gloie/errors.hpp"

namespace gloie {

namespace {
constexpr double kLogvarClamp = 10.0;
constexpr double kEtaClamp = 30.0;
}  // namespace

VaeModel::VaeModel(std::size_t M_, std::size_t d_, HeadKind head_, double tau_,
                   std::uint64_t seed, bool learn_power_, double fixed_power_)
    : M(M_),
      d(d_),
      head(head_),
      learn_power(learn_power_),
      fixed_power(fixed_power_),
      tau(tau_),
      W_mu("W_mu", d_, M_),
      b_mu("b_mu", d_),
      W_lv("W_lv", d_, M_),
      b_lv("b_lv", d_),
      W_dec("W_dec", M_, d_),
      b_dec("b_dec", M_),
      rho("rho", 1) {
  Rng rng(seed);
  init_uniform_fan(W_mu, rng);
  init_uniform_fan(W_lv, rng);
  init_uniform_fan(W_dec, rng);
  rho.values[0] = tweedie_power_to_rho(1.5);
}

double VaeModel::power() const {
  if (head != HeadKind::Tweedie) throw config_error("power() on non-Tweedie head");
  return learn_power ? tweedie_power_from_rho(rho.values[0]) : fixed_power;
}

std::vector<ParamTensor*> VaeModel::params() {
  std::vector<ParamTensor*> out{&W_mu, &b_mu, &W_lv, &b_lv, &W_dec, &b_dec};
  if (head == HeadKind::Tweedie && learn_power) out.push_back(&rho);
  return out;
}

void VaeModel::zero_all_grads() {
  for (auto* p : params()) p->zero_grad();
  rho.zero_grad();
}

Posterior encode(const std::vector<double>& x, const VaeModel& model) {
  if (x.size() != model.M) throw std::invalid_argument("encode: |x| != M");
  Posterior post;
  post.mean.resize(model.d);
  post.logvar.resize(model.d);
  affine_forward(model.W_mu, model.b_mu, x.data(), post.mean.data());
  affine_forward(model.W_lv, model.b_lv, x.data(), post.logvar.data());
  for (auto& lv : post.logvar) lv = std::clamp(lv, -kLogvarClamp, kLogvarClamp);
  return post;
}

std::vector<double> reparameterize(const Posterior& post,
                                   const std::vector<double>& noise) {
  std::vector<double> z(post.mean.size());
  for (std::size_t k = 0; k < z.size(); ++k)
    z[k] = post.mean[k] + std::exp(0.5 * post.logvar[k]) * noise[k];
  return z;
}

namespace {

std::vector<double> decode_eta(const std::vector<double>& z, const VaeModel& model) {
  if (z.size() != model.d) throw std::invalid_argument("decode: |z| != d");
  std::vector<double> eta(model.M);
  affine_forward(model.W_dec, model.b_dec, z.data(), eta.data());
  return eta;
}

std::vector<double> head_mean(const std::vector<double>& eta, const VaeModel& model) {
  switch (model.head) {
    case HeadKind::Tweedie: {
      std::vector<double> mu(eta.size());
      for (std::size_t j = 0; j < eta.size(); ++j)
        mu[j] = std::exp(std::clamp(eta[j], -kEtaClamp, kEtaClamp));
      return mu;
    }
    case HeadKind::Gaussian:
      return eta;
    case HeadKind::Multinomial:
      return softmax(eta);
  }
  throw std::logic_error("unreachable");
}

// dL/deta from dL/d(head mean), given the forward values.
std::vector<double> head_backward(const std::vector<double>& eta,
                                  const std::vector<double>& mean_out,
                                  const std::vector<double>& d_mean,
                                  HeadKind head) {
  const std::size_t M = eta.size();
  std::vector<double> d_eta(M, 0.0);
  switch (head) {
    case HeadKind::Tweedie:
      for (std::size_t j = 0; j < M; ++j)
        if (std::abs(eta[j]) < kEtaClamp) d_eta[j] = d_mean[j] * mean_out[j];
      break;
    case HeadKind::Gaussian:
      d_eta = d_mean;
      break;
    case HeadKind::Multinomial: {
      double dot = 0.0;
      for (std::size_t j = 0; j < M; ++j) dot += mean_out[j] * d_mean[j];
      for (std::size_t j = 0; j < M; ++j)
        d_eta[j] = mean_out[j] * (d_mean[j] - dot);
      break;
    }
  }
  return d_eta;
}

}  // namespace

std::vector<double> decode_mean(const std::vector<double>& z, const VaeModel& model) {
  return head_mean(decode_eta(z, model), model);
}

VaeLossParts vae_loss_parts(const DecayedVector& x, VaeModel& model,
                            const std::vector<double>& noise, bool with_grad) {
  if (x.values.size() != model.M) throw std::invalid_argument("vae_loss: |x| != M");
  if (noise.size() != model.d) throw std::invalid_argument("vae_loss: |noise| != d");

  // forward
  std::vector<double> a_mu(model.d), a_lv(model.d);
  affine_forward(model.W_mu, model.b_mu, x.values.data(), a_mu.data());
  affine_forward(model.W_lv, model.b_lv, x.values.data(), a_lv.data());
  std::vector<double> logvar(model.d);
  for (std::size_t k = 0; k < model.d; ++k)
    logvar[k] = std::clamp(a_lv[k], -kLogvarClamp, kLogvarClamp);
  std::vector<double> z(model.d);
  for (std::size_t k = 0; k < model.d; ++k)
    z[k] = a_mu[k] + std::exp(0.5 * logvar[k]) * noise[k];
  std::vector<double> eta = decode_eta(z, model);

  VaeLossParts parts;
  parts.kl = kl_std_normal(a_mu, logvar);

  std::vector<double> d_eta(model.M, 0.0);
  switch (model.head) {
    case HeadKind::Tweedie: {
      const double p = model.power();
      double d_p = 0.0;
      for (std::size_t j = 0; j < model.M; ++j) {
        const double mu = std::exp(std::clamp(eta[j], -kEtaClamp, kEtaClamp));
        parts.nll += tweedie_loss(x.values[j], mu, p);
        if (with_grad) {
          if (std::abs(eta[j]) < kEtaClamp)
            d_eta[j] = tweedie_loss_dmu(x.values[j], mu, p) * mu;
          if (model.learn_power) d_p += tweedie_loss_dp(x.values[j], mu, p);
        }
      }
      if (with_grad && model.learn_power)
        model.rho.grad[0] += d_p * tweedie_power_drho(model.rho.values[0]);
      break;
    }
    case HeadKind::Gaussian: {
      parts.nll = gaussian_nll(x.values, eta);
      if (with_grad)
        for (std::size_t j = 0; j < model.M; ++j)
          d_eta[j] = eta[j] - x.values[j];
      break;
    }
    case HeadKind::Multinomial: {
      parts.nll = multinomial_nll(x.values, eta);
      if (with_grad) {
        const auto s = softmax(eta);
        double total = 0.0;
        for (double xj : x.values) total += xj;
        for (std::size_t j = 0; j < model.M; ++j)
          d_eta[j] = total * s[j] - x.values[j];
      }
      break;
    }
  }

  if (with_grad) {
    std::vector<double> d_z(model.d, 0.0);
    affine_backward(model.W_dec, model.b_dec, z.data(), d_eta.data(), d_z.data());

    std::vector<double> d_mean(model.d), d_logvar(model.d);
    for (std::size_t k = 0; k < model.d; ++k) {
      d_mean[k] = d_z[k] + a_mu[k];  // reparam + KL
      d_logvar[k] = d_z[k] * 0.5 * std::exp(0.5 * logvar[k]) * noise[k] +
                    0.5 * (std::exp(logvar[k]) - 1.0);
      if (std::abs(a_lv[k]) >= kLogvarClamp) d_logvar[k] = 0.0;  // clamp gate
    }
    affine_backward(model.W_lv, model.b_lv, x.values.data(), d_logvar.data(), nullptr);
    affine_backward(model.W_mu, model.b_mu, x.values.data(), d_mean.data(), nullptr);
  }
  return parts;
}

double vae_loss(const DecayedVector& x, VaeModel& model,
                const std::vector<double>& noise, bool with_grad) {
  return vae_loss_parts(x, model, noise, with_grad).total();
}

std::vector<double> reconstruct(const DecayedVector& x, const VaeModel& model) {
  return reconstruct_cached(x, model, nullptr);
}

std::vector<double> reconstruct_cached(const DecayedVector& x,
                                       const VaeModel& model, ReconCache* cache) {
  if (x.values.size() != model.M)
    throw std::invalid_argument("reconstruct: |x| != M");
  std::vector<double> mean(model.d);
  affine_forward(model.W_mu, model.b_mu, x.values.data(), mean.data());
  std::vector<double> eta = decode_eta(mean, model);
  std::vector<double> x_hat = head_mean(eta, model);
  if (cache) {
    cache->mean = mean;
    cache->eta = eta;
    cache->x_hat = x_hat;
  }
  return x_hat;
}

void reconstruct_backward(const DecayedVector& x, VaeModel& model,
                          const ReconCache& cache,
                          const std::vector<double>& dx_hat) {
  const auto d_eta = head_backward(cache.eta, cache.x_hat, dx_hat, model.head);
  std::vector<double> d_mean(model.d, 0.0);
  affine_backward(model.W_dec, model.b_dec, cache.mean.data(), d_eta.data(),
                  d_mean.data());
  affine_backward(model.W_mu, model.b_mu, x.values.data(), d_mean.data(), nullptr);
}

TrainReport train_vae(const std::vector<DecayedVector>& data, VaeModel& model,
                      std::size_t epochs, std::size_t batch,
                      const OptimizerConfig& opt, std::uint64_t seed) {
  if (data.empty()) throw data_error("train_vae: empty dataset");
  if (batch == 0) throw config_error("batch size must be >= 1");

  TrainReport report;
  report.epochs = epochs;
  report.batch = batch;
  report.seed = seed;

  auto params = model.params();
  Rng rng_order(seed);
  Rng rng_noise(seed ^ 0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> noise(model.d);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    deterministic_shuffle(order, rng_order);
    double epoch_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += batch, ++batch_index) {
      const std::size_t end = std::min(start + batch, order.size());
      for (auto* p : params) p->zero_grad();
      double batch_sum = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        for (auto& n : noise) n = normal(rng_noise);
        batch_sum += vae_loss(data[order[i]], model, noise, true);
      }
      if (!std::isfinite(batch_sum))
        throw divergence_error("non-finite VAE loss in epoch " +
                               std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index));
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto* p : params)
        for (auto& g : p->grad) g *= inv;
      adam_step(params, opt);
      epoch_sum += batch_sum;
    }
    report.epoch_loss.push_back(epoch_sum / static_cast<double>(data.size()));
  }
  return report;
}

nlohmann::json vae_meta(const VaeModel& model) {
  return nlohmann::json{{"kind", "vae"},
                        {"head", to_string(model.head)},
                        {"M", model.M},
                        {"d", model.d},
                        {"tau", model.tau},
                        {"learn_power", model.learn_power},
                        {"fixed_power", model.fixed_power}};
}

void save_vae(const VaeModel& model, const std::string& prefix) {
  std::vector<const ParamTensor*> tensors{&model.W_mu, &model.b_mu, &model.W_lv,
                                          &model.b_lv, &model.W_dec, &model.b_dec};
  if (model.head == HeadKind::Tweedie) tensors.push_back(&model.rho);
  save_checkpoint(prefix, tensors, vae_meta(model));
}

VaeModel load_vae(const std::string& prefix) {
  Checkpoint ckpt = load_checkpoint(prefix);
  if (ckpt.meta.value("kind", "") != "vae")
    throw data_error("not a VAE checkpoint: " + prefix);
  VaeModel model(ckpt.meta.at("M").get<std::size_t>(),
                 ckpt.meta.at("d").get<std::size_t>(),
                 head_from_string(ckpt.meta.at("head").get<std::string>()),
                 ckpt.meta.at("tau").get<double>(), /*seed=*/0,
                 ckpt.meta.at("learn_power").get<bool>(),
                 ckpt.meta.at("fixed_power").get<double>());
  model.W_mu.values = ckpt.tensor("W_mu").values;
  model.b_mu.values = ckpt.tensor("b_mu").values;
  model.W_lv.values = ckpt.tensor("W_lv").values;
  model.b_lv.values = ckpt.tensor("b_lv").values;
  model.W_dec.values = ckpt.tensor("W_dec").values;
  model.b_dec.values = ckpt.tensor("b_dec").values;
  if (model.head == HeadKind::Tweedie)
    model.rho.values = ckpt.tensor("rho").values;
  return model;
}

}  // namespace gloie
