#include "gloie/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "json.hpp"

#include "gloie/dataset.hpp"
#include "gloie/featurize.hpp"
#include "gloie/fusion.hpp"
#include "gloie/likelihoods.hpp"
#include "gloie/local.hpp"
#include "gloie/vae.hpp"

namespace gloie {

namespace {

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

void randomize(ParamTensor& t, Rng& rng, double scale) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& v : t.values) v = dist(rng);
}

// Sparse non-negative vector in the style of a decayed history sum.
std::vector<double> random_decayed(std::size_t M, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> x(M, 0.0);
  for (auto& v : x)
    if (unit(rng) > 0.55) v = unit(rng) * 2.4;
  if (*std::max_element(x.begin(), x.end()) == 0.0)
    x[rng() % M] = 0.5 + unit(rng);
  return x;
}

}  // namespace

double GradSuiteReport::overall() const {
  double mx = 0.0;
  for (const auto& [name, err] : family_max) mx = std::max(mx, err);
  return mx;
}

std::string GradSuiteReport::to_json() const {
  nlohmann::ordered_json j;
  j["instances"] = instances;
  j["overall_max_rel_err"] = overall();
  nlohmann::ordered_json fam = nlohmann::ordered_json::object();
  for (const auto& [name, err] : family_max) fam[name] = err;
  j["families"] = std::move(fam);
  return j.dump(2);
}

GradSuiteReport run_gradient_suite(std::size_t instances, std::uint64_t seed) {
  GradSuiteReport report;
  report.instances = instances;
  auto& fam = report.family_max;
  for (const char* name : {"tweedie_loss", "gaussian_nll", "multinomial_nll",
                           "kl_std_normal", "vae_loss", "fusion_loss"})
    fam[name] = 0.0;

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double h = 1e-5;

  for (std::size_t inst = 0; inst < instances; ++inst) {
    const std::size_t M = 4 + rng() % 9;  // <= 12
    const std::size_t d = 2 + rng() % 7;  // <= 8

    // -- tweedie_loss: d/dmu and d/dp against central differences
    {
      const double z = unit(rng) < 0.35 ? 0.0 : unit(rng) * 5.0;
      const double mu = 0.1 + unit(rng) * 4.0;
      const double p = 1.1 + 0.8 * unit(rng);
      const double num_mu =
          (tweedie_loss(z, mu + h, p) - tweedie_loss(z, mu - h, p)) / (2 * h);
      fam["tweedie_loss"] = std::max(
          fam["tweedie_loss"], rel_err(tweedie_loss_dmu(z, mu, p), num_mu));
      const double num_p =
          (tweedie_loss(z, mu, p + h) - tweedie_loss(z, mu, p - h)) / (2 * h);
      fam["tweedie_loss"] = std::max(fam["tweedie_loss"],
                                     rel_err(tweedie_loss_dp(z, mu, p), num_p));
    }

    // -- gaussian_nll: grad wrt x_hat is (x_hat - x)
    {
      std::vector<double> x(M), xh(M);
      for (auto& v : x) v = normal(rng);
      for (auto& v : xh) v = normal(rng);
      for (int rep = 0; rep < 3; ++rep) {
        const std::size_t j = rng() % M;
        const double keep = xh[j];
        xh[j] = keep + h;
        const double up = gaussian_nll(x, xh);
        xh[j] = keep - h;
        const double down = gaussian_nll(x, xh);
        xh[j] = keep;
        fam["gaussian_nll"] = std::max(
            fam["gaussian_nll"], rel_err(xh[j] - x[j], (up - down) / (2 * h)));
      }
    }

    // -- multinomial_nll: grad wrt logits is (sum x) softmax - x
    {
      std::vector<double> x = random_decayed(M, rng);
      std::vector<double> logits(M);
      for (auto& v : logits) v = normal(rng) * 2.0;
      const auto s = softmax(logits);
      double total = 0.0;
      for (double xj : x) total += xj;
      for (int rep = 0; rep < 3; ++rep) {
        const std::size_t j = rng() % M;
        const double keep = logits[j];
        logits[j] = keep + h;
        const double up = multinomial_nll(x, logits);
        logits[j] = keep - h;
        const double down = multinomial_nll(x, logits);
        logits[j] = keep;
        fam["multinomial_nll"] =
            std::max(fam["multinomial_nll"],
                     rel_err(total * s[j] - x[j], (up - down) / (2 * h)));
      }
    }

    // -- kl_std_normal: dmean = mean, dlogvar = 0.5 (exp(lv) - 1)
    {
      std::vector<double> mean(d), logvar(d);
      for (auto& v : mean) v = normal(rng);
      for (auto& v : logvar) v = normal(rng);
      const std::size_t k = rng() % d;
      double keep = mean[k];
      mean[k] = keep + h;
      double up = kl_std_normal(mean, logvar);
      mean[k] = keep - h;
      double down = kl_std_normal(mean, logvar);
      mean[k] = keep;
      fam["kl_std_normal"] = std::max(fam["kl_std_normal"],
                                      rel_err(mean[k], (up - down) / (2 * h)));
      keep = logvar[k];
      logvar[k] = keep + h;
      up = kl_std_normal(mean, logvar);
      logvar[k] = keep - h;
      down = kl_std_normal(mean, logvar);
      logvar[k] = keep;
      fam["kl_std_normal"] =
          std::max(fam["kl_std_normal"],
                   rel_err(0.5 * (std::exp(logvar[k]) - 1.0),
                           (up - down) / (2 * h)));
    }

    // -- full VAE loss per head, frozen noise
    {
      const HeadKind heads[] = {HeadKind::Tweedie, HeadKind::Gaussian,
                                HeadKind::Multinomial};
      const HeadKind head = heads[inst % 3];
      VaeModel model(M, d, head, 0.6, rng());
      randomize(model.b_mu, rng, 0.3);
      randomize(model.b_lv, rng, 0.3);
      randomize(model.b_dec, rng, 0.3);
      DecayedVector x{random_decayed(M, rng), 0.6};
      std::vector<double> noise(d);
      for (auto& n : noise) n = normal(rng);
      auto loss_fn = [&](bool with_grad) {
        return vae_loss(x, model, noise, with_grad);
      };
      const auto check =
          gradient_check(loss_fn, model.params(), h, 60, rng());
      fam["vae_loss"] = std::max(fam["vae_loss"], check.max_rel_err);
    }

    // -- full fusion loss (tied w0, frozen VAE)
    {
      Instance fake;
      fake.user_id = "u";
      const std::size_t T = 1 + rng() % 3;
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<std::uint32_t> set;
        const std::size_t n = 1 + rng() % 3;
        for (std::size_t i = 0; i < n; ++i)
          set.push_back(static_cast<std::uint32_t>(rng() % M));
        std::sort(set.begin(), set.end());
        set.erase(std::unique(set.begin(), set.end()), set.end());
        fake.history.push_back(std::move(set));
      }
      std::vector<std::uint32_t> target;
      const std::size_t n = 1 + rng() % 3;
      for (std::size_t i = 0; i < n; ++i)
        target.push_back(static_cast<std::uint32_t>(rng() % M));
      std::sort(target.begin(), target.end());
      target.erase(std::unique(target.begin(), target.end()), target.end());
      fake.target = std::move(target);

      VaeModel vae(M, d, HeadKind::Tweedie, 0.6, rng());
      randomize(vae.b_dec, rng, 0.3);
      LocalEncoderParams local(M, d, rng());
      randomize(local.b_h, rng, 0.3);
      FusionParams fusion(d, rng(), true);
      FusionTrainOptions options;
      options.freeze_vae = true;

      std::vector<ParamTensor*> params = fusion.params();
      for (auto* p : local.params()) params.push_back(p);
      auto loss_fn = [&](bool with_grad) {
        return fusion_example_loss(fake, vae, local, fusion, options, with_grad);
      };
      const auto check = gradient_check(loss_fn, params, h, 60, rng());
      fam["fusion_loss"] = std::max(fam["fusion_loss"], check.max_rel_err);
    }
  }
  return report;
}

}  // namespace gloie
