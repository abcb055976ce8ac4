#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "json.hpp"

#include "gloie/dataset.hpp"
#include "gloie/eval.hpp"
#include "gloie/featurize.hpp"
#include "gloie/likelihoods.hpp"
#include "gloie/pipeline.hpp"
#include "gloie/synth.hpp"

namespace py = pybind11;

namespace {

std::vector<double> py_decayed_sum(
    const std::vector<std::vector<std::uint32_t>>& history, double tau,
    std::size_t M) {
  return gloie::decayed_sum(history, tau, M).values;
}

std::vector<double> py_sample_compound_poisson(double lam, double shape,
                                               double rate_g, std::size_t n,
                                               std::uint64_t seed) {
  gloie::Rng rng(seed);
  gloie::CompoundPoissonParams params{lam, shape, rate_g};
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(gloie::sample_compound_poisson(params, rng));
  return out;
}

py::dict py_fit_tweedie_mu(const std::vector<double>& samples, double p,
                           std::size_t steps, double lr) {
  const auto fit = gloie::fit_tweedie_mu(samples, p, steps, lr);
  py::dict d;
  d["mu_hat"] = fit.mu_hat;
  d["steps"] = fit.steps_run;
  d["grad_norm"] = fit.grad_norm;
  d["converged"] = fit.converged;
  return d;
}

void py_generate_synthetic(const std::string& out_path, std::size_t users,
                           std::size_t items, std::size_t clusters,
                           std::size_t t_min, std::size_t t_max,
                           double mean_set_size, double repeat_prob,
                           double zipf_exponent, std::uint64_t seed) {
  gloie::SynthConfig cfg;
  cfg.users = users;
  cfg.items = items;
  cfg.clusters = clusters;
  cfg.t_min = t_min;
  cfg.t_max = t_max;
  cfg.mean_set_size = mean_set_size;
  cfg.repeat_prob = repeat_prob;
  cfg.zipf_exponent = zipf_exponent;
  cfg.seed = seed;
  gloie::generate_synthetic(cfg, out_path);
}

void py_train(const std::string& config_json, const std::string& data_path,
              const std::string& model_dir,
              const std::string& external_embeddings) {
  const auto cfg =
      gloie::RunConfig::from_json(nlohmann::json::parse(config_json));
  gloie::train_pipeline(cfg, data_path, model_dir, external_embeddings);
}

std::string py_evaluate(const std::string& model_dir,
                        const std::string& data_path, const std::string& split,
                        bool vae_only, const std::vector<std::size_t>& k_list) {
  gloie::EvalOptions options;
  options.split = split;
  options.vae_only = vae_only;
  options.k_list = k_list;
  return gloie::eval_pipeline(model_dir, data_path, options).to_json();
}

}  // namespace

PYBIND11_MODULE(_gloie, m) {
  m.doc() = "Temporal set prediction: Tweedie-decoder VAE with global-local "
            "embedding fusion";

  m.def("decayed_sum", &py_decayed_sum, py::arg("history"), py::arg("tau"),
        py::arg("m"));
  m.def("normalize_recon", &gloie::normalize_recon, py::arg("x_hat"));

  m.def("tweedie_loss", &gloie::tweedie_loss, py::arg("z"), py::arg("mu"),
        py::arg("p"));
  m.def("gaussian_nll",
        [](const std::vector<double>& x, const std::vector<double>& xh) {
          return gloie::gaussian_nll(x, xh);
        });
  m.def("multinomial_nll",
        [](const std::vector<double>& x, const std::vector<double>& logits) {
          return gloie::multinomial_nll(x, logits);
        });
  m.def("kl_std_normal",
        [](const std::vector<double>& mean, const std::vector<double>& logvar) {
          return gloie::kl_std_normal(mean, logvar);
        });
  m.def("sample_compound_poisson", &py_sample_compound_poisson, py::arg("lam"),
        py::arg("shape"), py::arg("rate_g"), py::arg("n"), py::arg("seed") = 0);
  m.def("fit_tweedie_mu", &py_fit_tweedie_mu, py::arg("samples"), py::arg("p"),
        py::arg("steps") = 500, py::arg("lr") = 0.5);

  m.def("recall_at_k",
        [](const std::vector<std::uint32_t>& topk,
           const std::vector<std::uint32_t>& truth, std::size_t k) {
          return gloie::recall_at_k(topk, truth, k);
        });
  m.def("ndcg_at_k",
        [](const std::vector<std::uint32_t>& topk,
           const std::vector<std::uint32_t>& truth, std::size_t k) {
          return gloie::ndcg_at_k(topk, truth, k);
        });

  m.def("convert_csv", &gloie::convert_csv, py::arg("csv_path"),
        py::arg("out_path"), py::arg("user_col"), py::arg("order_col"),
        py::arg("item_col"));
  m.def("generate_synthetic", &py_generate_synthetic, py::arg("out_path"),
        py::arg("users") = 2000, py::arg("items") = 200, py::arg("clusters") = 5,
        py::arg("t_min") = 2, py::arg("t_max") = 8,
        py::arg("mean_set_size") = 1.5, py::arg("repeat_prob") = 0.4,
        py::arg("zipf_exponent") = 1.1, py::arg("seed") = 0);

  m.def("train", &py_train, py::arg("config_json"), py::arg("data_path"),
        py::arg("model_dir"), py::arg("external_embeddings") = "");
  m.def("evaluate", &py_evaluate, py::arg("model_dir"), py::arg("data_path"),
        py::arg("split") = "test", py::arg("vae_only") = false,
        py::arg("k_list") = std::vector<std::size_t>{10, 20, 40});
  m.def("predict", &gloie::predict_pipeline, py::arg("model_dir"),
        py::arg("data_path"), py::arg("split"), py::arg("k"),
        py::arg("out_path"), py::arg("vae_only") = false);
}
