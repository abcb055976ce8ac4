#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gloie/dataset.hpp"
#include "gloie/errors.hpp"
#include "gloie/gradsuite.hpp"
#include "gloie/likelihoods.hpp"
#include "gloie/pipeline.hpp"
#include "gloie/synth.hpp"

namespace {

using gloie::RunConfig;

// Bound values for the shared model/training flags. --config supplies a JSON
// baseline; explicitly passed flags override it.
struct ConfigCli {
  std::string config_path;
  RunConfig bound;
  std::string head_str = "tweedie";
  bool untied = false;
  bool joint = false;
  double fixed_power = 0.0;
  std::map<std::string, CLI::Option*> opts;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file (flags override)");
    opts["tau"] = app->add_option("--tau", bound.tau, "decay factor in (0,1)");
    opts["latent-dim"] =
        app->add_option("--latent-dim", bound.latent_dim, "VAE latent dimension");
    opts["local-dim"] =
        app->add_option("--local-dim", bound.local_dim, "local embedding dimension");
    opts["head"] = app->add_option("--head", head_str,
                                   "decoder head: tweedie|gaussian|multinomial");
    opts["vae-epochs"] =
        app->add_option("--vae-epochs", bound.vae_epochs, "stage-1 epochs");
    opts["fusion-epochs"] =
        app->add_option("--fusion-epochs", bound.fusion_epochs, "stage-2 epochs");
    opts["lr"] = app->add_option("--lr", bound.lr, "Adam learning rate");
    opts["batch"] = app->add_option("--batch", bound.batch, "minibatch size");
    opts["seed"] = app->add_option("--seed", bound.seed, "RNG seed");
    opts["k"] = app->add_option("--k", bound.k_list, "K list for metrics")
                    ->delimiter(',');
    opts["untied"] = app->add_flag("--untied", untied,
                                   "learn w* separately instead of tying to w0");
    opts["joint"] = app->add_flag(
        "--joint", joint, "fine-tune the VAE during stage 2 (default frozen)");
    opts["fixed-power"] = app->add_option(
        "--fixed-power", fixed_power, "fix the Tweedie power instead of learning it");
    opts["stage"] =
        app->add_option("--stage", bound.stage, "training stage: full|vae-only");
    opts["split-train"] =
        app->add_option("--split-train", bound.split_train, "train fraction");
    opts["split-val"] = app->add_option("--split-val", bound.split_val, "val fraction");
    opts["split-test"] =
        app->add_option("--split-test", bound.split_test, "test fraction");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw gloie::config_error("cannot open config file: " + config_path);
      nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded())
        throw gloie::config_error("malformed config JSON: " + config_path);
      cfg = RunConfig::from_json(j);
    }
    auto passed = [&](const char* name) {
      return opts.count(name) && opts.at(name)->count() > 0;
    };
    if (passed("tau")) cfg.tau = bound.tau;
    if (passed("latent-dim")) cfg.latent_dim = bound.latent_dim;
    if (passed("local-dim")) cfg.local_dim = bound.local_dim;
    if (passed("head")) cfg.head = gloie::head_from_string(head_str);
    if (passed("vae-epochs")) cfg.vae_epochs = bound.vae_epochs;
    if (passed("fusion-epochs")) cfg.fusion_epochs = bound.fusion_epochs;
    if (passed("lr")) cfg.lr = bound.lr;
    if (passed("batch")) cfg.batch = bound.batch;
    if (passed("seed")) cfg.seed = bound.seed;
    if (passed("k")) cfg.k_list = bound.k_list;
    if (passed("untied")) cfg.tied = false;
    if (passed("joint")) cfg.freeze_vae = false;
    if (passed("fixed-power")) {
      cfg.learn_power = false;
      cfg.fixed_power = fixed_power;
    }
    if (passed("stage")) cfg.stage = bound.stage;
    if (passed("split-train")) cfg.split_train = bound.split_train;
    if (passed("split-val")) cfg.split_val = bound.split_val;
    if (passed("split-test")) cfg.split_test = bound.split_test;
    cfg.validate();
    return cfg;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"gloie: temporal set prediction with a Tweedie-decoder VAE and "
               "global-local embedding fusion"};
  app.require_subcommand(1);

  // convert
  auto* convert = app.add_subcommand("convert", "CSV -> canonical JSONL");
  std::string csv_path, out_path, user_col, order_col, item_col;
  convert->add_option("--csv", csv_path, "input CSV with header")->required();
  convert->add_option("--out", out_path, "output JSONL path")->required();
  convert->add_option("--user-col", user_col, "user id column")->required();
  convert->add_option("--order-col", order_col, "set order column")->required();
  convert->add_option("--item-col", item_col, "item id column")->required();

  // train
  auto* train = app.add_subcommand("train", "two-stage training");
  std::string train_data, model_dir, external_path;
  train->add_option("--data", train_data, "canonical JSONL dataset")->required();
  train->add_option("--model-dir", model_dir, "output model directory")->required();
  train->add_option("--external-embeddings", external_path,
                    "external local embedding JSONL (replaces the built-in encoder)");
  ConfigCli train_cfg;
  train_cfg.attach(train);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "metrics on a split + baselines");
  std::string eval_model_dir, eval_data, eval_split = "test";
  std::vector<std::size_t> eval_k;
  bool eval_vae_only = false;
  eval_cmd->add_option("--model-dir", eval_model_dir, "trained model directory")
      ->required();
  eval_cmd->add_option("--data", eval_data, "canonical JSONL dataset")->required();
  eval_cmd->add_option("--split", eval_split, "train|val|test (default test)");
  eval_cmd->add_option("--k", eval_k, "K list override")->delimiter(',');
  eval_cmd->add_flag("--vae-only", eval_vae_only,
                     "rank by the raw VAE reconstruction");

  // predict
  auto* predict = app.add_subcommand("predict", "dump per-user top-K JSONL");
  std::string pred_model_dir, pred_data, pred_out, pred_split = "test";
  std::size_t pred_k = 10;
  bool pred_vae_only = false;
  predict->add_option("--model-dir", pred_model_dir)->required();
  predict->add_option("--data", pred_data)->required();
  predict->add_option("--out", pred_out, "output JSONL path")->required();
  predict->add_option("--split", pred_split, "train|val|test (default test)");
  predict->add_option("--k", pred_k, "ranking depth");
  predict->add_flag("--vae-only", pred_vae_only);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic benchmark");
  gloie::SynthConfig synth_cfg;
  std::string synth_out;
  synth->add_option("--out", synth_out, "output JSONL path")->required();
  synth->add_option("--users", synth_cfg.users);
  synth->add_option("--items", synth_cfg.items);
  synth->add_option("--clusters", synth_cfg.clusters);
  synth->add_option("--t-min", synth_cfg.t_min);
  synth->add_option("--t-max", synth_cfg.t_max);
  synth->add_option("--mean-set-size", synth_cfg.mean_set_size);
  synth->add_option("--repeat-prob", synth_cfg.repeat_prob);
  synth->add_option("--zipf-s", synth_cfg.zipf_exponent);
  synth->add_option("--seed", synth_cfg.seed);

  // sweep-tau
  auto* sweep = app.add_subcommand("sweep-tau", "stage-1 metric@10 sweep over tau");
  std::string sweep_data, sweep_out;
  std::vector<double> sweep_grid{0.2, 0.4, 0.6, 0.8};
  sweep->add_option("--data", sweep_data)->required();
  sweep->add_option("--out", sweep_out, "output CSV path")->required();
  sweep->add_option("--grid", sweep_grid, "tau values")->delimiter(',');
  ConfigCli sweep_cfg;
  sweep_cfg.attach(sweep);

  // fit-tweedie
  auto* fit = app.add_subcommand("fit-tweedie",
                                 "maximum-likelihood mean fit on samples");
  std::string fit_input;
  double fit_p = 1.5, fit_lambda = 1.0, fit_shape = 2.0, fit_rate = 1.0,
         fit_lr = 0.5;
  std::size_t fit_n = 100000, fit_steps = 500;
  std::uint64_t fit_seed = 0;
  fit->add_option("--input", fit_input,
                  "file with one non-negative sample per line (otherwise draws "
                  "compound-Poisson samples)");
  fit->add_option("--p", fit_p, "Tweedie power in (1,2)");
  fit->add_option("--lambda", fit_lambda, "Poisson rate for drawn samples");
  fit->add_option("--shape", fit_shape, "Gamma shape for drawn samples");
  fit->add_option("--rate", fit_rate, "Gamma rate for drawn samples");
  fit->add_option("--n", fit_n, "number of drawn samples");
  fit->add_option("--seed", fit_seed);
  fit->add_option("--steps", fit_steps, "max descent steps");
  fit->add_option("--lr", fit_lr, "descent step size");

  // grad-check
  auto* gc = app.add_subcommand("grad-check",
                                "finite-difference check of all analytic gradients");
  std::size_t gc_instances = 20;
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  gc->add_option("--instances", gc_instances, "random instances per family");
  gc->add_option("--seed", gc_seed);
  gc->add_option("--tol", gc_tol, "max relative error to accept");

  CLI11_PARSE(app, argc, argv);

  if (*convert) {
    gloie::convert_csv(csv_path, out_path, user_col, order_col, item_col);
    std::cout << "wrote " << out_path << "\n";
  } else if (*train) {
    const RunConfig cfg = train_cfg.resolve();
    gloie::train_pipeline(cfg, train_data, model_dir, external_path);
    std::cout << "model written to " << model_dir << "\n";
  } else if (*eval_cmd) {
    gloie::EvalOptions options;
    options.split = eval_split;
    options.vae_only = eval_vae_only;
    options.k_list = eval_k;
    const auto report = gloie::eval_pipeline(eval_model_dir, eval_data, options);
    std::cout << report.to_table();
    std::cout << "metrics written to " << eval_model_dir << "/metrics.json\n";
  } else if (*predict) {
    gloie::predict_pipeline(pred_model_dir, pred_data, pred_split, pred_k,
                            pred_out, pred_vae_only);
    std::cout << "predictions written to " << pred_out << "\n";
  } else if (*synth) {
    gloie::generate_synthetic(synth_cfg, synth_out);
    std::cout << "wrote " << synth_out << "\n";
  } else if (*sweep) {
    const RunConfig cfg = sweep_cfg.resolve();
    gloie::sweep_tau(cfg, sweep_data, sweep_grid, sweep_out);
    std::cout << "sweep written to " << sweep_out << "\n";
  } else if (*fit) {
    std::vector<double> samples;
    if (!fit_input.empty()) {
      std::ifstream in(fit_input);
      if (!in) throw gloie::data_error("cannot open sample file: " + fit_input);
      double v;
      while (in >> v) samples.push_back(v);
      if (samples.empty()) throw gloie::data_error("no samples in " + fit_input);
    } else {
      gloie::Rng rng(fit_seed);
      gloie::CompoundPoissonParams params{fit_lambda, fit_shape, fit_rate};
      samples.reserve(fit_n);
      for (std::size_t i = 0; i < fit_n; ++i)
        samples.push_back(gloie::sample_compound_poisson(params, rng));
    }
    const auto result = gloie::fit_tweedie_mu(samples, fit_p, fit_steps, fit_lr);
    nlohmann::ordered_json j;
    j["mu_hat"] = result.mu_hat;
    j["steps"] = result.steps_run;
    j["grad_norm"] = result.grad_norm;
    j["converged"] = result.converged;
    j["n_samples"] = samples.size();
    j["p"] = fit_p;
    std::cout << j.dump(2) << "\n";
    if (!result.converged) {
      std::cerr << "fit did not converge within " << fit_steps
                << " steps (grad_norm = " << result.grad_norm << ")\n";
      return 1;
    }
  } else if (*gc) {
    const auto report = gloie::run_gradient_suite(gc_instances, gc_seed);
    std::cout << report.to_json() << "\n";
    if (report.overall() >= gc_tol) {
      std::cerr << "gradient check FAILED (max rel err " << report.overall()
                << " >= " << gc_tol << ")\n";
      return 1;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const gloie::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const gloie::data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const gloie::divergence_error& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
