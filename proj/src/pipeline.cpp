#include "gloie/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "gloie/errors.hpp"
#include "gloie/featurize.hpp"

namespace gloie {

namespace fs = std::filesystem;

void RunConfig::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw config_error("tau must lie in (0,1)");
  if (latent_dim < 1 || local_dim < 1)
    throw config_error("latent and local dims must be >= 1");
  if (!(lr > 0.0)) throw config_error("learning rate must be > 0");
  if (batch < 1) throw config_error("batch size must be >= 1");
  if (k_list.empty()) throw config_error("K list must be non-empty");
  if (!learn_power && !(fixed_power > 1.0 && fixed_power < 2.0))
    throw config_error("fixed Tweedie power must lie in (1,2)");
  if (split_train < 0 || split_val < 0 || split_test < 0 ||
      std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
    throw config_error("split fractions must be non-negative and sum to 1");
  if (stage != "full" && stage != "vae-only")
    throw config_error("stage must be 'full' or 'vae-only'");
}

nlohmann::json RunConfig::to_json() const {
  return nlohmann::json{{"tau", tau},
                        {"latent_dim", latent_dim},
                        {"local_dim", local_dim},
                        {"head", to_string(head)},
                        {"vae_epochs", vae_epochs},
                        {"fusion_epochs", fusion_epochs},
                        {"lr", lr},
                        {"batch", batch},
                        {"seed", seed},
                        {"k_list", k_list},
                        {"tied", tied},
                        {"freeze_vae", freeze_vae},
                        {"learn_power", learn_power},
                        {"fixed_power", fixed_power},
                        {"split", {{"train", split_train}, {"val", split_val}, {"test", split_test}}},
                        {"stage", stage}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  c.tau = j.value("tau", c.tau);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.local_dim = j.value("local_dim", c.local_dim);
  if (j.contains("head")) c.head = head_from_string(j.at("head").get<std::string>());
  c.vae_epochs = j.value("vae_epochs", c.vae_epochs);
  c.fusion_epochs = j.value("fusion_epochs", c.fusion_epochs);
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.seed = j.value("seed", c.seed);
  if (j.contains("k_list")) c.k_list = j.at("k_list").get<std::vector<std::size_t>>();
  c.tied = j.value("tied", c.tied);
  c.freeze_vae = j.value("freeze_vae", c.freeze_vae);
  c.learn_power = j.value("learn_power", c.learn_power);
  c.fixed_power = j.value("fixed_power", c.fixed_power);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.split_train = s.value("train", c.split_train);
    c.split_val = s.value("val", c.split_val);
    c.split_test = s.value("test", c.split_test);
  }
  c.stage = j.value("stage", c.stage);
  return c;
}

SplitSpec RunConfig::split_spec() const {
  return SplitSpec{split_train, split_val, split_test, seed};
}

TrainedModels train_models(const RunConfig& config, const Dataset& ds,
                           const Split& split,
                           const std::string& external_embeddings_path) {
  config.validate();
  const std::size_t M = ds.vocab.size();

  std::vector<Instance> train_instances;
  train_instances.reserve(split.train.size());
  for (auto idx : split.train)
    train_instances.push_back(make_instance(ds.sequences[idx]));

  std::vector<DecayedVector> train_x;
  train_x.reserve(train_instances.size());
  for (const auto& inst : train_instances)
    train_x.push_back(decayed_sum(inst.history, config.tau, M));

  TrainedModels out;
  out.vae = VaeModel(M, config.latent_dim, config.head, config.tau, config.seed,
                     config.learn_power, config.fixed_power);
  OptimizerConfig opt;
  opt.lr = config.lr;
  out.vae_report = train_vae(train_x, out.vae, config.vae_epochs, config.batch,
                             opt, config.seed);

  if (config.stage == "vae-only") return out;

  std::size_t d = config.local_dim;
  if (!external_embeddings_path.empty()) {
    out.table = load_external_embeddings(external_embeddings_path, ds.vocab);
    out.uses_external = true;
    if (out.table.dim != d) {
      std::cerr << "note: external embedding dim " << out.table.dim
                << " overrides configured local dim " << d << "\n";
      d = out.table.dim;
    }
  }
  out.local = LocalEncoderParams(M, d, config.seed + 1);
  out.fusion = FusionParams(d, config.seed + 2, config.tied);

  FusionTrainOptions fopt;
  fopt.epochs = config.fusion_epochs;
  fopt.batch = config.batch;
  fopt.opt = opt;
  fopt.seed = config.seed;
  fopt.freeze_vae = config.freeze_vae;
  fopt.external = out.uses_external ? &out.table : nullptr;
  out.fusion_report =
      train_fusion(train_instances, out.vae, out.local, out.fusion, fopt);
  out.has_fusion = true;
  return out;
}

std::vector<double> model_scores(const Instance& inst, const VaeModel& vae,
                                 const FusionParams* fusion,
                                 const LocalEncoderParams* local,
                                 const LocalEmbeddingTable* table) {
  const auto x = decayed_sum(inst.history, vae.tau, vae.M);
  auto x_hat = reconstruct(x, vae);
  if (!fusion) return x_hat;

  const auto x_tilde = normalize_recon(x_hat);
  const auto interacted = inst.interacted();
  std::vector<const std::vector<double>*> locals(interacted.size(), nullptr);
  std::vector<std::pair<std::uint32_t, std::vector<double>>> builtin;
  if (table) {
    for (std::size_t i = 0; i < interacted.size(); ++i)
      locals[i] = table->lookup(inst.user_id, interacted[i]);
  } else {
    if (!local) throw config_error("model_scores: no local embedding source");
    builtin = local_embed(inst, *local, vae.tau);
    for (std::size_t i = 0; i < interacted.size(); ++i)
      locals[i] = &builtin[i].second;
  }
  return score_items(x_hat, x_tilde, interacted, locals, *fusion);
}

MetricsReport evaluate(const EvalInputs& in) {
  if (!in.ds || !in.eval_users || !in.vae)
    throw config_error("evaluate: missing inputs");
  if (in.eval_users->empty()) throw data_error("evaluate: empty user list");
  const std::size_t M = in.ds->vocab.size();
  const std::size_t k_max = *std::max_element(in.k_list.begin(), in.k_list.end());
  if (k_max > M) throw config_error("K exceeds vocabulary size");

  std::vector<std::vector<std::uint32_t>> truths, model_topk, toppop_topk,
      personal_topk;
  truths.reserve(in.eval_users->size());
  for (auto idx : *in.eval_users) {
    const Instance inst = make_instance(in.ds->sequences[idx]);
    truths.push_back(inst.target);

    const auto scores = model_scores(inst, *in.vae, in.fusion, in.local, in.table);
    model_topk.push_back(topk_indices(scores, k_max));
    if (in.include_baselines) {
      toppop_topk.emplace_back(in.toppop_order.begin(),
                               in.toppop_order.begin() + static_cast<std::ptrdiff_t>(k_max));
      personal_topk.push_back(
          personal_toppop_rank(inst.history, in.toppop_order, M, k_max));
    }
  }

  MetricsReport report;
  report.n_users = in.eval_users->size();
  for (auto K : in.k_list) {
    report.rows[in.model_name][K] = metrics_at_k(model_topk, truths, K);
    if (in.include_baselines) {
      report.rows["toppop"][K] = metrics_at_k(toppop_topk, truths, K);
      report.rows["personal-toppop"][K] = metrics_at_k(personal_topk, truths, K);
    }
  }
  return report;
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open output file: " + path);
  out << text;
}

const std::vector<std::size_t>& pick_split(const Split& split,
                                           const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  throw config_error("unknown split: " + name);
}

struct LoadedModel {
  RunConfig config;
  Vocab vocab;
  VaeModel vae;
  FusionCheckpoint fusion;
  bool has_fusion = false;
  LocalEmbeddingTable table;
  bool uses_external = false;
};

LoadedModel load_model_dir(const std::string& model_dir) {
  LoadedModel m;
  std::ifstream cf(model_dir + "/config.json");
  if (!cf) throw data_error("cannot open " + model_dir + "/config.json");
  nlohmann::json cj = nlohmann::json::parse(cf, nullptr, false);
  if (cj.is_discarded()) throw data_error("malformed config.json in " + model_dir);
  m.config = RunConfig::from_json(cj.at("config"));
  m.vocab = load_vocab(model_dir + "/vocab.json");
  m.vae = load_vae(model_dir + "/vae");
  if (fs::exists(model_dir + "/fusion.manifest.json")) {
    m.fusion = load_fusion(model_dir + "/fusion");
    m.has_fusion = true;
    if (!m.fusion.has_local) {
      m.table = load_external_embeddings(model_dir + "/local_embeddings.jsonl",
                                         m.vocab);
      m.uses_external = true;
    }
  }
  return m;
}

std::vector<std::uint32_t> load_toppop(const std::string& model_dir,
                                       const Vocab& vocab) {
  std::ifstream in(model_dir + "/toppop.json");
  if (!in) throw data_error("cannot open " + model_dir + "/toppop.json");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("order"))
    throw data_error("malformed toppop.json in " + model_dir);
  std::vector<std::uint32_t> order;
  for (const auto& id : j.at("order"))
    order.push_back(static_cast<std::uint32_t>(vocab.index(id.get<std::string>())));
  return order;
}

}  // namespace

void train_pipeline(const RunConfig& config, const std::string& data_path,
                    const std::string& model_dir,
                    const std::string& external_embeddings_path) {
  config.validate();
  const Dataset ds = load_dataset(data_path);
  const Split split = split_users(ds.sequences, config.split_spec());

  TrainedModels models = train_models(config, ds, split, external_embeddings_path);

  fs::create_directories(model_dir);

  nlohmann::ordered_json cj;
  cj["config"] = config.to_json();
  cj["data"] = {{"path", data_path},
                {"users", ds.sequences.size()},
                {"items", ds.vocab.size()},
                {"split_sizes",
                 {split.train.size(), split.val.size(), split.test.size()}}};
  write_text(model_dir + "/config.json", cj.dump(2) + "\n");

  save_vocab(ds.vocab, model_dir + "/vocab.json");
  save_vae(models.vae, model_dir + "/vae");
  if (models.has_fusion)
    save_fusion(models.fusion, models.uses_external ? nullptr : &models.local,
                model_dir + "/fusion");
  if (models.uses_external)
    save_external_embeddings(models.table, ds.vocab,
                             model_dir + "/local_embeddings.jsonl");

  std::vector<UserSequence> train_seqs;
  train_seqs.reserve(split.train.size());
  for (auto idx : split.train) train_seqs.push_back(ds.sequences[idx]);
  const auto toppop = toppop_rank(train_seqs, ds.vocab.size(), ds.vocab.size());
  nlohmann::ordered_json tj;
  tj["config"] = config.to_json();
  nlohmann::ordered_json order = nlohmann::ordered_json::array();
  for (auto j : toppop) order.push_back(ds.vocab.item(j));
  tj["order"] = std::move(order);
  write_text(model_dir + "/toppop.json", tj.dump() + "\n");

  nlohmann::ordered_json rj;
  rj["config"] = config.to_json();
  rj["seed"] = config.seed;
  rj["vae_epoch_loss"] = models.vae_report.epoch_loss;
  if (models.has_fusion)
    rj["fusion_epoch_loss"] = models.fusion_report.epoch_loss;
  write_text(model_dir + "/train_report.json", rj.dump(2) + "\n");
}

MetricsReport eval_pipeline(const std::string& model_dir,
                            const std::string& data_path,
                            const EvalOptions& options) {
  LoadedModel m = load_model_dir(model_dir);
  const Dataset ds = load_dataset(data_path);
  if (!(ds.vocab == m.vocab))
    throw data_error("vocab mismatch between model and data");

  const Split split = split_users(ds.sequences, m.config.split_spec());

  EvalInputs in;
  in.ds = &ds;
  in.eval_users = &pick_split(split, options.split);
  in.toppop_order = load_toppop(model_dir, ds.vocab);
  in.vae = &m.vae;
  const bool use_fusion = m.has_fusion && !options.vae_only;
  if (use_fusion) {
    in.fusion = &m.fusion.fusion;
    if (m.uses_external)
      in.table = &m.table;
    else
      in.local = &m.fusion.local;
  }
  in.k_list = options.k_list.empty() ? m.config.k_list : options.k_list;
  in.model_name =
      (use_fusion ? "gloie-" : "vae-") + to_string(m.config.head);

  MetricsReport report = evaluate(in);

  nlohmann::ordered_json j;
  j["config"] = m.config.to_json();
  j["split"] = options.split;
  j["report"] = nlohmann::json::parse(report.to_json());
  write_text(model_dir + "/metrics.json", j.dump(2) + "\n");
  write_text(model_dir + "/metrics.txt", report.to_table());
  return report;
}

void predict_pipeline(const std::string& model_dir, const std::string& data_path,
                      const std::string& split_name, std::size_t K,
                      const std::string& out_path, bool vae_only) {
  LoadedModel m = load_model_dir(model_dir);
  const Dataset ds = load_dataset(data_path);
  if (!(ds.vocab == m.vocab))
    throw data_error("vocab mismatch between model and data");
  if (K > ds.vocab.size()) throw config_error("K exceeds vocabulary size");

  const Split split = split_users(ds.sequences, m.config.split_spec());
  const auto& users = pick_split(split, split_name);

  const bool use_fusion = m.has_fusion && !vae_only;
  std::ofstream out(out_path);
  if (!out) throw data_error("cannot open output file: " + out_path);
  for (auto idx : users) {
    const Instance inst = make_instance(ds.sequences[idx]);
    const auto scores =
        model_scores(inst, m.vae, use_fusion ? &m.fusion.fusion : nullptr,
                     use_fusion && !m.uses_external ? &m.fusion.local : nullptr,
                     use_fusion && m.uses_external ? &m.table : nullptr);
    const auto topk = topk_indices(scores, K);
    nlohmann::ordered_json j;
    j["user"] = inst.user_id;
    nlohmann::ordered_json ids = nlohmann::ordered_json::array();
    nlohmann::ordered_json ss = nlohmann::ordered_json::array();
    for (auto item : topk) {
      ids.push_back(ds.vocab.item(item));
      ss.push_back(scores[item]);
    }
    j["topk"] = std::move(ids);
    j["scores"] = std::move(ss);
    out << j.dump() << "\n";
  }
  nlohmann::ordered_json meta;
  meta["config"] = m.config.to_json();
  meta["split"] = split_name;
  meta["k"] = K;
  write_text(out_path + ".meta.json", meta.dump(2) + "\n");
}

void sweep_tau(const RunConfig& base, const std::string& data_path,
               const std::vector<double>& grid, const std::string& out_csv) {
  if (grid.empty()) throw config_error("sweep grid must be non-empty");
  for (double t : grid)
    if (!(t > 0.0 && t < 1.0)) throw config_error("sweep tau values must lie in (0,1)");

  const Dataset ds = load_dataset(data_path);
  const Split split = split_users(ds.sequences, base.split_spec());

  std::vector<UserSequence> train_seqs;
  train_seqs.reserve(split.train.size());
  for (auto idx : split.train) train_seqs.push_back(ds.sequences[idx]);
  const auto toppop = toppop_rank(train_seqs, ds.vocab.size(), ds.vocab.size());

  std::ofstream out(out_csv);
  if (!out) throw data_error("cannot open output file: " + out_csv);
  out << "tau,recall@10,ndcg@10,phr@10\n";
  for (double t : grid) {
    RunConfig config = base;
    config.tau = t;
    config.stage = "vae-only";
    config.validate();
    TrainedModels models = train_models(config, ds, split);

    EvalInputs in;
    in.ds = &ds;
    in.eval_users = &split.test;
    in.toppop_order = toppop;
    in.vae = &models.vae;
    in.k_list = {10};
    in.model_name = "vae";
    in.include_baselines = false;
    const MetricsReport report = evaluate(in);
    const auto& mv = report.rows.at("vae").at(10);
    out << t << "," << mv.recall << "," << mv.ndcg << "," << mv.phr << "\n";
  }
  nlohmann::ordered_json meta;
  meta["config"] = base.to_json();
  meta["grid"] = grid;
  write_text(out_csv + ".meta.json", meta.dump(2) + "\n");
}

}  // namespace gloie
