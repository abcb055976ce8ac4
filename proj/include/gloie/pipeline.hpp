#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gloie/dataset.hpp"
#include "gloie/eval.hpp"
#include "gloie/fusion.hpp"
#include "gloie/local.hpp"
#include "gloie/synth.hpp"
#include "gloie/vae.hpp"

namespace gloie {

/// Full run configuration, echoed verbatim into every output artifact.
struct RunConfig {
  double tau = 0.6;
  std::size_t latent_dim = 128;
  std::size_t local_dim = 32;
  HeadKind head = HeadKind::Tweedie;
  std::size_t vae_epochs = 30;
  std::size_t fusion_epochs = 30;
  double lr = 0.001;
  std::size_t batch = 256;
  std::uint64_t seed = 0;
  std::vector<std::size_t> k_list = {10, 20, 40};
  bool tied = true;
  bool freeze_vae = true;
  bool learn_power = true;
  double fixed_power = 1.5;
  double split_train = 0.7;
  double split_val = 0.1;
  double split_test = 0.2;
  std::string stage = "full";  // "full" | "vae-only"

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  SplitSpec split_spec() const;
};

/// In-memory result of the two training stages.
struct TrainedModels {
  VaeModel vae;
  LocalEncoderParams local;
  FusionParams fusion;
  bool has_fusion = false;
  bool uses_external = false;
  LocalEmbeddingTable table;
  TrainReport vae_report, fusion_report;
};

TrainedModels train_models(const RunConfig& config, const Dataset& ds,
                           const Split& split,
                           const std::string& external_embeddings_path = "");

/// Scores all M items for one user: the raw reconstruction when fusion is
/// null, otherwise the fused affinity.
std::vector<double> model_scores(const Instance& inst, const VaeModel& vae,
                                 const FusionParams* fusion,
                                 const LocalEncoderParams* local,
                                 const LocalEmbeddingTable* table);

struct EvalInputs {
  const Dataset* ds = nullptr;
  const std::vector<std::size_t>* eval_users = nullptr;
  std::vector<std::uint32_t> toppop_order;  // full-M, from the train split
  const VaeModel* vae = nullptr;
  const FusionParams* fusion = nullptr;
  const LocalEncoderParams* local = nullptr;
  const LocalEmbeddingTable* table = nullptr;
  std::vector<std::size_t> k_list{10, 20, 40};
  std::string model_name = "model";
  bool include_baselines = true;
};
MetricsReport evaluate(const EvalInputs& inputs);

/// Stage 1 (+ stage 2 unless stage == "vae-only"), persisted under model_dir:
/// config.json, vocab.json, vae.{manifest.json,bin}, fusion.{...}, toppop.json
/// and train_report.json.
void train_pipeline(const RunConfig& config, const std::string& data_path,
                    const std::string& model_dir,
                    const std::string& external_embeddings_path = "");

struct EvalOptions {
  std::string split = "test";  // "train" | "val" | "test"
  bool vae_only = false;       // rank by reconstruction even if fusion exists
  std::vector<std::size_t> k_list;  // empty -> model config
};

/// Evaluates the persisted model plus Toppop/PersonalToppop baselines on the
/// requested split; writes metrics.json and metrics.txt into model_dir.
MetricsReport eval_pipeline(const std::string& model_dir,
                            const std::string& data_path,
                            const EvalOptions& options);

void predict_pipeline(const std::string& model_dir, const std::string& data_path,
                      const std::string& split, std::size_t K,
                      const std::string& out_path, bool vae_only = false);

/// Per-tau stage-1 training + test evaluation; emits CSV rows
/// (tau, recall@10, ndcg@10, phr@10).
void sweep_tau(const RunConfig& base, const std::string& data_path,
               const std::vector<double>& grid, const std::string& out_csv);

}  // namespace gloie
