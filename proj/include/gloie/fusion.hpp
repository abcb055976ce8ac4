#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gloie/dataset.hpp"
#include "gloie/diffcore.hpp"
#include "gloie/local.hpp"
#include "gloie/vae.hpp"

namespace gloie {

/// Attention gate and affinity parameters. When tied (the default), w* in the
/// scalar-to-vector lift is the same storage as the affinity vector w0, so
/// gradients accumulate from both uses and the affinity of non-interacted
/// items is sigma(x_hat * w0^T w0 + b0) — monotone in x_hat.
struct FusionParams {
  std::size_t d = 0;
  bool tied = true;
  ParamTensor Wq, Wk;  // d x d
  ParamTensor w0;      // d
  ParamTensor b0;      // scalar
  ParamTensor wstar;   // separate lift vector, used only when untied

  FusionParams() = default;
  FusionParams(std::size_t d, std::uint64_t seed, bool tied = true);

  std::vector<ParamTensor*> params();
  const std::vector<double>& wstar_values() const {
    return tied ? w0.values : wstar.values;
  }
};

/// Att(q, k) with q = x_tilde_ij * w*: alpha = sigma((Wq q)^T (Wk k)),
/// returns alpha q + (1 - alpha) k.
std::vector<double> attention_fuse(double x_tilde_ij,
                                   std::span<const double> z_ij,
                                   const FusionParams& params);

/// Interacted items (z_ij != nullptr) go through the attention gate on the
/// normalized reconstruction; non-interacted items are lifted directly as
/// x_hat_ij * w*.
std::vector<double> fused_embedding(double x_hat_ij, double x_tilde_ij,
                                    const std::vector<double>* z_ij,
                                    const FusionParams& params);

/// sigma(z_tilde^T w0 + b0), in (0,1).
double affinity(std::span<const double> z_tilde, const FusionParams& params);

/// Per-user multi-label soft margin loss with predictions clamped to
/// [1e-7, 1 - 1e-7]; batch values are averaged over users by the caller.
double tsp_loss(std::span<const std::uint8_t> y, std::span<const double> y_hat);

/// Affinity scores for all M items of one user. `local` is aligned with the
/// sorted `interacted` list; a null entry is a data integrity failure.
std::vector<double> score_items(const std::vector<double>& x_hat,
                                const std::vector<double>& x_tilde,
                                const std::vector<std::uint32_t>& interacted,
                                const std::vector<const std::vector<double>*>& local,
                                const FusionParams& params);

/// Indices of the K largest scores, ties broken by ascending item index.
std::vector<std::uint32_t> topk_indices(const std::vector<double>& scores,
                                        std::size_t K);

struct FusionTrainOptions {
  std::size_t epochs = 30;
  std::size_t batch = 256;
  OptimizerConfig opt;
  std::uint64_t seed = 0;
  bool freeze_vae = true;  // joint fine-tuning when false
  /// When set, z_ij come from this table and the built-in encoder is unused.
  const LocalEmbeddingTable* external = nullptr;
};

/// Stage-2 training of the local encoder + fusion parameters on the
/// multi-label loss, with the VAE frozen by default.
TrainReport train_fusion(const std::vector<Instance>& instances, VaeModel& vae,
                         LocalEncoderParams& local, FusionParams& fusion,
                         const FusionTrainOptions& options);

/// One user's forward pass + loss + full backward, shared between training
/// and the gradient checker. Returns the per-user tsp_loss.
double fusion_example_loss(const Instance& inst, VaeModel& vae,
                           LocalEncoderParams& local, FusionParams& fusion,
                           const FusionTrainOptions& options, bool with_grad);

void save_fusion(const FusionParams& fusion, const LocalEncoderParams* local,
                 const std::string& prefix);
struct FusionCheckpoint {
  FusionParams fusion;
  LocalEncoderParams local;
  bool has_local = false;
};
FusionCheckpoint load_fusion(const std::string& prefix);

}  // namespace gloie
