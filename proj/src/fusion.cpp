#include "gloie/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gloie/errors.hpp"
#include "gloie/featurize.hpp"

namespace gloie {

namespace {

constexpr double kProbClamp = 1e-7;

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// y = W x for a square d x d tensor (no bias).
void matvec(const ParamTensor& W, const double* x, double* y) {
  for (std::size_t r = 0; r < W.rows; ++r) {
    const double* wr = W.values.data() + r * W.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < W.cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

}  // namespace

FusionParams::FusionParams(std::size_t d_, std::uint64_t seed, bool tied_)
    : d(d_),
      tied(tied_),
      Wq("Wq", d_, d_),
      Wk("Wk", d_, d_),
      w0("w0", d_),
      b0("b0", 1),
      wstar("wstar", d_) {
  Rng rng(seed);
  init_uniform_fan(Wq, rng);
  init_uniform_fan(Wk, rng);
  init_uniform_fan(w0, rng);
  init_uniform_fan(wstar, rng);
}

std::vector<ParamTensor*> FusionParams::params() {
  std::vector<ParamTensor*> out{&Wq, &Wk, &w0, &b0};
  if (!tied) out.push_back(&wstar);
  return out;
}

std::vector<double> attention_fuse(double x_tilde_ij,
                                   std::span<const double> z_ij,
                                   const FusionParams& params) {
  const std::size_t d = params.d;
  if (z_ij.size() != d) throw std::invalid_argument("attention_fuse: |z| != d");
  const auto& ws = params.wstar_values();
  std::vector<double> q(d), a(d), b(d);
  for (std::size_t k = 0; k < d; ++k) q[k] = x_tilde_ij * ws[k];
  matvec(params.Wq, q.data(), a.data());
  matvec(params.Wk, z_ij.data(), b.data());
  const double alpha = sigmoid(dot(a, b));
  std::vector<double> out(d);
  for (std::size_t k = 0; k < d; ++k)
    out[k] = alpha * q[k] + (1.0 - alpha) * z_ij[k];
  return out;
}

std::vector<double> fused_embedding(double x_hat_ij, double x_tilde_ij,
                                    const std::vector<double>* z_ij,
                                    const FusionParams& params) {
  if (z_ij) return attention_fuse(x_tilde_ij, *z_ij, params);
  const auto& ws = params.wstar_values();
  std::vector<double> out(params.d);
  for (std::size_t k = 0; k < params.d; ++k) out[k] = x_hat_ij * ws[k];
  return out;
}

double affinity(std::span<const double> z_tilde, const FusionParams& params) {
  return sigmoid(dot(z_tilde, params.w0.values) + params.b0.values[0]);
}

double tsp_loss(std::span<const std::uint8_t> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw std::invalid_argument("tsp_loss: size mismatch");
  double loss = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j) {
    const double p = std::clamp(y_hat[j], kProbClamp, 1.0 - kProbClamp);
    loss -= y[j] ? std::log(p) : std::log(1.0 - p);
  }
  return loss;
}

std::vector<double> score_items(const std::vector<double>& x_hat,
                                const std::vector<double>& x_tilde,
                                const std::vector<std::uint32_t>& interacted,
                                const std::vector<const std::vector<double>*>& local,
                                const FusionParams& params) {
  if (interacted.size() != local.size())
    throw std::invalid_argument("score_items: interacted/local mismatch");
  const std::size_t M = x_hat.size();
  std::vector<double> scores(M);
  std::size_t ii = 0;
  for (std::size_t j = 0; j < M; ++j) {
    const std::vector<double>* z = nullptr;
    if (ii < interacted.size() && interacted[ii] == j) {
      z = local[ii];
      if (!z)
        throw data_error("missing local embedding for interacted item index " +
                         std::to_string(j));
      ++ii;
    }
    scores[j] = affinity(fused_embedding(x_hat[j], x_tilde[j], z, params), params);
  }
  return scores;
}

std::vector<std::uint32_t> topk_indices(const std::vector<double>& scores,
                                        std::size_t K) {
  if (K > scores.size())
    throw config_error("K = " + std::to_string(K) + " exceeds item count " +
                       std::to_string(scores.size()));
  std::vector<std::uint32_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(K),
                    idx.end(), [&](std::uint32_t a, std::uint32_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  idx.resize(K);
  return idx;
}

namespace {

struct PreparedInstance {
  const Instance* inst = nullptr;
  DecayedVector x;
  std::vector<std::uint8_t> y;
  LocalFeatures feats;
  std::vector<double> x_hat, x_tilde;  // only filled when the VAE is frozen
  std::vector<const std::vector<double>*> external_vecs;  // aligned with feats.items
};

PreparedInstance prepare_instance(const Instance& inst, const VaeModel& vae,
                                  const LocalEmbeddingTable* external,
                                  bool frozen) {
  PreparedInstance pi;
  pi.inst = &inst;
  pi.x = decayed_sum(inst.history, vae.tau, vae.M);
  pi.y = inst.target_indicator(vae.M);
  pi.feats = local_features(inst, vae.tau, vae.M);
  if (frozen) {
    pi.x_hat = reconstruct(pi.x, vae);
    pi.x_tilde = normalize_recon(pi.x_hat);
  }
  if (external) {
    pi.external_vecs.reserve(pi.feats.items.size());
    for (auto item : pi.feats.items) {
      const auto* vec = external->lookup(inst.user_id, item);
      if (!vec)
        throw data_error("missing external embedding for (" + inst.user_id +
                         ", item index " + std::to_string(item) + ")");
      if (vec->size() != external->dim)
        throw data_error("embedding dim mismatch for user " + inst.user_id);
      pi.external_vecs.push_back(vec);
    }
  }
  return pi;
}

// Full forward + loss (+ backward) for one user. Non-interacted items use
// the algebraic form s_j = x_hat_j * (w*^T w0) + b0 so the loop stays O(M).
double scored_example_pass(const PreparedInstance& pi, VaeModel& vae,
                           LocalEncoderParams* local, FusionParams& fusion,
                           bool with_grad, bool joint,
                           const LocalEmbeddingTable* external) {
  const std::size_t M = vae.M;
  const std::size_t d = fusion.d;
  const auto& w0 = fusion.w0.values;
  const auto& ws = fusion.wstar_values();
  const double b0 = fusion.b0.values[0];

  ReconCache rc;
  std::vector<double> joint_x_hat, joint_x_tilde;
  const std::vector<double>* x_hat = &pi.x_hat;
  const std::vector<double>* x_tilde = &pi.x_tilde;
  if (joint) {
    joint_x_hat = reconstruct_cached(pi.x, vae, &rc);
    joint_x_tilde = normalize_recon(joint_x_hat);
    x_hat = &joint_x_hat;
    x_tilde = &joint_x_tilde;
  }

  // local embeddings for interacted items
  const std::size_t n_int = pi.feats.items.size();
  std::vector<std::vector<double>> h(n_int), z_store(n_int);
  std::vector<const std::vector<double>*> zs(n_int);
  if (external) {
    zs = pi.external_vecs;
  } else {
    for (std::size_t i = 0; i < n_int; ++i) {
      h[i].resize(d);
      affine_forward(local->W_h, local->b_h, pi.feats.feats[i].data(), h[i].data());
      z_store[i].resize(d);
      const double* e = local->E.values.data() + pi.feats.items[i] * d;
      for (std::size_t k = 0; k < d; ++k) z_store[i][k] = e[k] * h[i][k];
      zs[i] = &z_store[i];
    }
  }

  const double ww = dot(ws, w0);
  auto& ws_grad = fusion.tied ? fusion.w0.grad : fusion.wstar.grad;

  double loss = 0.0, dww = 0.0, db0 = 0.0;
  std::vector<double> dxh, dxt;
  if (with_grad && joint) {
    dxh.assign(M, 0.0);
    dxt.assign(M, 0.0);
  }

  std::vector<double> q(d), a(d), b(d), fused(d), dfused(d), dq(d), dz(d);
  std::size_t ii = 0;
  for (std::size_t j = 0; j < M; ++j) {
    const bool inter = ii < n_int && pi.feats.items[ii] == j;
    double s;
    double alpha = 0.0;
    const std::vector<double>* z = nullptr;
    if (inter) {
      z = zs[ii];
      const double xt = (*x_tilde)[j];
      for (std::size_t k = 0; k < d; ++k) q[k] = xt * ws[k];
      matvec(fusion.Wq, q.data(), a.data());
      matvec(fusion.Wk, z->data(), b.data());
      alpha = sigmoid(dot(a, b));
      for (std::size_t k = 0; k < d; ++k)
        fused[k] = alpha * q[k] + (1.0 - alpha) * (*z)[k];
      s = dot(fused, w0) + b0;
    } else {
      s = (*x_hat)[j] * ww + b0;
    }

    const double yh = sigmoid(s);
    const double yhc = std::clamp(yh, kProbClamp, 1.0 - kProbClamp);
    const double yj = pi.y[j] ? 1.0 : 0.0;
    loss -= pi.y[j] ? std::log(yhc) : std::log(1.0 - yhc);

    if (with_grad) {
      // the clamp flattens the loss once sigma(s) leaves [clamp, 1-clamp]
      const double ds = (yh > kProbClamp && yh < 1.0 - kProbClamp) ? yh - yj : 0.0;
      if (ds != 0.0) {
        db0 += ds;
        if (inter) {
          double dalpha = 0.0;
          for (std::size_t k = 0; k < d; ++k) {
            dfused[k] = ds * w0[k];
            fusion.w0.grad[k] += ds * fused[k];
            dalpha += dfused[k] * (q[k] - (*z)[k]);
          }
          const double du = dalpha * alpha * (1.0 - alpha);
          for (std::size_t k = 0; k < d; ++k) {
            dq[k] = alpha * dfused[k];
            dz[k] = (1.0 - alpha) * dfused[k];
          }
          for (std::size_t r = 0; r < d; ++r) {
            const double dar = du * b[r];
            const double dbr = du * a[r];
            double* wq_g = fusion.Wq.grad.data() + r * d;
            double* wk_g = fusion.Wk.grad.data() + r * d;
            const double* wq_r = fusion.Wq.values.data() + r * d;
            const double* wk_r = fusion.Wk.values.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) {
              wq_g[c] += dar * q[c];
              dq[c] += wq_r[c] * dar;
              wk_g[c] += dbr * (*z)[c];
              dz[c] += wk_r[c] * dbr;
            }
          }
          const double xt = (*x_tilde)[j];
          for (std::size_t k = 0; k < d; ++k) ws_grad[k] += xt * dq[k];
          if (joint) dxt[j] += dot(dq, ws);
          if (!external)
            local_embed_backward(*local, pi.feats.items[ii], pi.feats.feats[ii],
                                 h[ii], dz);
        } else {
          dww += ds * (*x_hat)[j];
          if (joint) dxh[j] += ds * ww;
        }
      }
    }
    if (inter) ++ii;
  }

  if (with_grad) {
    fusion.b0.grad[0] += db0;
    if (fusion.tied) {
      for (std::size_t k = 0; k < d; ++k) fusion.w0.grad[k] += dww * 2.0 * w0[k];
    } else {
      for (std::size_t k = 0; k < d; ++k) {
        fusion.wstar.grad[k] += dww * w0[k];
        fusion.w0.grad[k] += dww * ws[k];
      }
    }
    if (joint) {
      const double mx = *std::max_element(x_hat->begin(), x_hat->end());
      if (mx > 0.0) {
        // x_tilde_j = x_hat_j / mx - 0.5; the argmax coordinate collects the
        // quotient-rule term and its own direct term cancels exactly
        double weighted = 0.0;
        for (std::size_t j = 0; j < M; ++j) weighted += dxt[j] * (*x_hat)[j];
        const std::size_t jm = static_cast<std::size_t>(
            std::max_element(x_hat->begin(), x_hat->end()) - x_hat->begin());
        for (std::size_t j = 0; j < M; ++j) dxh[j] += dxt[j] / mx;
        dxh[jm] -= weighted / (mx * mx);
      }
      reconstruct_backward(pi.x, vae, rc, dxh);
    }
  }
  return loss;
}

}  // namespace

double fusion_example_loss(const Instance& inst, VaeModel& vae,
                           LocalEncoderParams& local, FusionParams& fusion,
                           const FusionTrainOptions& options, bool with_grad) {
  PreparedInstance pi =
      prepare_instance(inst, vae, options.external, options.freeze_vae);
  return scored_example_pass(pi, vae, options.external ? nullptr : &local, fusion,
                             with_grad, !options.freeze_vae, options.external);
}

TrainReport train_fusion(const std::vector<Instance>& instances, VaeModel& vae,
                         LocalEncoderParams& local, FusionParams& fusion,
                         const FusionTrainOptions& options) {
  if (instances.empty()) throw data_error("train_fusion: empty instance list");
  if (options.batch == 0) throw config_error("batch size must be >= 1");
  if (!options.external && local.d != fusion.d)
    throw config_error("local/fusion dimensionality mismatch");
  if (options.external && options.external->dim != fusion.d)
    throw config_error("external embedding dim != fusion dim");

  TrainReport report;
  report.epochs = options.epochs;
  report.batch = options.batch;
  report.seed = options.seed;

  std::vector<PreparedInstance> prepared;
  prepared.reserve(instances.size());
  for (const auto& inst : instances)
    prepared.push_back(
        prepare_instance(inst, vae, options.external, options.freeze_vae));

  std::vector<ParamTensor*> trainable = fusion.params();
  if (!options.external)
    for (auto* p : local.params()) trainable.push_back(p);
  if (!options.freeze_vae)
    for (auto* p : vae.params()) trainable.push_back(p);

  Rng rng_order(options.seed);
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    deterministic_shuffle(order, rng_order);
    double epoch_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += options.batch, ++batch_index) {
      const std::size_t end = std::min(start + options.batch, order.size());
      for (auto* p : trainable) p->zero_grad();
      double batch_sum = 0.0;
      for (std::size_t i = start; i < end; ++i)
        batch_sum += scored_example_pass(prepared[order[i]], vae,
                                         options.external ? nullptr : &local,
                                         fusion, true, !options.freeze_vae,
                                         options.external);
      if (!std::isfinite(batch_sum))
        throw divergence_error("non-finite fusion loss in epoch " +
                               std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index));
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto* p : trainable)
        for (auto& g : p->grad) g *= inv;
      adam_step(trainable, options.opt);
      epoch_sum += batch_sum;
    }
    report.epoch_loss.push_back(epoch_sum / static_cast<double>(prepared.size()));
  }
  return report;
}

void save_fusion(const FusionParams& fusion, const LocalEncoderParams* local,
                 const std::string& prefix) {
  nlohmann::json meta{{"kind", "fusion"},
                      {"d", fusion.d},
                      {"tied", fusion.tied},
                      {"has_local", local != nullptr},
                      {"M", local ? local->M : 0}};
  std::vector<const ParamTensor*> tensors{&fusion.Wq, &fusion.Wk, &fusion.w0,
                                          &fusion.b0};
  if (!fusion.tied) tensors.push_back(&fusion.wstar);
  if (local) {
    tensors.push_back(&local->E);
    tensors.push_back(&local->W_h);
    tensors.push_back(&local->b_h);
  }
  save_checkpoint(prefix, tensors, meta);
}

FusionCheckpoint load_fusion(const std::string& prefix) {
  Checkpoint ckpt = load_checkpoint(prefix);
  if (ckpt.meta.value("kind", "") != "fusion")
    throw data_error("not a fusion checkpoint: " + prefix);
  FusionCheckpoint out;
  const auto d = ckpt.meta.at("d").get<std::size_t>();
  out.fusion = FusionParams(d, 0, ckpt.meta.at("tied").get<bool>());
  out.fusion.Wq.values = ckpt.tensor("Wq").values;
  out.fusion.Wk.values = ckpt.tensor("Wk").values;
  out.fusion.w0.values = ckpt.tensor("w0").values;
  out.fusion.b0.values = ckpt.tensor("b0").values;
  if (!out.fusion.tied) out.fusion.wstar.values = ckpt.tensor("wstar").values;
  out.has_local = ckpt.meta.at("has_local").get<bool>();
  if (out.has_local) {
    out.local = LocalEncoderParams(ckpt.meta.at("M").get<std::size_t>(), d, 0);
    out.local.E.values = ckpt.tensor("E").values;
    out.local.W_h.values = ckpt.tensor("W_h").values;
    out.local.b_h.values = ckpt.tensor("b_h").values;
  }
  return out;
}

}  // namespace gloie
