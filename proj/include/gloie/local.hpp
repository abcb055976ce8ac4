#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gloie/dataset.hpp"
#include "gloie/diffcore.hpp"

namespace gloie {

/// Per-user item embeddings, defined only for items the user interacted with
/// at least once.
struct LocalEmbeddingTable {
  std::size_t dim = 0;
  std::unordered_map<std::string,
                     std::unordered_map<std::uint32_t, std::vector<double>>>
      entries;

  const std::vector<double>* lookup(const std::string& user,
                                    std::uint32_t item) const;
  std::size_t size() const;
};

/// Lightweight built-in local encoder: per-item identity embedding gated by a
/// linear map of (decayed count, frequency fraction, recency) features.
struct LocalEncoderParams {
  std::size_t M = 0, d = 0;
  ParamTensor E;    // M x d item embeddings
  ParamTensor W_h;  // d x 3 feature map
  ParamTensor b_h;  // d

  LocalEncoderParams() = default;
  LocalEncoderParams(std::size_t M, std::size_t d, std::uint64_t seed);
  std::vector<ParamTensor*> params();
};

/// f_ij = [x_ij (decayed count), n_ij / T, tau^gap] for each interacted item.
struct LocalFeatures {
  std::vector<std::uint32_t> items;  // sorted interacted items
  std::vector<std::array<double, 3>> feats;
};
LocalFeatures local_features(const Instance& inst, double tau, std::size_t M);

/// Forward cache kept for the training backward pass.
struct LocalEmbedCache {
  LocalFeatures features;
  std::vector<std::vector<double>> h;  // W_h f + b_h per item
  std::vector<std::vector<double>> z;  // E_j (.) h per item
};
LocalEmbedCache local_embed_forward(const Instance& inst,
                                    const LocalEncoderParams& params, double tau);

/// z_ij = E_j (.) (W_h f_ij + b_h) for every interacted item, sorted by item.
std::vector<std::pair<std::uint32_t, std::vector<double>>> local_embed(
    const Instance& inst, const LocalEncoderParams& params, double tau);

/// Accumulates gradients for one item's upstream dz into E, W_h, b_h, given
/// that item's forward feature vector f and gate activation h.
void local_embed_backward(LocalEncoderParams& params, std::uint32_t item,
                          const std::array<double, 3>& f,
                          const std::vector<double>& h,
                          const std::vector<double>& dz);

/// JSON Lines: first line {"dim": d}; then {"user", "item", "vec"} rows.
LocalEmbeddingTable load_external_embeddings(const std::string& path,
                                             const Vocab& vocab);
void save_external_embeddings(const LocalEmbeddingTable& table,
                              const Vocab& vocab, const std::string& path);

}  // namespace gloie
