#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gloie/dataset.hpp"

namespace gloie {

/// |topk[0..K) ∩ truth| / |truth|.
double recall_at_k(std::span<const std::uint32_t> topk,
                   std::span<const std::uint32_t> truth, std::size_t K);

/// Binary-gain DCG with 1/log2(rank+1) discount, normalized by the ideal DCG
/// truncated at min(K, |truth|).
double ndcg_at_k(std::span<const std::uint32_t> topk,
                 std::span<const std::uint32_t> truth, std::size_t K);

struct MetricValues {
  double recall = 0.0;
  double ndcg = 0.0;
  double phr = 0.0;
};

/// Averages recall/ndcg over users; phr is the fraction of users whose top-K
/// intersects the truth.
MetricValues metrics_at_k(const std::vector<std::vector<std::uint32_t>>& topks,
                          const std::vector<std::vector<std::uint32_t>>& truths,
                          std::size_t K);

/// Items ordered by total interaction count over all sets of the given
/// sequences (each appearance in a set counts once), ties by ascending index.
std::vector<std::uint32_t> toppop_rank(const std::vector<UserSequence>& train,
                                       std::size_t M, std::size_t K);

/// The user's own items by personal count (ties by index), backfilled with
/// the global order up to K.
std::vector<std::uint32_t> personal_toppop_rank(
    const std::vector<std::vector<std::uint32_t>>& history,
    std::span<const std::uint32_t> global_order, std::size_t M, std::size_t K);

/// rows: model name -> K -> values. N′ = number of test users.
struct MetricsReport {
  std::map<std::string, std::map<std::size_t, MetricValues>> rows;
  std::size_t n_users = 0;

  std::string to_json() const;
  std::string to_table() const;
};

}  // namespace gloie
