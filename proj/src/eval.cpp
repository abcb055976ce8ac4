#include "gloie/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "gloie/errors.hpp"

namespace gloie {

namespace {
bool in_truth(std::span<const std::uint32_t> truth, std::uint32_t item) {
  return std::binary_search(truth.begin(), truth.end(), item);
}
}  // namespace

double recall_at_k(std::span<const std::uint32_t> topk,
                   std::span<const std::uint32_t> truth, std::size_t K) {
  if (truth.empty()) throw data_error("recall_at_k: empty truth set");
  if (topk.size() < K) throw std::invalid_argument("recall_at_k: |topk| < K");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < K; ++r)
    if (in_truth(truth, topk[r])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double ndcg_at_k(std::span<const std::uint32_t> topk,
                 std::span<const std::uint32_t> truth, std::size_t K) {
  if (truth.empty()) throw data_error("ndcg_at_k: empty truth set");
  if (topk.size() < K) throw std::invalid_argument("ndcg_at_k: |topk| < K");
  double dcg = 0.0;
  for (std::size_t r = 1; r <= K; ++r)
    if (in_truth(truth, topk[r - 1]))
      dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  double idcg = 0.0;
  const std::size_t ideal = std::min(K, truth.size());
  for (std::size_t r = 1; r <= ideal; ++r)
    idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return dcg / idcg;
}

MetricValues metrics_at_k(const std::vector<std::vector<std::uint32_t>>& topks,
                          const std::vector<std::vector<std::uint32_t>>& truths,
                          std::size_t K) {
  if (topks.size() != truths.size() || topks.empty())
    throw std::invalid_argument("metrics_at_k: user list mismatch");
  MetricValues mv;
  std::size_t hits_users = 0;
  for (std::size_t u = 0; u < topks.size(); ++u) {
    mv.recall += recall_at_k(topks[u], truths[u], K);
    mv.ndcg += ndcg_at_k(topks[u], truths[u], K);
    bool any = false;
    for (std::size_t r = 0; r < K && !any; ++r)
      any = in_truth(truths[u], topks[u][r]);
    if (any) ++hits_users;
  }
  const double n = static_cast<double>(topks.size());
  mv.recall /= n;
  mv.ndcg /= n;
  mv.phr = static_cast<double>(hits_users) / n;
  return mv;
}

std::vector<std::uint32_t> toppop_rank(const std::vector<UserSequence>& train,
                                       std::size_t M, std::size_t K) {
  if (train.empty()) throw data_error("toppop_rank: empty training data");
  if (K > M) throw config_error("toppop_rank: K > M");
  std::vector<std::size_t> counts(M, 0);
  for (const auto& seq : train)
    for (const auto& s : seq.sets)
      for (auto j : s) counts.at(j) += 1;
  std::vector<std::uint32_t> order(M);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) {
                     if (counts[a] != counts[b]) return counts[a] > counts[b];
                     return a < b;
                   });
  order.resize(K);
  return order;
}

std::vector<std::uint32_t> personal_toppop_rank(
    const std::vector<std::vector<std::uint32_t>>& history,
    std::span<const std::uint32_t> global_order, std::size_t M, std::size_t K) {
  if (K > M) throw config_error("personal_toppop_rank: K > M");
  std::map<std::uint32_t, std::size_t> counts;
  for (const auto& s : history)
    for (auto j : s) counts[j] += 1;

  std::vector<std::uint32_t> personal;
  personal.reserve(counts.size());
  for (const auto& [item, c] : counts) personal.push_back(item);
  std::stable_sort(personal.begin(), personal.end(),
                   [&](std::uint32_t a, std::uint32_t b) {
                     if (counts[a] != counts[b]) return counts[a] > counts[b];
                     return a < b;
                   });

  std::vector<std::uint32_t> out;
  std::vector<bool> used(M, false);
  out.reserve(K);
  for (auto j : personal) {
    if (out.size() == K) break;
    out.push_back(j);
    used[j] = true;
  }
  for (auto j : global_order) {
    if (out.size() == K) break;
    if (!used[j]) {
      out.push_back(j);
      used[j] = true;
    }
  }
  // global_order may itself be truncated; complete from the full index range
  for (std::uint32_t j = 0; out.size() < K && j < M; ++j)
    if (!used[j]) {
      out.push_back(j);
      used[j] = true;
    }
  return out;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["n_users"] = n_users;
  nlohmann::ordered_json models = nlohmann::ordered_json::object();
  for (const auto& [name, byk] : rows) {
    nlohmann::ordered_json row = nlohmann::ordered_json::object();
    for (const auto& [K, mv] : byk) {
      row["recall@" + std::to_string(K)] = mv.recall;
      row["ndcg@" + std::to_string(K)] = mv.ndcg;
      row["phr@" + std::to_string(K)] = mv.phr;
    }
    models[name] = std::move(row);
  }
  j["models"] = std::move(models);
  return j.dump(2);
}

std::string MetricsReport::to_table() const {
  std::vector<std::size_t> ks;
  if (!rows.empty())
    for (const auto& [K, mv] : rows.begin()->second) ks.push_back(K);

  std::ostringstream os;
  os << std::left << std::setw(22) << "model";
  for (auto K : ks)
    for (const char* m : {"Recall", "NDCG", "PHR"})
      os << std::right << std::setw(12) << (std::string(m) + "@" + std::to_string(K));
  os << "\n";
  os << std::string(22 + ks.size() * 36, '-') << "\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& [name, byk] : rows) {
    os << std::left << std::setw(22) << name;
    for (auto K : ks) {
      const auto& mv = byk.at(K);
      os << std::right << std::setw(12) << mv.recall << std::setw(12) << mv.ndcg
         << std::setw(12) << mv.phr;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace gloie
