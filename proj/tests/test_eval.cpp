#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "gloie/dataset.hpp"
#include "gloie/errors.hpp"
#include "gloie/eval.hpp"
#include "gloie/rng.hpp"

using namespace gloie;

namespace {

// independent brute-force references built on linear scans
double recall_oracle(const std::vector<std::uint32_t>& topk,
                     const std::set<std::uint32_t>& truth, std::size_t K) {
  std::size_t hits = 0;
  for (std::size_t r = 0; r < K; ++r)
    if (truth.count(topk[r])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double ndcg_oracle(const std::vector<std::uint32_t>& topk,
                   const std::set<std::uint32_t>& truth, std::size_t K) {
  double dcg = 0.0;
  for (std::size_t r = 1; r <= K; ++r)
    if (truth.count(topk[r - 1])) dcg += 1.0 / std::log2(r + 1.0);
  double idcg = 0.0;
  for (std::size_t r = 1; r <= std::min(K, truth.size()); ++r)
    idcg += 1.0 / std::log2(r + 1.0);
  return dcg / idcg;
}

bool hit_oracle(const std::vector<std::uint32_t>& topk,
                const std::set<std::uint32_t>& truth, std::size_t K) {
  for (std::size_t r = 0; r < K; ++r)
    if (truth.count(topk[r])) return true;
  return false;
}

}  // namespace

TEST_CASE("recall_at_k pinned cases") {
  const std::vector<std::uint32_t> topk{0, 1};
  CHECK(recall_at_k(topk, std::vector<std::uint32_t>{1, 2}, 2) == 0.5);
  CHECK(recall_at_k(topk, std::vector<std::uint32_t>{0, 1}, 2) == 1.0);
  CHECK_THROWS_AS(recall_at_k(topk, std::vector<std::uint32_t>{}, 2), data_error);
}

TEST_CASE("ndcg_at_k pinned cases") {
  // ideal ordering scores exactly 1
  CHECK(ndcg_at_k(std::vector<std::uint32_t>{3, 1, 0},
                  std::vector<std::uint32_t>{1, 3}, 3) ==
        doctest::Approx((1.0 + 1.0 / std::log2(3.0)) /
                        (1.0 + 1.0 / std::log2(3.0)))
            .epsilon(1e-12));
  // truth at ranks 2 and 3 of [a,b,c]
  const double want =
      (1.0 / std::log2(3.0) + 1.0 / std::log2(4.0)) / (1.0 + 1.0 / std::log2(3.0));
  CHECK(ndcg_at_k(std::vector<std::uint32_t>{0, 1, 2},
                  std::vector<std::uint32_t>{1, 2}, 3) ==
        doctest::Approx(want).epsilon(1e-12));
  CHECK(want == doctest::Approx(0.69343).epsilon(1e-5));
}

TEST_CASE("metrics match brute-force references on an exhaustive sweep") {
  const std::size_t M = 6;
  // all truth sets of size 1..3 over six items
  std::vector<std::set<std::uint32_t>> truths;
  for (std::uint32_t a = 0; a < M; ++a) {
    truths.push_back({a});
    for (std::uint32_t b = a + 1; b < M; ++b) {
      truths.push_back({a, b});
      for (std::uint32_t c = b + 1; c < M; ++c) truths.push_back({a, b, c});
    }
  }
  REQUIRE(truths.size() == 6 + 15 + 20);

  std::vector<std::uint32_t> perm{0, 1, 2, 3, 4, 5};
  std::size_t cases = 0;
  do {
    for (const auto& truth : truths) {
      const std::vector<std::uint32_t> truth_vec(truth.begin(), truth.end());
      for (std::size_t K = 1; K <= M; ++K) {
        CHECK(std::abs(recall_at_k(perm, truth_vec, K) -
                       recall_oracle(perm, truth, K)) <= 1e-12);
        CHECK(std::abs(ndcg_at_k(perm, truth_vec, K) -
                       ndcg_oracle(perm, truth, K)) <= 1e-12);
        ++cases;
      }
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(cases == 720 * 41 * 6);
}

TEST_CASE("metrics_at_k aggregates users; PHR counts hitting users") {
  const std::vector<std::vector<std::uint32_t>> topks{
      {0, 1}, {2, 3}, {4, 5}};
  const std::vector<std::vector<std::uint32_t>> truths{
      {0}, {3}, {0}};  // users 1 and 2 hit... user 3 misses
  const auto mv = metrics_at_k(topks, truths, 2);
  CHECK(mv.phr == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(mv.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("PHR dominates recall and recall is monotone in K") {
  Rng rng(3);
  const std::size_t M = 12;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint32_t> ranking(M);
    std::iota(ranking.begin(), ranking.end(), 0u);
    deterministic_shuffle(ranking, rng);
    std::set<std::uint32_t> truth;
    const std::size_t n = 1 + rng() % 4;
    for (std::size_t i = 0; i < n; ++i)
      truth.insert(static_cast<std::uint32_t>(rng() % M));
    const std::vector<std::uint32_t> truth_vec(truth.begin(), truth.end());

    double prev = 0.0;
    for (std::size_t K = 1; K <= M; ++K) {
      const double r = recall_at_k(ranking, truth_vec, K);
      CHECK(r >= prev);
      prev = r;
      const double phr = hit_oracle(ranking, truth, K) ? 1.0 : 0.0;
      CHECK(phr >= r - 1e-12);
      CHECK(ndcg_at_k(ranking, truth_vec, K) >= 0.0);
      CHECK(ndcg_at_k(ranking, truth_vec, K) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("toppop_rank orders by total interaction count") {
  std::vector<UserSequence> train{
      {"u1", {{0}, {0, 1}}},
      {"u2", {{0}, {1}}},
  };
  // counts: item0 = 3, item1 = 2
  CHECK(toppop_rank(train, 2, 2) == std::vector<std::uint32_t>{0, 1});

  std::vector<UserSequence> flat{{"u1", {{0, 1, 2}, {0, 1, 2}}}};
  CHECK(toppop_rank(flat, 3, 3) == std::vector<std::uint32_t>{0, 1, 2});
  CHECK_THROWS_AS(toppop_rank({}, 3, 3), data_error);
}

TEST_CASE("toppop_rank matches a counting oracle") {
  Rng rng(9);
  const std::size_t M = 15;
  std::vector<UserSequence> train;
  for (int u = 0; u < 30; ++u) {
    UserSequence seq;
    seq.user_id = "u" + std::to_string(u);
    const std::size_t T = 2 + rng() % 4;
    for (std::size_t t = 0; t < T; ++t) {
      std::set<std::uint32_t> s;
      const std::size_t n = 1 + rng() % 4;
      for (std::size_t i = 0; i < n; ++i)
        s.insert(static_cast<std::uint32_t>(rng() % M));
      seq.sets.emplace_back(s.begin(), s.end());
    }
    train.push_back(std::move(seq));
  }
  std::vector<std::size_t> counts(M, 0);
  for (const auto& seq : train)
    for (const auto& s : seq.sets)
      for (auto j : s) ++counts[j];

  const auto order = toppop_rank(train, M, M);
  for (std::size_t r = 1; r < order.size(); ++r) {
    CHECK(counts[order[r - 1]] >= counts[order[r]]);
    if (counts[order[r - 1]] == counts[order[r]])
      CHECK(order[r - 1] < order[r]);
  }
}

TEST_CASE("personal_toppop_rank: personal counts first, then global backfill") {
  // user counts: b(=1):2, a(=0):1; global order [c, a, b]
  const std::vector<std::vector<std::uint32_t>> history{{0, 1}, {1}};
  const std::vector<std::uint32_t> global{2, 0, 1};
  CHECK(personal_toppop_rank(history, global, 3, 3) ==
        std::vector<std::uint32_t>{1, 0, 2});

  // backfill covers K beyond the interacted count
  const std::vector<std::vector<std::uint32_t>> tiny{{4}, {4}};
  const std::vector<std::uint32_t> global5{0, 1, 2, 3, 4};
  CHECK(personal_toppop_rank(tiny, global5, 5, 4) ==
        std::vector<std::uint32_t>{4, 0, 1, 2});
}

TEST_CASE("personal_toppop_rank matches an oracle") {
  Rng rng(21);
  const std::size_t M = 10;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::vector<std::uint32_t>> history;
    const std::size_t T = 1 + rng() % 4;
    for (std::size_t t = 0; t < T; ++t) {
      std::set<std::uint32_t> s;
      const std::size_t n = 1 + rng() % 3;
      for (std::size_t i = 0; i < n; ++i)
        s.insert(static_cast<std::uint32_t>(rng() % M));
      history.emplace_back(s.begin(), s.end());
    }
    std::vector<std::uint32_t> global(M);
    std::iota(global.begin(), global.end(), 0u);
    deterministic_shuffle(global, rng);

    const std::size_t K = 1 + rng() % M;
    const auto got = personal_toppop_rank(history, global, M, K);
    REQUIRE(got.size() == K);

    // oracle: stable sort of interacted items by count desc then index,
    // followed by unused global order
    std::map<std::uint32_t, int> counts;
    for (const auto& s : history)
      for (auto j : s) counts[j]++;
    std::vector<std::uint32_t> want;
    std::vector<std::pair<int, std::uint32_t>> pers;
    for (auto& [j, c] : counts) pers.push_back({-c, j});
    std::sort(pers.begin(), pers.end());
    for (auto& [negc, j] : pers) want.push_back(j);
    for (auto j : global)
      if (!counts.count(j)) want.push_back(j);
    want.resize(K);
    CHECK(got == want);
  }
}

TEST_CASE("metrics report renders JSON and a table") {
  MetricsReport report;
  report.n_users = 5;
  report.rows["model-a"][10] = {0.5, 0.4, 0.6};
  report.rows["toppop"][10] = {0.1, 0.05, 0.2};
  const auto json = report.to_json();
  CHECK(json.find("recall@10") != std::string::npos);
  CHECK(json.find("model-a") != std::string::npos);
  const auto table = report.to_table();
  CHECK(table.find("Recall@10") != std::string::npos);
  CHECK(table.find("toppop") != std::string::npos);
}
