#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "gloie/dataset.hpp"
#include "gloie/errors.hpp"
#include "gloie/featurize.hpp"
#include "gloie/fusion.hpp"
#include "gloie/synth.hpp"

#include "test_util.hpp"

using namespace gloie;

namespace {

FusionParams tied_with_w0(std::size_t d, const std::vector<double>& w0) {
  FusionParams fp(d, 0, true);
  std::fill(fp.Wq.values.begin(), fp.Wq.values.end(), 0.0);
  std::fill(fp.Wk.values.begin(), fp.Wk.values.end(), 0.0);
  fp.w0.values = w0;
  fp.b0.values[0] = 0.0;
  return fp;
}

Instance small_instance(Rng& rng, std::size_t M) {
  Instance inst;
  inst.user_id = "u";
  const std::size_t T = 1 + rng() % 3;
  for (std::size_t t = 0; t < T; ++t) {
    std::set<std::uint32_t> s;
    const std::size_t n = 1 + rng() % 3;
    for (std::size_t i = 0; i < n; ++i)
      s.insert(static_cast<std::uint32_t>(rng() % M));
    inst.history.emplace_back(s.begin(), s.end());
  }
  std::set<std::uint32_t> t;
  const std::size_t n = 1 + rng() % 3;
  for (std::size_t i = 0; i < n; ++i)
    t.insert(static_cast<std::uint32_t>(rng() % M));
  inst.target.assign(t.begin(), t.end());
  return inst;
}

std::vector<Instance> fixture_instances(std::size_t* M_out) {
  testutil::TempDir tmp;
  SynthConfig cfg;
  cfg.users = 150;
  cfg.items = 25;
  cfg.clusters = 3;
  cfg.t_min = 3;
  cfg.t_max = 7;
  cfg.mean_set_size = 2.0;
  cfg.repeat_prob = 0.4;
  cfg.seed = 33;
  const auto path = tmp.file("synth.jsonl");
  generate_synthetic(cfg, path);
  const Dataset ds = load_dataset(path);
  std::vector<Instance> out;
  out.reserve(ds.sequences.size());
  for (const auto& seq : ds.sequences) out.push_back(make_instance(seq));
  *M_out = ds.vocab.size();
  return out;
}

}  // namespace

TEST_CASE("attention_fuse: zero Wq/Wk gives the midpoint blend") {
  auto fp = tied_with_w0(3, {1.0, 0.0, 0.0});
  const std::vector<double> z{0.0, 4.0, 0.0};
  const auto out = attention_fuse(2.0, z, fp);  // q = [2,0,0], alpha = 0.5
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(out[2] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("attention_fuse: z equal to q returns q for any alpha") {
  FusionParams fp(4, 77, true);
  const double xt = 0.35;
  std::vector<double> q(4);
  for (std::size_t k = 0; k < 4; ++k) q[k] = xt * fp.w0.values[k];
  const auto out = attention_fuse(xt, q, fp);
  for (std::size_t k = 0; k < 4; ++k)
    CHECK(out[k] == doctest::Approx(q[k]).epsilon(1e-12));
}

TEST_CASE("attention_fuse matches a hand-rolled oracle") {
  Rng rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 2 + rng() % 5;
    FusionParams fp(d, rng(), trial % 2 == 0);
    std::vector<double> z(d);
    for (auto& v : z) v = unit(rng);
    const double xt = unit(rng);

    const auto& ws = fp.wstar_values();
    std::vector<double> q(d), a(d, 0.0), b(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) q[k] = xt * ws[k];
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        a[r] += fp.Wq.at(r, c) * q[c];
        b[r] += fp.Wk.at(r, c) * z[c];
      }
    double u = 0.0;
    for (std::size_t k = 0; k < d; ++k) u += a[k] * b[k];
    const double alpha = 1.0 / (1.0 + std::exp(-u));

    const auto out = attention_fuse(xt, z, fp);
    for (std::size_t k = 0; k < d; ++k) {
      const double want = alpha * q[k] + (1.0 - alpha) * z[k];
      CHECK(out[k] == doctest::Approx(want).epsilon(1e-12));
    }
    // alpha in (0,1) puts the output on the q--z segment
    for (std::size_t k = 0; k < d; ++k) {
      const double lo = std::min(q[k], z[k]), hi = std::max(q[k], z[k]);
      CHECK(out[k] >= lo - 1e-12);
      CHECK(out[k] <= hi + 1e-12);
    }
  }
}

TEST_CASE("fused_embedding branches") {
  auto fp = tied_with_w0(3, {1.0, 0.0, 0.0});
  // non-interacted: x_hat * w*
  const auto lifted = fused_embedding(2.0, 0.17, nullptr, fp);
  CHECK(lifted == std::vector<double>{2.0, 0.0, 0.0});
  // interacted with zero attention weights: midpoint
  const std::vector<double> z{0.0, 4.0, 0.0};
  const auto fused = fused_embedding(9.0, 2.0, &z, fp);
  CHECK(fused[0] == doctest::Approx(1.0));
  CHECK(fused[1] == doctest::Approx(2.0));
}

TEST_CASE("affinity") {
  auto fp = tied_with_w0(2, {1.0, 0.0});
  CHECK(affinity(std::vector<double>{0.0, 0.0}, fp) == doctest::Approx(0.5));
  CHECK(affinity(std::vector<double>{1.0, 0.0}, fp) ==
        doctest::Approx(0.7310585786300049).epsilon(1e-12));

  // monotone in z~.w0
  Rng rng(3);
  std::uniform_real_distribution<double> unit(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    FusionParams rp(3, rng(), true);
    std::vector<double> z1(3), z2(3);
    for (std::size_t k = 0; k < 3; ++k) {
      z1[k] = unit(rng);
      z2[k] = unit(rng);
    }
    double dot1 = 0.0, dot2 = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      dot1 += z1[k] * rp.w0.values[k];
      dot2 += z2[k] * rp.w0.values[k];
    }
    if (dot1 > dot2) CHECK(affinity(z1, rp) > affinity(z2, rp));
  }
}

TEST_CASE("tsp_loss pinned values and loop oracle") {
  const std::size_t M = 6;
  std::vector<std::uint8_t> y(M, 0);
  y[2] = 1;
  std::vector<double> flat(M, 0.5);
  CHECK(tsp_loss(y, flat) ==
        doctest::Approx(static_cast<double>(M) * std::log(2.0)).epsilon(1e-12));

  // predictions equal to the labels cost ~0 after clamping
  std::vector<double> exact(M, 0.0);
  exact[2] = 1.0;
  CHECK(tsp_loss(y, exact) < 1e-5);
  CHECK(tsp_loss(y, exact) > 0.0);

  Rng rng(7);
  std::uniform_real_distribution<double> unit(0.01, 0.99);
  std::vector<double> y_hat(M);
  for (auto& v : y_hat) v = unit(rng);
  double want = 0.0;
  for (std::size_t j = 0; j < M; ++j)
    want -= y[j] ? std::log(y_hat[j]) : std::log(1.0 - y_hat[j]);
  CHECK(tsp_loss(y, y_hat) == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("topk_indices tie-breaking and sort oracle") {
  CHECK(topk_indices(std::vector<double>(5, 0.25), 3) ==
        std::vector<std::uint32_t>{0, 1, 2});
  CHECK(topk_indices({0.1, 0.2, 0.3, 0.4}, 3) ==
        std::vector<std::uint32_t>{3, 2, 1});
  CHECK_THROWS_AS(topk_indices({0.1}, 2), config_error);

  Rng rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> scores(12);
    for (auto& s : scores) s = unit(rng);
    scores[3] = scores[7];  // force one tie
    const auto got = topk_indices(scores, 6);

    std::vector<std::uint32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return a < b;
    });
    order.resize(6);
    CHECK(got == order);
  }
}

TEST_CASE("score_items agrees with the per-item fused_embedding oracle") {
  Rng rng(19);
  const std::size_t M = 9, d = 4;
  FusionParams fp(d, rng(), true);
  LocalEncoderParams lp(M, d, rng());

  Instance inst = small_instance(rng, M);
  const auto x = decayed_sum(inst.history, 0.6, M);
  std::vector<double> x_hat(M);
  std::uniform_real_distribution<double> unit(0.1, 2.0);
  for (auto& v : x_hat) v = unit(rng);
  const auto x_tilde = normalize_recon(x_hat);

  const auto entries = local_embed(inst, lp, 0.6);
  const auto interacted = inst.interacted();
  std::vector<const std::vector<double>*> locals;
  for (const auto& [item, vec] : entries) locals.push_back(&vec);

  const auto scores = score_items(x_hat, x_tilde, interacted, locals, fp);
  std::size_t ii = 0;
  for (std::size_t j = 0; j < M; ++j) {
    const std::vector<double>* z = nullptr;
    if (ii < interacted.size() && interacted[ii] == j) z = locals[ii++];
    const auto fused = fused_embedding(x_hat[j], x_tilde[j], z, fp);
    CHECK(scores[j] == doctest::Approx(affinity(fused, fp)).epsilon(1e-12));
  }
}

TEST_CASE("score_items rejects a missing local entry") {
  FusionParams fp(2, 1, true);
  std::vector<double> x_hat{1.0, 2.0}, x_tilde{-0.0, 0.5};
  std::vector<std::uint32_t> interacted{1};
  std::vector<const std::vector<double>*> locals{nullptr};
  CHECK_THROWS_AS(score_items(x_hat, x_tilde, interacted, locals, fp), data_error);
}

TEST_CASE("training pass loss equals the naive score_items loss") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t M = 5 + rng() % 6, d = 2 + rng() % 4;
    VaeModel vae(M, d, HeadKind::Tweedie, 0.6, rng());
    LocalEncoderParams lp(M, d, rng());
    FusionParams fp(d, rng(), true);
    Instance inst = small_instance(rng, M);

    FusionTrainOptions options;
    const double train_loss =
        fusion_example_loss(inst, vae, lp, fp, options, false);

    const auto x = decayed_sum(inst.history, 0.6, M);
    const auto x_hat = reconstruct(x, vae);
    const auto x_tilde = normalize_recon(x_hat);
    const auto entries = local_embed(inst, lp, 0.6);
    std::vector<const std::vector<double>*> locals;
    for (const auto& [item, vec] : entries) locals.push_back(&vec);
    const auto scores =
        score_items(x_hat, x_tilde, inst.interacted(), locals, fp);
    const auto y = inst.target_indicator(M);
    CHECK(train_loss == doctest::Approx(tsp_loss(y, scores)).epsilon(1e-12));
  }
}

TEST_CASE("order preservation for non-interacted items under tied w*") {
  Rng rng(29);
  std::uniform_real_distribution<double> unit(0.05, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t M = 6 + rng() % 7, d = 2 + rng() % 7;
    FusionParams fp(d, rng(), true);
    LocalEncoderParams lp(M, d, rng());
    Instance inst = small_instance(rng, M);

    std::vector<double> x_hat(M);
    for (auto& v : x_hat) v = unit(rng);
    const auto x_tilde = normalize_recon(x_hat);
    const auto entries = local_embed(inst, lp, 0.6);
    std::vector<const std::vector<double>*> locals;
    for (const auto& [item, vec] : entries) locals.push_back(&vec);
    const auto interacted = inst.interacted();
    const auto scores = score_items(x_hat, x_tilde, interacted, locals, fp);

    double w0_norm2 = 0.0;
    for (double w : fp.w0.values) w0_norm2 += w * w;
    REQUIRE(w0_norm2 > 0.0);

    for (std::size_t j1 = 0; j1 < M; ++j1)
      for (std::size_t j2 = 0; j2 < M; ++j2) {
        if (std::binary_search(interacted.begin(), interacted.end(),
                               static_cast<std::uint32_t>(j1)) ||
            std::binary_search(interacted.begin(), interacted.end(),
                               static_cast<std::uint32_t>(j2)))
          continue;
        if (x_hat[j1] > x_hat[j2]) CHECK(scores[j1] > scores[j2]);
      }
  }
}

TEST_CASE("fusion loss gradient passes finite differences, tied and untied") {
  Rng rng(41);
  for (bool tied : {true, false}) {
    const std::size_t M = 8, d = 4;
    VaeModel vae(M, d, HeadKind::Tweedie, 0.6, rng());
    LocalEncoderParams lp(M, d, rng());
    FusionParams fp(d, rng(), tied);
    Instance inst = small_instance(rng, M);
    FusionTrainOptions options;

    std::vector<ParamTensor*> params = fp.params();
    for (auto* p : lp.params()) params.push_back(p);
    auto loss_fn = [&](bool g) {
      return fusion_example_loss(inst, vae, lp, fp, options, g);
    };
    const auto report = gradient_check(loss_fn, params, 1e-5, 220, 3);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("joint fine-tuning gradient flows into the VAE") {
  Rng rng(43);
  for (HeadKind head :
       {HeadKind::Tweedie, HeadKind::Gaussian, HeadKind::Multinomial}) {
    const std::size_t M = 7, d = 3;
    VaeModel vae(M, d, head, 0.6, rng());
    LocalEncoderParams lp(M, d, rng());
    FusionParams fp(d, rng(), true);
    Instance inst = small_instance(rng, M);
    FusionTrainOptions options;
    options.freeze_vae = false;

    std::vector<ParamTensor*> params = fp.params();
    for (auto* p : lp.params()) params.push_back(p);
    params.push_back(&vae.W_mu);
    params.push_back(&vae.b_mu);
    params.push_back(&vae.W_dec);
    params.push_back(&vae.b_dec);
    auto loss_fn = [&](bool g) {
      return fusion_example_loss(inst, vae, lp, fp, options, g);
    };
    const auto report = gradient_check(loss_fn, params, 1e-5, 220, 5);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("train_fusion: non-increasing epoch means on the seeded fixture") {
  std::size_t M = 0;
  const auto instances = fixture_instances(&M);
  const std::size_t d = 8;
  VaeModel vae(M, 8, HeadKind::Tweedie, 0.6, 3);
  std::vector<DecayedVector> xs;
  for (const auto& inst : instances) xs.push_back(decayed_sum(inst.history, 0.6, M));
  train_vae(xs, vae, 10, 32, OptimizerConfig{}, 3);

  LocalEncoderParams lp(M, d, 4);
  FusionParams fp(d, 5, true);
  FusionTrainOptions options;
  options.epochs = 5;
  options.batch = 32;
  options.seed = 6;
  const auto report = train_fusion(instances, vae, lp, fp, options);
  REQUIRE(report.epoch_loss.size() == 5);
  for (std::size_t e = 1; e < report.epoch_loss.size(); ++e)
    CHECK(report.epoch_loss[e] <= report.epoch_loss[e - 1]);
}

TEST_CASE("train_fusion: zero epochs leaves parameters untouched") {
  std::size_t M = 0;
  const auto instances = fixture_instances(&M);
  VaeModel vae(M, 4, HeadKind::Tweedie, 0.6, 3);
  LocalEncoderParams lp(M, 4, 4);
  FusionParams fp(4, 5, true);
  const auto e_before = lp.E.values;
  const auto w_before = fp.w0.values;
  FusionTrainOptions options;
  options.epochs = 0;
  train_fusion(instances, vae, lp, fp, options);
  CHECK(lp.E.values == e_before);
  CHECK(fp.w0.values == w_before);
}

TEST_CASE("train_fusion is deterministic given the seed") {
  std::size_t M = 0;
  const auto instances = fixture_instances(&M);
  auto run = [&] {
    VaeModel vae(M, 4, HeadKind::Tweedie, 0.6, 3);
    LocalEncoderParams lp(M, 4, 4);
    FusionParams fp(4, 5, true);
    FusionTrainOptions options;
    options.epochs = 3;
    options.batch = 16;
    options.seed = 8;
    train_fusion(instances, vae, lp, fp, options);
    return std::make_pair(lp.E.values, fp.w0.values);
  };
  CHECK(run() == run());
}

TEST_CASE("fusion checkpoint round trip") {
  testutil::TempDir tmp;
  FusionParams fp(3, 7, true);
  LocalEncoderParams lp(5, 3, 9);
  save_fusion(fp, &lp, tmp.file("fusion"));
  const auto loaded = load_fusion(tmp.file("fusion"));
  CHECK(loaded.fusion.d == 3);
  CHECK(loaded.fusion.tied);
  CHECK(loaded.fusion.Wq.values == fp.Wq.values);
  CHECK(loaded.fusion.w0.values == fp.w0.values);
  CHECK(loaded.has_local);
  CHECK(loaded.local.E.values == lp.E.values);
  CHECK(loaded.local.W_h.values == lp.W_h.values);
}
