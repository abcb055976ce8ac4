#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "gloie/dataset.hpp"
#include "gloie/errors.hpp"
#include "gloie/featurize.hpp"
#include "gloie/synth.hpp"
#include "gloie/vae.hpp"

#include "test_util.hpp"

using namespace gloie;

namespace {

void zero_params(VaeModel& model) {
  for (auto* p : model.params())
    std::fill(p->values.begin(), p->values.end(), 0.0);
}

void randomize_biases(VaeModel& model, Rng& rng) {
  std::uniform_real_distribution<double> unit(-0.4, 0.4);
  for (auto* p : {&model.b_mu, &model.b_lv, &model.b_dec})
    for (auto& v : p->values) v = unit(rng);
}

std::vector<DecayedVector> clustered_fixture(std::size_t* M_out) {
  testutil::TempDir tmp;
  SynthConfig cfg;
  cfg.users = 200;
  cfg.items = 30;
  cfg.clusters = 3;
  cfg.t_min = 3;
  cfg.t_max = 8;
  cfg.mean_set_size = 2.0;
  cfg.repeat_prob = 0.3;
  cfg.seed = 21;
  const auto path = tmp.file("synth.jsonl");
  generate_synthetic(cfg, path);
  const Dataset ds = load_dataset(path);
  std::vector<DecayedVector> xs;
  xs.reserve(ds.sequences.size());
  for (const auto& seq : ds.sequences) {
    const Instance inst = make_instance(seq);
    xs.push_back(decayed_sum(inst.history, 0.6, ds.vocab.size()));
  }
  *M_out = ds.vocab.size();
  return xs;
}

double mean_loss_deterministic(const std::vector<DecayedVector>& xs,
                               VaeModel& model) {
  const std::vector<double> noise(model.d, 0.0);
  double acc = 0.0;
  for (const auto& x : xs) acc += vae_loss(x, model, noise, false);
  return acc / static_cast<double>(xs.size());
}

}  // namespace

TEST_CASE("encode: zero model, zero input, affine oracle") {
  VaeModel model(4, 3, HeadKind::Tweedie, 0.6, 1);
  zero_params(model);
  const std::vector<double> x{0.7, 0.0, 1.3, 0.2};
  const Posterior post = encode(x, model);
  CHECK(post.mean == std::vector<double>{0.0, 0.0, 0.0});
  CHECK(post.logvar == std::vector<double>{0.0, 0.0, 0.0});

  model.b_mu.values = {0.5, -1.0, 2.0};
  model.b_lv.values = {0.25, -20.0, 20.0};  // clamp kicks in at +-10
  const Posterior post0 = encode({0.0, 0.0, 0.0, 0.0}, model);
  CHECK(post0.mean == model.b_mu.values);
  CHECK(post0.logvar == std::vector<double>{0.25, -10.0, 10.0});

  VaeModel rnd(5, 2, HeadKind::Gaussian, 0.6, 3);
  Rng rng(9);
  randomize_biases(rnd, rng);
  const std::vector<double> xr{0.1, 0.0, 0.9, 0.0, 1.7};
  const Posterior pr = encode(xr, rnd);
  for (std::size_t k = 0; k < 2; ++k) {
    double want = rnd.b_mu.values[k];
    for (std::size_t j = 0; j < 5; ++j) want += rnd.W_mu.at(k, j) * xr[j];
    CHECK(pr.mean[k] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("reparameterize") {
  Posterior post{{1.0, -2.0}, {0.0, 0.0}};
  CHECK(reparameterize(post, {0.0, 0.0}) == std::vector<double>{1.0, -2.0});
  CHECK(reparameterize(post, {1.0, 1.0}) == std::vector<double>{2.0, -1.0});

  Posterior p2{{0.5, 0.5}, {2.0, -3.0}};
  const std::vector<double> noise{0.3, -1.1};
  const auto z = reparameterize(p2, noise);
  for (std::size_t k = 0; k < 2; ++k)
    CHECK(z[k] == doctest::Approx(p2.mean[k] +
                                  std::exp(0.5 * p2.logvar[k]) * noise[k])
                      .epsilon(1e-12));
}

TEST_CASE("decode_mean per head") {
  VaeModel tweedie(4, 2, HeadKind::Tweedie, 0.6, 1);
  zero_params(tweedie);
  CHECK(decode_mean({0.0, 0.0}, tweedie) ==
        std::vector<double>{1.0, 1.0, 1.0, 1.0});

  VaeModel multi(4, 2, HeadKind::Multinomial, 0.6, 1);
  zero_params(multi);
  const auto probs = decode_mean({0.0, 0.0}, multi);
  for (double p : probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));

  VaeModel gauss(3, 2, HeadKind::Gaussian, 0.6, 5);
  Rng rng(2);
  randomize_biases(gauss, rng);
  const std::vector<double> z{0.4, -0.7};
  const auto out = decode_mean(z, gauss);
  for (std::size_t j = 0; j < 3; ++j) {
    double want = gauss.b_dec.values[j];
    for (std::size_t k = 0; k < 2; ++k) want += gauss.W_dec.at(j, k) * z[k];
    CHECK(out[j] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("vae_loss: zero-init Tweedie model on a zero vector gives 2M") {
  const std::size_t M = 7;
  VaeModel model(M, 3, HeadKind::Tweedie, 0.6, 1);
  zero_params(model);  // rho = 0 means p = 1.5
  const DecayedVector x{std::vector<double>(M, 0.0), 0.6};
  const std::vector<double> noise{0.3, -0.7, 1.1};  // decoder ignores z at zero init
  const auto parts = vae_loss_parts(x, model, noise, false);
  CHECK(parts.kl == 0.0);
  CHECK(parts.nll == doctest::Approx(2.0 * static_cast<double>(M)).epsilon(1e-12));
  CHECK(parts.total() == parts.nll + parts.kl);
}

TEST_CASE("vae_loss decomposes as NLL + KL with KL >= 0") {
  Rng rng(31);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t M = 4 + rng() % 6, d = 2 + rng() % 4;
    VaeModel model(M, d, HeadKind::Tweedie, 0.6, rng());
    randomize_biases(model, rng);
    DecayedVector x{std::vector<double>(M, 0.0), 0.6};
    for (auto& v : x.values)
      if (unit(rng) > 0.5) v = 2.0 * unit(rng);
    std::vector<double> noise(d);
    for (auto& n : noise) n = normal(rng);
    const auto parts = vae_loss_parts(x, model, noise, false);
    CHECK(parts.kl >= 0.0);
    CHECK(vae_loss(x, model, noise, false) ==
          doctest::Approx(parts.nll + parts.kl).epsilon(1e-15));
  }
}

TEST_CASE("vae_loss gradient passes finite differences for every head") {
  Rng rng(47);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (HeadKind head :
       {HeadKind::Tweedie, HeadKind::Gaussian, HeadKind::Multinomial}) {
    const std::size_t M = 6, d = 3;
    VaeModel model(M, d, head, 0.6, rng());
    randomize_biases(model, rng);
    DecayedVector x{std::vector<double>(M, 0.0), 0.6};
    for (auto& v : x.values)
      if (unit(rng) > 0.4) v = 2.0 * unit(rng);
    x.values[2] = 1.0;  // keep the multinomial weight sum positive
    std::vector<double> noise(d);
    for (auto& n : noise) n = normal(rng);

    auto loss_fn = [&](bool g) { return vae_loss(x, model, noise, g); };
    const auto report = gradient_check(loss_fn, model.params(), 1e-5, 200, 7);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("train_vae reduces the loss on a repeated-vector dataset") {
  const std::size_t M = 10;
  DecayedVector x{std::vector<double>(M, 0.0), 0.6};
  x.values[1] = 1.0;
  x.values[4] = 1.5;
  x.values[7] = 0.36;
  std::vector<DecayedVector> data(20, x);

  VaeModel model(M, 4, HeadKind::Tweedie, 0.6, 11);
  const auto report = train_vae(data, model, 30, 8, OptimizerConfig{}, 5);
  REQUIRE(report.epoch_loss.size() == 30);
  CHECK(report.epoch_loss.back() <= report.epoch_loss.front());
}

TEST_CASE("train_vae beats the untrained model on the clustered fixture") {
  std::size_t M = 0;
  const auto xs = clustered_fixture(&M);
  VaeModel model(M, 8, HeadKind::Tweedie, 0.6, 3);
  const double before = mean_loss_deterministic(xs, model);
  OptimizerConfig opt;
  opt.lr = 0.005;
  train_vae(xs, model, 30, 32, opt, 3);
  const double after = mean_loss_deterministic(xs, model);
  CHECK(after < 0.8 * before);  // >= 20% improvement
}

TEST_CASE("train_vae is bit-deterministic given the seed") {
  std::size_t M = 0;
  const auto xs = clustered_fixture(&M);
  auto run = [&] {
    VaeModel model(M, 5, HeadKind::Tweedie, 0.6, 17);
    train_vae(xs, model, 3, 16, OptimizerConfig{}, 99);
    return model;
  };
  VaeModel a = run(), b = run();
  CHECK(a.W_mu.values == b.W_mu.values);
  CHECK(a.W_lv.values == b.W_lv.values);
  CHECK(a.W_dec.values == b.W_dec.values);
  CHECK(a.b_dec.values == b.b_dec.values);
  CHECK(a.rho.values == b.rho.values);
}

TEST_CASE("train_vae aborts on an empty dataset") {
  VaeModel model(3, 2, HeadKind::Tweedie, 0.6, 1);
  CHECK_THROWS_AS(train_vae({}, model, 1, 8, OptimizerConfig{}, 0), data_error);
}

TEST_CASE("reconstruct: positive for Tweedie, deterministic, smooth") {
  std::size_t M = 0;
  const auto xs = clustered_fixture(&M);
  VaeModel model(M, 8, HeadKind::Tweedie, 0.6, 3);
  train_vae(xs, model, 10, 32, OptimizerConfig{}, 3);

  for (const auto& x : xs) {
    const auto recon = reconstruct(x, model);
    for (double r : recon) CHECK(r > 0.0);
  }
  CHECK(reconstruct(xs[0], model) == reconstruct(xs[0], model));

  // nearby histories reconstruct closer than distant ones
  std::vector<std::vector<std::uint32_t>> base{{0, 1}, {2, 3}};
  std::vector<std::vector<std::uint32_t>> near{{0, 1}, {2, 4}};
  std::vector<std::vector<std::uint32_t>> far{
      {static_cast<std::uint32_t>(M - 1), static_cast<std::uint32_t>(M - 2)},
      {static_cast<std::uint32_t>(M - 3)}};
  const auto ra = reconstruct(decayed_sum(base, 0.6, M), model);
  const auto rb = reconstruct(decayed_sum(near, 0.6, M), model);
  const auto rc = reconstruct(decayed_sum(far, 0.6, M), model);
  auto dist = [](const std::vector<double>& u, const std::vector<double>& v) {
    double acc = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j)
      acc += (u[j] - v[j]) * (u[j] - v[j]);
    return std::sqrt(acc);
  };
  CHECK(dist(ra, rb) < dist(ra, rc));
}

TEST_CASE("vae checkpoint round trip preserves the model") {
  testutil::TempDir tmp;
  VaeModel model(6, 3, HeadKind::Tweedie, 0.7, 123);
  Rng rng(5);
  randomize_biases(model, rng);
  model.rho.values[0] = 0.37;
  save_vae(model, tmp.file("vae"));
  const VaeModel loaded = load_vae(tmp.file("vae"));
  CHECK(loaded.M == 6);
  CHECK(loaded.d == 3);
  CHECK(loaded.head == HeadKind::Tweedie);
  CHECK(loaded.tau == 0.7);
  CHECK(loaded.W_mu.values == model.W_mu.values);
  CHECK(loaded.W_dec.values == model.W_dec.values);
  CHECK(loaded.b_lv.values == model.b_lv.values);
  CHECK(loaded.rho.values == model.rho.values);
  CHECK(loaded.power() == doctest::Approx(model.power()).epsilon(1e-15));
}
