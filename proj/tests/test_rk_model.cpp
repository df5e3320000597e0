#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "fedarks/errors.hpp"
#include "fedarks/rk_model.hpp"
#include "fedarks/rng.hpp"
#include "oracles.hpp"

using namespace fedarks;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.input_height = 6;
  cfg.input_width = 4;
  cfg.hidden_dim = 5;
  cfg.feature_dim = 3;
  return cfg;
}

Sample make_sample(const ModelConfig& cfg, Rng& rng, int identity,
                   int domain = 0, int camera = 0) {
  Sample s;
  s.height = cfg.input_height;
  s.width = cfg.input_width;
  s.pixels.resize(static_cast<std::size_t>(s.height) * s.width);
  for (double& p : s.pixels) p = rng.uniform(-1.0, 1.0);
  s.identity = identity;
  s.domain = domain;
  s.camera = camera;
  return s;
}

// Naive two-layer forward: w2 * tanh(w1 x + b1) + b2, plain loops.
std::vector<double> naive_extractor(std::span<const double> w1,
                                    std::span<const double> b1,
                                    std::span<const double> w2,
                                    std::span<const double> b2,
                                    const std::vector<double>& x, int hidden,
                                    int feature) {
  const int in = static_cast<int>(x.size());
  std::vector<double> a1(hidden);
  for (int h = 0; h < hidden; ++h) {
    long double acc = b1[h];
    for (int i = 0; i < in; ++i) acc += static_cast<long double>(w1[h * in + i]) * x[i];
    a1[h] = std::tanh(static_cast<double>(acc));
  }
  std::vector<double> f(feature);
  for (int d = 0; d < feature; ++d) {
    long double acc = b2[d];
    for (int h = 0; h < hidden; ++h) acc += static_cast<long double>(w2[d * hidden + h]) * a1[h];
    f[d] = static_cast<double>(acc);
  }
  return f;
}

}  // namespace

TEST_CASE("layouts carry the expected tensors") {
  auto cfg = tiny_cfg();
  auto g = global_layout(cfg);
  CHECK(g.tensors().size() == 4);
  CHECK(g.spec_of("global.w1").shape ==
        std::vector<std::size_t>{5, 24});
  CHECK(g.spec_of("global.w2").shape == std::vector<std::size_t>{3, 5});

  auto l = local_layout(cfg, 7);
  CHECK(l.spec_of("part0.w1").shape == std::vector<std::size_t>{5, 8});
  CHECK(l.spec_of("part2.b2").shape == std::vector<std::size_t>{3});
  CHECK(l.spec_of("head.w").shape == std::vector<std::size_t>{7, 3});
  CHECK(l.spec_of("head.b").shape == std::vector<std::size_t>{7});

  auto bad = cfg;
  bad.input_height = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("init: deterministic, zero biases, silent part outputs") {
  auto cfg = tiny_cfg();
  auto a = init_global(cfg, 5);
  auto b = init_global(cfg, 5);
  CHECK(a.values() == b.values());
  auto c = init_global(cfg, 6);
  CHECK(a.values() != c.values());
  for (double v : a.tensor("global.b1")) CHECK(v == 0.0);
  for (double v : a.tensor("global.b2")) CHECK(v == 0.0);

  auto l = init_local(cfg, 4, 5);
  // Part output layers start at zero so the fused path initially
  // coincides with the global-only path.
  for (int p = 0; p < 3; ++p) {
    for (double v : l.tensor("part" + std::to_string(p) + ".w2")) {
      CHECK(v == 0.0);
    }
  }
  bool any = false;
  for (double v : l.tensor("part0.w1")) any = any || v != 0.0;
  CHECK(any);
  for (double v : l.tensor("head.b")) CHECK(v == 0.0);
}

TEST_CASE("global forward matches a naive reimplementation") {
  auto cfg = tiny_cfg();
  RkModel model(cfg, 4);
  Rng rng(31);
  for (int t = 0; t < 50; ++t) {
    auto params = testsup::random_params(global_layout(cfg), rng);
    auto s = make_sample(cfg, rng, 0);
    auto got = model.forward_global(params, s);
    auto want = naive_extractor(params.tensor("global.w1"),
                                params.tensor("global.b1"),
                                params.tensor("global.w2"),
                                params.tensor("global.b2"), s.pixels,
                                cfg.hidden_dim, cfg.feature_dim);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(oracle::rel_err(got[i], want[i]) < 1e-10);
    }
  }
}

TEST_CASE("zero parameters embed everything to zero") {
  auto cfg = tiny_cfg();
  RkModel model(cfg, 4);
  Rng rng(32);
  auto s = make_sample(cfg, rng, 0);
  auto g = ParamVector::zeros(global_layout(cfg));
  auto l = ParamVector::zeros(local_layout(cfg, 4));
  for (double v : model.forward_global(g, s)) CHECK(v == 0.0);
  for (double v : model.forward_parts(l, s)) CHECK(v == 0.0);
  for (double v : model.forward_head(l, {0.0, 0.0, 0.0})) CHECK(v == 0.0);
}

TEST_CASE("part forward is the mean of the three strip features") {
  auto cfg = tiny_cfg();
  RkModel model(cfg, 4);
  Rng rng(33);
  auto local = testsup::random_params(local_layout(cfg, 4), rng);
  auto s = make_sample(cfg, rng, 0);
  auto parts = partition_parts(s);
  auto got = model.forward_parts(local, s);
  std::vector<std::vector<double>> per;
  for (int p = 0; p < 3; ++p) {
    const auto pre = "part" + std::to_string(p);
    per.push_back(naive_extractor(
        local.tensor(pre + ".w1"), local.tensor(pre + ".b1"),
        local.tensor(pre + ".w2"), local.tensor(pre + ".b2"),
        parts.strips[static_cast<std::size_t>(p)], cfg.hidden_dim,
        cfg.feature_dim));
  }
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double want = (per[0][i] + per[1][i] + per[2][i]) / 3.0;
    CHECK(oracle::rel_err(got[i], want) < 1e-10);
  }
}

TEST_CASE("fusion") {
  std::vector<double> g{2.0, 0.0};
  std::vector<double> p{0.0, 2.0};
  CHECK(RkModel::fuse(g, p, 0.5) == std::vector<double>{1.0, 1.0});
  CHECK(RkModel::fuse(g, p, 1.0) == g);
  CHECK(RkModel::fuse(g, p, 0.0) == p);
  CHECK_THROWS_AS((void)RkModel::fuse(g, p, 1.5), InvalidInputError);
  CHECK_THROWS_AS((void)RkModel::fuse(g, p, -0.1), InvalidInputError);
  CHECK_THROWS_AS((void)RkModel::fuse(g, {1.0}, 0.5), StructuralError);

  Rng rng(34);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(4), b(4);
    for (auto& v : a) v = rng.uniform(-3.0, 3.0);
    for (auto& v : b) v = rng.uniform(-3.0, 3.0);
    const double alpha = rng.uniform();
    auto got = RkModel::fuse(a, b, alpha);
    auto want = oracle::fuse(a, b, alpha);
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(oracle::rel_err(got[i], want[i]) < 1e-12);
    }
  }
}

TEST_CASE("l2 normalization: unit vectors out, floor for near-zero") {
  auto n = l2_normalize({3.0, 4.0});
  CHECK(n[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n[1] == doctest::Approx(0.8).epsilon(1e-15));

  auto z = l2_normalize({0.0, 0.0});
  CHECK(z[0] == 0.0);  // floored denominator, no NaN
  CHECK(z[1] == 0.0);

  auto tiny = l2_normalize({1e-300, 0.0});
  CHECK(std::isfinite(tiny[0]));
}

TEST_CASE("batch-hard hinges on hand-built geometries") {
  // Two classes on a line; features already normalized is not required
  // by the helper, distances are plain squared Euclidean.
  std::vector<std::vector<double>> feats{{0.0}, {0.2}, {1.0}, {1.1}};
  std::vector<int> labels{0, 0, 1, 1};
  // anchor 0: hardest pos d=0.04, hardest neg d=1.0 -> hinge(0.04-1+m)
  auto h = batch_hard_hinges(feats, labels, 0.3);
  REQUIRE(h.size() == 4);
  CHECK(h[0] == doctest::Approx(0.0).epsilon(1e-15));
  // anchor 2: pos d=0.01, neg d (to 0.2) = 0.64 -> inactive at m=0.3
  CHECK(h[2] == doctest::Approx(0.0).epsilon(1e-15));

  auto h2 = batch_hard_hinges(feats, labels, 1.2);
  // anchor 0: 0.04 - 1.0 + 1.2 = 0.24
  CHECK(h2[0] == doctest::Approx(0.24).epsilon(1e-12));

  CHECK_THROWS_AS((void)batch_hard_hinges(feats, {0, 0, 1}, 0.3), BatchError);
  CHECK_THROWS_AS((void)batch_hard_hinges(feats, {0, 0, 0, 0}, 0.3),
                  BatchError);
}

TEST_CASE("zero-parameter batch has closed-form loss") {
  auto cfg = tiny_cfg();
  const int C = 4;
  RkModel model(cfg, C);
  Rng rng(35);
  std::vector<Sample> pool;
  std::vector<const Sample*> batch;
  std::vector<int> labels{0, 0, 1, 1};
  for (int i = 0; i < 4; ++i) pool.push_back(make_sample(cfg, rng, labels[i]));
  for (const auto& s : pool) batch.push_back(&s);

  auto g = ParamVector::zeros(global_layout(cfg));
  auto l = ParamVector::zeros(local_layout(cfg, C));
  BatchGradients grads{{global_layout(cfg), {}}, {local_layout(cfg, C), {}}};
  auto loss = batch_loss_and_gradients(model, g, l, batch, labels, 0.5, 0.3,
                                       &grads);
  // All embeddings are zero: every distance is 0, every hinge equals the
  // margin; zero logits give uniform softmax.
  CHECK(loss.triplet == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(loss.cross_entropy ==
        doctest::Approx(std::log(static_cast<double>(C))).epsilon(1e-12));
}

TEST_CASE("loss and gradients are deterministic") {
  auto cfg = tiny_cfg();
  const int C = 3;
  RkModel model(cfg, C);
  Rng rng(36);
  auto g = testsup::random_params(global_layout(cfg), rng);
  auto l = testsup::random_params(local_layout(cfg, C), rng);
  std::vector<Sample> pool;
  std::vector<int> labels{0, 0, 1, 1, 2, 2};
  for (int i = 0; i < 6; ++i) pool.push_back(make_sample(cfg, rng, labels[i]));
  std::vector<const Sample*> batch;
  for (const auto& s : pool) batch.push_back(&s);

  BatchGradients g1{{global_layout(cfg), {}}, {local_layout(cfg, C), {}}};
  BatchGradients g2{{global_layout(cfg), {}}, {local_layout(cfg, C), {}}};
  auto l1 = batch_loss_and_gradients(model, g, l, batch, labels, 0.5, 0.3, &g1);
  auto l2 = batch_loss_and_gradients(model, g, l, batch, labels, 0.5, 0.3, &g2);
  CHECK(l1.total() == l2.total());
  CHECK(g1.global.values == g2.global.values);
  CHECK(g1.local.values == g2.local.values);
}

TEST_CASE("gradients pass a spot finite-difference probe") {
  auto cfg = tiny_cfg();
  const int C = 2;
  RkModel model(cfg, C);
  Rng rng(37);
  auto g = testsup::random_params(global_layout(cfg), rng, 0.5);
  auto l = testsup::random_params(local_layout(cfg, C), rng, 0.5);
  std::vector<Sample> pool;
  std::vector<int> labels{0, 0, 1, 1};
  for (int i = 0; i < 4; ++i) pool.push_back(make_sample(cfg, rng, labels[i]));
  std::vector<const Sample*> batch;
  for (const auto& s : pool) batch.push_back(&s);

  BatchGradients grads{{global_layout(cfg), {}}, {local_layout(cfg, C), {}}};
  (void)batch_loss_and_gradients(model, g, l, batch, labels, 0.5, 0.3, &grads);

  auto loss_at = [&](const ParamVector& gg, const ParamVector& ll) {
    return batch_loss_and_gradients(model, gg, ll, batch, labels, 0.5, 0.3,
                                    nullptr)
        .total();
  };
  const double eps = 1e-6;
  Rng pick(38);
  for (int t = 0; t < 12; ++t) {
    const std::size_t i = pick.uniform_index(g.size());
    auto gp = g, gm = g;
    gp.values()[i] += eps;
    gm.values()[i] -= eps;
    const double fd = (loss_at(gp, l) - loss_at(gm, l)) / (2 * eps);
    CHECK(std::fabs(fd - grads.global.values[i]) <
          1e-5 * std::max(1.0, std::fabs(fd)));
  }
  for (int t = 0; t < 12; ++t) {
    const std::size_t i = pick.uniform_index(l.size());
    auto lp = l, lm = l;
    lp.values()[i] += eps;
    lm.values()[i] -= eps;
    const double fd = (loss_at(g, lp) - loss_at(g, lm)) / (2 * eps);
    CHECK(std::fabs(fd - grads.local.values[i]) <
          1e-5 * std::max(1.0, std::fabs(fd)));
  }
}

TEST_CASE("batch validation") {
  auto cfg = tiny_cfg();
  RkModel model(cfg, 2);
  Rng rng(39);
  auto g = ParamVector::zeros(global_layout(cfg));
  auto l = ParamVector::zeros(local_layout(cfg, 2));
  std::vector<Sample> pool;
  for (int i = 0; i < 3; ++i) pool.push_back(make_sample(cfg, rng, 0));
  std::vector<const Sample*> batch{&pool[0], &pool[1], &pool[2]};

  // Single class: no negatives for any anchor.
  CHECK_THROWS_AS((void)batch_loss_and_gradients(model, g, l, batch,
                                                 {0, 0, 0}, 0.5, 0.3, nullptr),
                  BatchError);
  CHECK_THROWS_AS((void)batch_loss_and_gradients(model, g, l, {}, {}, 0.5,
                                                 0.3, nullptr),
                  BatchError);
  CHECK_THROWS_AS((void)batch_loss_and_gradients(model, g, l, batch, {0, 1},
                                                 0.5, 0.3, nullptr),
                  BatchError);
  CHECK_THROWS_AS((void)batch_loss_and_gradients(model, g, l, batch,
                                                 {0, 0, 1}, 1.5, 0.3, nullptr),
                  InvalidInputError);
}
