#include <gtest/gtest.h>

#include <cmath>

#include "ghmnet/train.hpp"
#include "fd_check.hpp"
#include "instances.hpp"

using namespace ghmnet;

TEST(Loss, Classify) {
  const double point[2] = {0.0, 1.0};
  EXPECT_EQ(loss_classify(point, 2), 0.0);
  const double uniform[2] = {0.5, 0.5};
  EXPECT_EQ(loss_classify(uniform, 1), 0.5);
  EXPECT_EQ(loss_classify(uniform, 2), 0.5);
  EXPECT_EQ(loss_classify(point, 1), 2.0);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> p(3);
    double t = 0;
    for (double& v : p) t += (v = rng.uniform());
    for (double& v : p) v /= t;
    EXPECT_LE(loss_classify(p, 1 + i % 3), 2.0);
  }
}

TEST(Loss, Denoise) {
  const int x[2] = {2, 2};
  const double same[2] = {2.0, 2.0};
  const double ones[2] = {1.0, 1.0};
  EXPECT_EQ(loss_denoise(same, x), 0.0);
  EXPECT_EQ(loss_denoise(ones, x), 1.0);
  const double short_pred[1] = {1.0};
  EXPECT_THROW(loss_denoise(short_pred, x), Error);
}

TEST(Gradient, FiniteDifferencesConvNet) {
  for (auto m : {std::vector<int>{2}, std::vector<int>{2, 2}}) {
    auto p = generate_params(TreeTopology::build(m), 2, 3.0, PsiMode::random, 2);
    auto w = random_init(p.topology, 2, 6, 0.6, 3, NetKind::convnet);
    auto data = make_dataset(p, Task::classify, 5, 4);
    auto r = fixtures::finite_difference_check(w, data, 40, 5);
    EXPECT_EQ(r.mismatches, 0) << r.first_mismatch;
    EXPECT_GE(r.checked, 20);
  }
}

TEST(Gradient, FiniteDifferencesUNet) {
  for (auto m : {std::vector<int>{2}, std::vector<int>{2, 2}}) {
    auto p = generate_params(TreeTopology::build(m), 2, 3.0, PsiMode::random, 6);
    auto w = random_init(p.topology, 2, 6, 0.6, 7, NetKind::unet);
    auto data = make_dataset(p, Task::denoise, 5, 8);
    auto r = fixtures::finite_difference_check(w, data, 40, 9);
    EXPECT_EQ(r.mismatches, 0) << r.first_mismatch;
    EXPECT_GE(r.checked, 20);
  }
}

TEST(Gradient, ZeroResidualGivesZeroGradient) {
  auto w = random_init(TreeTopology::build({2, 2}), 2, 4, 0.0, 1, NetKind::unet);
  // with vanishing noise the zero network reproduces the clean leaves exactly
  const std::vector<int> x = {1, 2, 2, 1};
  const std::vector<double> z = {1.0, 2.0, 2.0, 1.0};
  NetGrad g = zero_grad(w);
  EXPECT_EQ(denoise_loss_grad(w, z, x, &g, 1e-4), 0.0);
  g.for_each([](const BlockGrad& b) {
    EXPECT_EQ(b.W1.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(b.W2.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(b.W3.cwiseAbs().maxCoeff(), 0.0);
  });
}

TEST(Gradient, SharedBlockSumsOverSameRankNodes) {
  // m = [2, 1]: both leaves use the single layer-2 block. With equal leaves and
  // equal layer-1 blocks the two paths are identical, so the shared gradient is
  // twice one path's contribution c.
  const std::vector<int> x = {2, 2};
  NetWeights w;
  NetGrad shared;
  for (std::uint64_t seed = 10; seed < 40; ++seed) {  // skip nets whose leaf units are all dead
    w = random_init(TreeTopology::build({2, 1}), 2, 5, 0.7, seed, NetKind::convnet);
    w.down[0][1] = w.down[0][0];
    shared = zero_grad(w);
    classify_loss_grad(w, x, 1, &shared);
    if (shared.down[1][0].W3.norm() > 0.0) break;
  }

  // One path alone: a chain whose layer-1 output is doubled sees the same root
  // logits (2 q), and the doubled W1 doubles the signal reaching the leaf block,
  // so its leaf-block gradient is 2 c as well.
  auto solo = random_init(TreeTopology::build({1, 1}), 2, 5, 0.0, 1, NetKind::convnet);
  solo.down[0][0] = w.down[0][0];
  solo.down[0][0].W1 *= 2.0;
  solo.down[1][0] = w.down[1][0];
  const std::vector<int> x1 = {2};
  NetGrad single = zero_grad(solo);
  classify_loss_grad(solo, x1, 1, &single);
  const auto& a = shared.down[1][0];
  const auto& b = single.down[1][0];
  EXPECT_GT(a.W3.norm(), 0.0);
  EXPECT_TRUE(a.W1.isApprox(b.W1, 1e-12));
  EXPECT_TRUE(a.W2.isApprox(b.W2, 1e-12));
  EXPECT_TRUE(a.W3.isApprox(b.W3, 1e-12));
}

TEST(D2, SelfDistanceIsZero) {
  auto p = generate_params(TreeTopology::build({2, 2}), 2, 3.0, PsiMode::random, 11);
  auto est = d2_classify([&](std::span<const int> x) { return bp_classify(p, x); }, p, 0, 1);
  EXPECT_TRUE(est.exact);
  EXPECT_LE(est.value, 1e-12);
  auto den = d2_denoise([&](std::span<const double> z) { return bp_denoise(p, z, 1.0).mean; }, p, 200, 2);
  EXPECT_LE(den.value, 1e-12);
}

TEST(D2, UniformClassifierOnCopyChain) {
  auto p = copy_chain_params(TreeTopology::build({1}), 2);
  auto est = d2_classify([](std::span<const int>) { return std::vector<double>{0.5, 0.5}; }, p, 0, 1);
  EXPECT_NEAR(est.value, 0.5, 1e-12);
}

TEST(D2, ConstantDenoiserMatchesQuadrature) {
  auto p = generate_params(TreeTopology::build({1}), 2, 2.0, PsiMode::uniform, 1);
  auto phi = [](double u) { return std::exp(-u * u / 2) / std::sqrt(2 * M_PI); };
  double integral = 0.0;
  const double step = 1e-3;
  for (double z = -12; z <= 15; z += step) {
    const double a = phi(z - 1), b = phi(z - 2);
    const double m = (a + 2 * b) / (a + b);
    integral += 0.5 * (a + b) * (1.5 - m) * (1.5 - m) * step;
  }
  auto est = d2_denoise([](std::span<const double>) { return std::vector<double>{1.5}; }, p, 40000, 3);
  EXPECT_NEAR(est.value, integral, 4 * est.se);
  EXPECT_GT(est.se, 0.0);
}

TEST(D2, ConstructedNetsImproveWithDelta) {
  // K = S forces uniform tables, so use K = 4 for a non-trivial posterior
  auto p = generate_params(TreeTopology::build({2, 2}), 2, 4.0, PsiMode::random, 12, RootMode::uniform);
  double previous = INFINITY;
  for (double delta : {1.0, 0.5, 0.25}) {
    auto w = construct_classifier(p, delta);
    const double v = d2_net(w, p, 0, 1).value;
    EXPECT_LT(v, previous) << delta;
    previous = v;
  }
}

TEST(D2, ConstructedUNetWithinDeltaSquared) {
  auto p = generate_params(TreeTopology::build({2}), 2, 4.0, PsiMode::random, 13, RootMode::uniform);
  const double delta = 0.5;
  auto w = construct_denoiser(p, delta);
  auto est = d2_net(w, p, 500, 4);
  EXPECT_LE(est.value, delta * delta);
}

TEST(Fit, ZeroIterationsReturnsInit) {
  auto p = generate_params(TreeTopology::build({2}), 2, 3.0, PsiMode::random, 14);
  auto w = random_init(p.topology, 2, 4, 0.3, 15, NetKind::convnet);
  TrainConfig c;
  c.task = Task::classify;
  c.n = 50;
  c.iterations = 0;
  auto r = fit(p, c, w);
  std::ostringstream a, b;
  write_weights(a, w);
  write_weights(b, r.weights);
  EXPECT_TRUE(a.str() == b.str());
  ASSERT_EQ(r.log.size(), 1u);
}

TEST(Fit, OneLeafClassifierImproves) {
  auto p = generate_params(TreeTopology::build({1}), 3, 4.0, PsiMode::random, 16);
  auto w = random_init(p.topology, 3, 8, 0.3, 17, NetKind::convnet);
  TrainConfig c;
  c.task = Task::classify;
  c.n = 1000;
  c.iterations = 150;
  c.step = 0.5;
  c.seed = 18;
  auto r = fit(p, c, w);
  EXPECT_LT(r.final_risk, r.initial_risk);
  EXPECT_LT(d2_net(r.weights, p, 0, 1).value, d2_net(w, p, 0, 1).value);
}

TEST(Fit, ConstructedInitDoesNotGetWorse) {
  auto p = generate_params(TreeTopology::build({2}), 2, 4.0, PsiMode::random, 19, RootMode::uniform);
  auto w = construct_classifier(p, 1.0);
  TrainConfig c;
  c.task = Task::classify;
  c.n = 300;
  c.iterations = 5;
  c.step = 1e-3;
  c.seed = 20;
  auto r = fit(p, c, w);
  EXPECT_LE(r.final_risk, r.initial_risk);
  // Bayes risk on the same data, for the slack comparison
  auto data = make_dataset(p, Task::classify, c.n, derive_seed(c.seed, "train-data"));
  double bayes = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) bayes += loss_classify(bp_classify(p, data.leaves[i]), data.labels[i]);
  bayes /= static_cast<double>(data.size());
  // a log-ratio error of delta moves each probability by at most a factor e^delta
  EXPECT_LE(std::abs(r.initial_risk - bayes), 2 * (std::exp(1.0) - 1.0));
}

TEST(Fit, DivergenceCarriesLog) {
  auto p = generate_params(TreeTopology::build({2}), 2, 3.0, PsiMode::random, 21);
  auto w = random_init(p.topology, 2, 6, 0.5, 22, NetKind::unet);
  TrainConfig c;
  c.task = Task::denoise;
  c.n = 50;
  c.iterations = 50;
  c.step = 1e200;
  try {
    fit(p, c, w);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.code(), ErrorCode::divergence);
    EXPECT_GE(e.log().size(), 2u);
  }
}

TEST(Fit, ProjectionKeepsBudget) {
  auto p = generate_params(TreeTopology::build({2}), 2, 3.0, PsiMode::random, 23);
  auto w = random_init(p.topology, 2, 6, 0.5, 24, NetKind::unet);
  TrainConfig c;
  c.task = Task::denoise;
  c.n = 100;
  c.iterations = 10;
  c.step = 0.5;
  c.B = 0.8;
  auto r = fit(p, c, w);
  EXPECT_LE(max_operator_norm(r.weights), 0.8 + 1e-9);
  for (const auto& row : r.log) EXPECT_TRUE(std::isfinite(row.risk));
}
