#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ghmnet/diffusion.hpp"
#include "instances.hpp"

using namespace ghmnet;

TEST(DenoiserAt, TimeOneIsBaseDenoiser) {
  auto p = fixtures::random_instance(3);
  Rng rng(1);
  auto m = denoiser_at(p, 1.0);
  for (int i = 0; i < 10; ++i) {
    auto z = fixtures::random_observation(p, rng);
    auto a = m(z);
    auto b = bp_denoise(p, z, 1.0).mean;
    for (std::size_t v = 0; v < a.size(); ++v) EXPECT_EQ(a[v], b[v]);
  }
}

TEST(DenoiserAt, LargeTimeRecoversCleanSample) {
  auto p = generate_params(TreeTopology::build({2, 2}), 3, 4.0, PsiMode::random, 5);
  const double t = 1e6;
  auto m = denoiser_at(p, t);
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    auto x = sample(p, rng).leaves();
    std::vector<double> z(x.begin(), x.end());
    for (double& v : z) v *= t;
    auto out = m(z);
    for (std::size_t v = 0; v < x.size(); ++v) EXPECT_EQ(round_state(out[v], p.S), x[v]);
  }
}

TEST(DenoiserAt, MatchesOracleUnderScaledObservation) {
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    auto p = generate_params(TreeTopology::build({2, 2}), 2, 3.0, PsiMode::random, 100 + i);
    const double t = std::exp(rng.uniform(-3.0, 4.0));
    // z_t = t x + sqrt(t) g
    auto x = sample(p, rng).leaves();
    std::vector<double> z(x.size());
    for (std::size_t v = 0; v < z.size(); ++v) z[v] = t * x[v] + std::sqrt(t) * rng.normal();
    std::vector<double> y(z.size());
    for (std::size_t v = 0; v < z.size(); ++v) y[v] = z[v] / t;
    auto expect = oracle::posterior_denoise(p, y, 1.0 / t).mean;
    auto got = denoiser_at(p, t)(z);
    for (std::size_t v = 0; v < z.size(); ++v) EXPECT_NEAR(got[v], expect[v], 1e-10);
  }
}

TEST(DenoiserAt, RejectsNonPositiveTime) {
  auto p = fixtures::random_instance(1);
  EXPECT_THROW(denoiser_at(p, 0.0), Error);
  EXPECT_THROW(denoiser_at(p, -1.0), Error);
}

TEST(Sde, ZeroDriftOneStepIsGaussian) {
  TimeDenoiser zero = [](std::span<const double> z, double) { return std::vector<double>(z.size(), 0.0); };
  Rng a(42), b(42);
  auto x = simulate_sde(zero, 3, 1.0, 1, a);
  for (double v : x) EXPECT_EQ(v, b.normal());
}

TEST(Sde, FirstStepUsesPriorMean) {
  auto p = generate_params(TreeTopology::build({2}), 2, 4.0, PsiMode::random, 9);
  BpTimeDenoiser den(p);
  auto at0 = den(std::vector<double>(2, 0.0), 0.0);
  auto prior = prior_leaf_mean(p);
  EXPECT_EQ(at0, prior);
}

TEST(Sde, PathHasEveryGridPoint) {
  TimeDenoiser one = [](std::span<const double> z, double) { return std::vector<double>(z.size(), 1.0); };
  Rng rng(3);
  std::vector<std::vector<double>> path;
  simulate_sde(one, 2, 2.0, 5, rng, &path);
  ASSERT_EQ(path.size(), 6u);
  EXPECT_EQ(path[0], std::vector<double>(2, 0.0));
}

TEST(Sde, BlowUpReportsStep) {
  TimeDenoiser bad = [](std::span<const double> z, double t) {
    return std::vector<double>(z.size(), t > 0.5 ? INFINITY : 0.0);
  };
  Rng rng(3);
  try {
    simulate_sde(bad, 2, 1.0, 4, rng);
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::numeric);
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos);
  }
}

TEST(Sde, SingleUniformLeafIsBalanced) {
  auto p = generate_params(TreeTopology::build({1}), 2, 2.0, PsiMode::uniform, 1, RootMode::uniform);
  DiffusionConfig c;
  c.T = 20;
  c.N = 400;
  c.samples = 10000;
  c.seed = 11;
  auto xs = sample_exact_sde(p, c);
  const double ones = std::count_if(xs.begin(), xs.end(), [](const auto& x) { return x[0] == 1; });
  const double freq = ones / c.samples;
  EXPECT_LE(std::abs(freq - 0.5), 3.0 * std::sqrt(0.25 / c.samples));
}

TEST(Sde, SeedReproducesBitwise) {
  auto p = generate_params(TreeTopology::build({2, 2}), 2, 4.0, PsiMode::random, 4);
  BpTimeDenoiser den(p);
  TimeDenoiser drift = [&den](std::span<const double> z, double t) { return den(z, t); };
  DiffusionConfig c;
  c.T = 5;
  c.N = 50;
  c.samples = 20;
  c.seed = 8;
  EXPECT_EQ(sample_sde(drift, 4, c), sample_sde(drift, 4, c));
  c.seed = 9;
  auto other = sample_sde(drift, 4, c);
  c.seed = 8;
  EXPECT_NE(other, sample_sde(drift, 4, c));
}

TEST(Sde, RoundingIsHalfUpAndClamped) {
  EXPECT_EQ(round_state(1.5, 3), 2);
  EXPECT_EQ(round_state(1.4999, 3), 1);
  EXPECT_EQ(round_state(2.5, 3), 3);
  EXPECT_EQ(round_state(-4.0, 3), 1);
  EXPECT_EQ(round_state(9.0, 3), 3);
  EXPECT_EQ(round_state(NAN, 3), 1);
}

TEST(Recovery, ExactLawMatchesOracle) {
  auto p = generate_params(TreeTopology::build({2, 2}), 3, 4.0, PsiMode::random, 12);
  auto a = exact_leaf_law(p);
  auto b = oracle::leaf_marginal(p);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Recovery, DirectSamplesBelowNoiseFloor) {
  auto p = generate_params(TreeTopology::build({2, 2}), 2, 4.0, PsiMode::random, 13);
  Rng rng(5);
  std::vector<std::vector<int>> xs;
  const int n = 100000;
  for (int i = 0; i < n; ++i) xs.push_back(sample(p, rng).leaves());
  auto r = eval_recovery(p, xs);
  EXPECT_LT(r.tv, 3.0 * std::sqrt(16.0 / n));
  EXPECT_DOUBLE_EQ(r.se_scale, std::sqrt(16.0 / n));
}

TEST(Recovery, PointMassDistance) {
  auto p = generate_params(TreeTopology::build({2, 2}), 2, 4.0, PsiMode::random, 14);
  auto law = exact_leaf_law(p);
  const auto best = std::max_element(law.begin(), law.end()) - law.begin();
  std::vector<std::vector<int>> xs(50, oracle::leaf_config(best, 4, 2));
  EXPECT_NEAR(eval_recovery(p, xs).tv, 1.0 - law[best], 1e-12);
}

TEST(Recovery, EnumerationLimit) {
  auto p = generate_params(TreeTopology::build({11}), 3, 4.0, PsiMode::random, 1);
  try {
    exact_leaf_law(p);
    FAIL() << "expected an enumeration error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::enumeration_limit);
  }
}

TEST(Recovery, StandardErrorMatchesSpread) {
  auto p = generate_params(TreeTopology::build({2, 2}), 2, 4.0, PsiMode::random, 15);
  const int n = 2000, reps = 200;
  double sum = 0.0, sq = 0.0, se = 0.0;
  Rng rng(21);
  for (int k = 0; k < reps; ++k) {
    std::vector<std::vector<int>> xs;
    for (int i = 0; i < n; ++i) xs.push_back(sample(p, rng).leaves());
    auto r = eval_recovery(p, xs);
    sum += r.tv;
    sq += r.tv * r.tv;
    se += r.tv_se / reps;
  }
  const double sd = std::sqrt(sq / reps - (sum / reps) * (sum / reps));
  EXPECT_GT(se, 0.5 * sd);
  EXPECT_LT(se, 2.0 * sd);
}
