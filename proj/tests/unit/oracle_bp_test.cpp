#include <gtest/gtest.h>

#include <cmath>

#include "ghmnet/bp.hpp"
#include "ghmnet/oracle.hpp"
#include "instances.hpp"

using namespace ghmnet;

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST(Oracle, UniformTablesGiveUniformPosterior) {
  auto p = generate_params(TreeTopology::build({2, 2}), 3, 3.0, PsiMode::uniform, 1);
  std::vector<int> x{1, 3, 2, 2};
  for (double v : oracle::posterior_label(p, x)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(Oracle, CopyChainConcentrates) {
  auto p = copy_chain_params(TreeTopology::build({2, 2}), 2);
  std::vector<int> x{1, 1, 1, 1};
  auto post = oracle::posterior_label(p, x);
  EXPECT_DOUBLE_EQ(post[0], 1.0);
  EXPECT_DOUBLE_EQ(post[1], 0.0);
}

TEST(Oracle, EnumerationLimit) {
  auto p = generate_params(TreeTopology::build({3, 3, 3}), 2, 2.0, PsiMode::uniform, 1);
  std::vector<double> z(27, 1.0);
  try {
    oracle::posterior_denoise(p, z, 1.0, 1000);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::enumeration_limit);
  }
}

TEST(Oracle, DenoiseLargeObservationPushesToTop) {
  auto p = generate_params(TreeTopology::build({2}), 3, 4.0, PsiMode::random, 2);
  std::vector<double> z{60.0, 60.0};
  auto post = oracle::posterior_denoise(p, z, 1.0);
  for (double m : post.mean) EXPECT_NEAR(m, 3.0, 1e-9);
}

TEST(Oracle, DenoiseIndependentLeavesTwoPointFormula) {
  auto p = generate_params(TreeTopology::build({2}), 2, 2.0, PsiMode::uniform, 1);
  std::vector<double> z{0.3, 2.4};
  const double sigma2 = 0.8;
  auto post = oracle::posterior_denoise(p, z, sigma2);
  for (int v = 0; v < 2; ++v) {
    // p(x=2 | z) = 1 / (1 + exp(-(z - 1.5) / sigma2)) for equal priors on {1, 2}
    const double p2 = 1.0 / (1.0 + std::exp(-(z[v] - 1.5) / sigma2));
    EXPECT_NEAR(post.posterior(v)[1], p2, 1e-12);
  }
}

TEST(Oracle, VanishingNoiseOnLatticePoint) {
  auto p = generate_params(TreeTopology::build({2, 1}), 2, 4.0, PsiMode::random, 6);
  std::vector<double> z{2.0, 1.0};
  auto post = oracle::posterior_denoise(p, z, 1e-4);
  EXPECT_NEAR(post.posterior(0)[1], 1.0, 1e-9);
  EXPECT_NEAR(post.posterior(1)[0], 1.0, 1e-9);
}

TEST(Oracle, SiblingReorderInvariance) {
  auto base = generate_params(TreeTopology::build({2, 2}), 2, 4.0, PsiMode::random, 5);
  // same table for both ranks of every layer
  for (auto& layer : base.psi) layer[1] = layer[0];
  std::vector<int> x{1, 2, 2, 2}, swapped{2, 2, 1, 2};
  EXPECT_LT(max_abs_diff(oracle::posterior_label(base, x), oracle::posterior_label(base, swapped)), 1e-12);
}

TEST(Bp, MatchesOracleOnSeededInstance) {
  auto p = generate_params(TreeTopology::build({2, 2}), 2, 4.0, PsiMode::random, 3);
  for (std::uint64_t i = 0; i < 16; ++i) {
    auto x = oracle::leaf_config(i, 4, 2);
    EXPECT_LT(max_abs_diff(bp_classify(p, x), oracle::posterior_label(p, x)), 1e-10);
  }
}

TEST(Bp, MatchesOracleOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto p = fixtures::random_instance(seed);
    Rng rng(derive_seed(seed, "input"));
    auto x = fixtures::random_leaves(p, rng);
    EXPECT_LT(max_abs_diff(bp_classify(p, x), oracle::posterior_label(p, x)), 1e-10) << "seed " << seed;
    auto z = fixtures::random_observation(p, rng);
    const double sigma2 = 0.3 + rng.uniform() * 2.0;
    auto a = bp_denoise(p, z, sigma2);
    auto b = oracle::posterior_denoise(p, z, sigma2);
    EXPECT_LT(max_abs_diff(a.mean, b.mean), 1e-10) << "seed " << seed;
    EXPECT_LT(max_abs_diff(a.leaf_posteriors, b.leaf_posteriors), 1e-10) << "seed " << seed;
  }
}

TEST(Bp, DenoiseAgainstOracleOnSmallChain) {
  auto p = generate_params(TreeTopology::build({2, 1}), 2, 4.0, PsiMode::random, 21);
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    auto z = fixtures::random_observation(p, rng);
    EXPECT_LT(max_abs_diff(bp_denoise(p, z, 1.0).mean, oracle::posterior_denoise(p, z, 1.0).mean), 1e-10);
  }
}

TEST(Bp, UniformAndCopyChain) {
  auto u = generate_params(TreeTopology::build({2, 2}), 2, 2.0, PsiMode::uniform, 1);
  std::vector<int> x{2, 1, 2, 2};
  for (double v : bp_classify(u, x)) EXPECT_NEAR(v, 0.5, 1e-15);
  auto c = copy_chain_params(TreeTopology::build({2, 2}), 3);
  std::vector<int> same{3, 3, 3, 3};
  auto post = bp_classify(c, same);
  EXPECT_DOUBLE_EQ(post[2], 1.0);
}

TEST(Bp, SingleLeafSymmetricMean) {
  auto p = generate_params(TreeTopology::build({1}), 2, 2.0, PsiMode::uniform, 1);
  std::vector<double> z{1.5};
  EXPECT_NEAR(bp_denoise(p, z, 1.0).mean[0], 1.5, 1e-15);
}

TEST(Bp, VanishingNoiseRecoversSample) {
  auto p = fixtures::random_instance(17);
  Rng rng(1);
  auto x = sample(p, rng).leaves();
  std::vector<double> z(x.begin(), x.end());
  auto m = bp_denoise(p, z, 1e-8).mean;
  for (std::size_t v = 0; v < x.size(); ++v) EXPECT_EQ(std::lround(m[v]), x[v]);
}

TEST(Bp, InvalidNoise) {
  auto p = fixtures::random_instance(1);
  std::vector<double> z(p.leaf_count(), 1.0);
  try {
    bp_denoise(p, z, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_noise);
  }
  std::vector<int> short_x(p.leaf_count() + 1, 1);
  EXPECT_THROW(bp_classify(p, short_x), Error);
}

TEST(Bp, ChildOrderDoesNotMatter) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = fixtures::random_instance(seed);
    Rng rng(seed);
    auto x = fixtures::random_leaves(p, rng);
    EXPECT_LT(max_abs_diff(bp_classify(p, x), bp_classify(p, x, {.reverse_children = true})), 1e-13);
    auto z = fixtures::random_observation(p, rng);
    EXPECT_LT(max_abs_diff(bp_denoise(p, z, 1.0).mean, bp_denoise(p, z, 1.0, {.reverse_children = true}).mean), 1e-13);
  }
}

TEST(Bp, BeliefsAreNormalized) {
  auto p = fixtures::random_instance(8);
  Rng rng(2);
  auto z = fixtures::random_observation(p, rng);
  std::vector<double> lik(z.size() * p.S);
  gaussian_likelihood(z, 1.0, p.S, lik);
  BeliefPropagation bp(p);
  const auto& st = bp.run(lik, true);
  for (int g = 0; g < p.topology.node_count(); ++g) {
    double a = 0.0, b = 0.0;
    for (double v : st.down_at(g)) a += v;
    for (double v : st.up_at(g)) b += v;
    EXPECT_NEAR(a, 1.0, 1e-12);
    EXPECT_NEAR(b, 1.0, 1e-12);
  }
}

TEST(Bp, ClampedRootBeliefMatchesClassifier) {
  // A near-zero noise observation on lattice points acts like clamped leaves.
  auto p = fixtures::random_instance(12);
  Rng rng(3);
  auto x = fixtures::random_leaves(p, rng);
  auto lik = indicator_likelihood(x, p.S);
  BeliefPropagation bp(p);
  const auto& st = bp.run(lik, true);
  // root posterior from the upward view: up(root) * down(root)
  std::vector<double> root(p.S);
  double total = 0.0;
  for (int s = 0; s < p.S; ++s) total += root[s] = st.up_at(0)[s] * st.down_at(0)[s];
  for (double& v : root) v /= total;
  EXPECT_LT(max_abs_diff(root, bp_classify(p, x)), 1e-14);
}

TEST(Bp, LogEvidenceMatchesLeafMarginal) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = fixtures::random_instance(seed);
    auto marg = oracle::leaf_marginal(p);
    for (std::uint64_t i = 0; i < marg.size(); i += 1 + marg.size() / 7) {
      auto x = oracle::leaf_config(i, p.leaf_count(), p.S);
      EXPECT_NEAR(std::exp(leaf_log_evidence(p, x)), marg[i], 1e-12);
    }
  }
}
