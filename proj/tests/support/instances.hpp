#pragma once

#include <cmath>
#include <vector>

#include "ghmnet/ghm.hpp"
#include "ghmnet/rng.hpp"

namespace ghmnet::fixtures {

/// Small random model: S in {2, 3}, depth 1..3, at most 8 leaves, K in [S, 8],
/// and few enough nodes for full enumeration of the joint.
inline GhmParams random_instance(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "instance"));
  const int S = 2 + static_cast<int>(rng.uniform() * 2);
  std::vector<int> m;
  for (;;) {
    m.clear();
    int leaves = 1;
    const int depth = 1 + static_cast<int>(rng.uniform() * 3);
    for (int l = 0; l < depth; ++l) {
      int cap = 8 / leaves;
      int b = 1 + static_cast<int>(rng.uniform() * std::min(cap, 3));
      m.push_back(b);
      leaves *= b;
    }
    if (std::pow(S, TreeTopology::build(m).node_count()) <= 1e7) break;
  }
  const double K = S + rng.uniform() * (8.0 - S);
  return generate_params(TreeTopology::build(m), S, K, PsiMode::random, derive_seed(seed, "params"));
}

inline std::vector<int> random_leaves(const GhmParams& p, Rng& rng) {
  std::vector<int> x(p.leaf_count());
  for (int& v : x) v = 1 + static_cast<int>(rng.uniform() * p.S);
  return x;
}

inline std::vector<double> random_observation(const GhmParams& p, Rng& rng, double sigma = 1.0) {
  auto x = sample(p, rng).leaves();
  return corrupt(x, sigma, rng);
}

}  // namespace ghmnet::fixtures
