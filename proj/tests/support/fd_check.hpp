#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "ghmnet/train.hpp"

namespace ghmnet::fixtures {

struct FdReport {
  int checked = 0;
  int mismatches = 0;
  std::string first_mismatch;
};

/// Reverse-mode gradient against central differences of the empirical risk at
/// random weight coordinates. Coordinates whose stencil straddles a ReLU kink
/// (the h and h/2 differences disagree) are skipped.
inline FdReport finite_difference_check(NetWeights w, const Dataset& data, int coords, std::uint64_t seed) {
  w = densify(std::move(w));
  NetGrad g;
  empirical_risk(w, data, &g);
  Rng rng(seed);
  const double h = 1e-5;
  const int L = w.depth();
  FdReport report;
  for (int attempt = 0; report.checked < coords && attempt < 20 * coords; ++attempt) {
    const bool up = w.kind == NetKind::unet && rng.uniform() < 0.5;
    const int layer = static_cast<int>(rng.uniform() * L);
    const int rank = static_cast<int>(rng.uniform() * w.topology.branching(layer + 1));
    const int which = static_cast<int>(rng.uniform() * 3);
    auto& block = (up ? w.up : w.down)[layer][rank];
    const auto& bg = (up ? g.up : g.down)[layer][rank];
    Matrix& wm = which == 0 ? block.W1 : which == 1 ? block.W2.dense() : block.W3;
    const Matrix& gm = which == 0 ? bg.W1 : which == 1 ? bg.W2 : bg.W3;
    const auto r = static_cast<Eigen::Index>(rng.uniform() * gm.rows());
    const auto c = static_cast<Eigen::Index>(rng.uniform() * gm.cols());
    double& x = wm(r, c);
    const double orig = x;
    auto risk_at = [&](double v) {
      x = v;
      return empirical_risk(w, data, nullptr);
    };
    const double fd = (risk_at(orig + h) - risk_at(orig - h)) / (2 * h);
    const double fd2 = (risk_at(orig + h / 2) - risk_at(orig - h / 2)) / h;
    x = orig;
    if (std::abs(fd - fd2) > 1e-6 * std::max(1.0, std::abs(fd))) continue;
    const double analytic = gm(r, c);
    if (std::abs(analytic - fd) > std::max(1e-5, 1e-3 * std::abs(analytic))) {
      if (report.mismatches++ == 0)
        report.first_mismatch = std::string(up ? "up" : "down") + " layer " + std::to_string(layer + 1) + " rank " +
                                std::to_string(rank) + " W" + std::to_string(which + 1) + ": analytic " +
                                std::to_string(analytic) + " vs " + std::to_string(fd);
    }
    ++report.checked;
  }
  return report;
}

}  // namespace ghmnet::fixtures
