#pragma once

// Small sampler problems with closed-form energies, shared by the optimizer
// tests and the acceptance run.

#include <array>
#include <cmath>
#include <limits>

#include "graspqp/optimizer.hpp"

namespace toy {

using graspqp::Evaluated;
using graspqp::MalaConfig;
using graspqp::Rng;
using graspqp::VecX;

inline Evaluated make_eval(double energy, VecX grad) {
  Evaluated ev;
  ev.energy.total = energy;
  ev.energy.e_fc = energy;
  ev.grad = std::move(grad);
  return ev;
}

// E(x) = 1/2 |x - center|^2 with a fixed start.
struct Quadratic {
  using State = VecX;
  VecX center;
  VecX start;
  double step = 0.05;

  Evaluated evaluate(const VecX& x, bool) const {
    const VecX d = x - center;
    return make_eval(0.5 * d.squaredNorm(), d);
  }
  VecX step_sizes(const MalaConfig&) const { return VecX::Constant(center.size(), step); }
  VecX retract(const VecX& x, const VecX& v) const { return x + v; }
  VecX resample(const VecX& x, Rng&, const MalaConfig&) const { return x; }
  VecX initialize(int, Rng&) const { return start; }
  bool same_discrete(const VecX&, const VecX&) const { return true; }
};

// Non-finite energy on the half-space x[0] < bad_below.
struct Poisoned {
  using State = VecX;
  Quadratic inner;
  double bad_below = 0.0;  // x[0] < bad_below evaluates to NaN

  Evaluated evaluate(const VecX& x, bool g) const {
    if (x[0] < bad_below) return make_eval(std::numeric_limits<double>::quiet_NaN(), VecX::Zero(x.size()));
    return inner.evaluate(x, g);
  }
  VecX step_sizes(const MalaConfig& c) const { return inner.step_sizes(c); }
  VecX retract(const VecX& x, const VecX& v) const { return x + v; }
  VecX resample(const VecX& x, Rng&, const MalaConfig&) const { return x; }
  VecX initialize(int, Rng&) const { return inner.start; }
  bool same_discrete(const VecX&, const VecX&) const { return true; }
};

// Eight Gaussian wells on a circle over a flat background:
//   E(x) = -log(background + sum_k w_k exp(-|x - m_k|^2 / (2 s^2))).
// Chains initialized on the plateau barely feel the wells, so reaching many
// modes depends on how the sampler treats stragglers.
struct Mixture8 {
  using State = VecX;
  static constexpr int kModes = 8;
  double radius = 4.0;
  double width = 0.5;
  double background = 1e-3;
  double box = 12.0;  // initialization in [-box, box]^2
  double step = 0.02;
  std::array<double, kModes> weights{1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3};

  VecX mode(int k) const {
    const double a = 2.0 * M_PI * k / kModes;
    VecX m(2);
    m << radius * std::cos(a), radius * std::sin(a);
    return m;
  }

  Evaluated evaluate(const VecX& x, bool) const {
    double p = background;
    VecX dp = VecX::Zero(2);
    for (int k = 0; k < kModes; ++k) {
      const VecX d = x - mode(k);
      const double e = weights[k] * std::exp(-d.squaredNorm() / (2.0 * width * width));
      p += e;
      dp += -e * d / (width * width);
    }
    return make_eval(-std::log(p), -dp / p);
  }
  VecX step_sizes(const MalaConfig&) const { return VecX::Constant(2, step); }
  VecX retract(const VecX& x, const VecX& v) const { return x + v; }
  VecX resample(const VecX& x, Rng&, const MalaConfig&) const { return x; }
  VecX initialize(int, Rng& rng) const {
    VecX x(2);
    x << box * (2.0 * graspqp::uniform01(rng) - 1.0), box * (2.0 * graspqp::uniform01(rng) - 1.0);
    return x;
  }
  bool same_discrete(const VecX&, const VecX&) const { return true; }

  // Modes with at least one chain within 3 widths.
  template <class Chains>
  int distinct_modes(const Chains& chains) const {
    int count = 0;
    for (int k = 0; k < kModes; ++k) {
      for (const auto& c : chains) {
        if ((c.state - mode(k)).norm() < 3.0 * width) {
          ++count;
          break;
        }
      }
    }
    return count;
  }
};

}  // namespace toy
