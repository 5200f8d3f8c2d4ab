#pragma once

#include <cstdint>
#include <vector>

#include "graspqp/common.hpp"

namespace graspqp {

// min 1/2 z^T H z + g^T z  s.t.  lower <= z <= upper.
struct BoxQp {
  MatX H;
  VecX g;
  VecX lower;
  VecX upper;
};

// H = W^T W, g = 0, 1 <= z <= upper: the bounded force-closure program.
BoxQp make_force_closure_qp(const MatX& W, double upper = 50.0);

enum class BoundState : std::uint8_t { kFree, kLower, kUpper };

struct QpSolution {
  VecX z;
  double objective = 0.0;
  std::vector<BoundState> state;
  VecX multipliers;          // >= 0 on active bounds, 0 on free coordinates
  double equality_multiplier = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Primal active-set method started from z = lower. Handles singular H
// (H = W^T W has rank <= 6) with minimum-norm subspace steps. Gives up after
// 50 * N iterations and reports converged = false.
QpSolution solve_box_qp(const BoxQp& qp);

// min 1/2 z^T H z  s.t.  z >= 0, sum(z) = total. Same active-set core with
// one equality row; starts from the uniform point.
QpSolution solve_simplex_qp(const MatX& H, double total);

struct QpGradient {
  MatX dH;  // symmetric
  VecX dg;
  bool regularized = false;  // reduced Hessian was singular
};

// Implicit differentiation of the KKT conditions on the free set F:
//   dz_F = -H_FF^{-1} (dH z + dg)_F, dz = 0 on active bounds.
QpGradient qp_gradients(const BoxQp& qp, const QpSolution& solution, const VecX& upstream);

// Piecewise barrier on h = [gamma - 1, upper - gamma]:
//   -h for h < 0, -(1/tau) log(h + eps) for h >= 0.
double barrier_penalty(const VecX& gamma, double upper, double tau = 100.0, double eps = 1e-6);

struct BarrierSolution {
  VecX gamma;
  double objective = 0.0;  // ||W gamma|| + barrier(gamma)
  double residual = 0.0;   // ||W clamp(gamma, 1, upper)||
  int iterations = 0;
  bool converged = false;
};

// Minimizes ||W gamma|| + barrier(gamma) with a dogleg trust-region method
// from the box midpoint.
BarrierSolution solve_barrier_unconstrained(const MatX& W, double upper, double tau = 100.0,
                                            double eps = 1e-6);

}  // namespace graspqp
