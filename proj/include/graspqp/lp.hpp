#pragma once

#include "graspqp/common.hpp"

namespace graspqp {

enum class LpStatus { kOptimal, kInfeasible, kUnbounded, kIterationLimit };

struct LpResult {
  LpStatus status = LpStatus::kInfeasible;
  VecX x;
  double objective = 0.0;
};

// Dense two-phase simplex with Bland's rule for
//   min c^T x  s.t.  A x = b,  x >= 0.
// Sized for the handful-of-dozens variable programs used by the span and
// disturbance checks.
LpResult solve_standard_lp(const VecX& c, const MatX& A, const VecX& b);

}  // namespace graspqp
