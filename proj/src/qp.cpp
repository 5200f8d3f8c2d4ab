#include "graspqp/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

namespace graspqp {

BoxQp make_force_closure_qp(const MatX& W, double upper) {
  if (!(upper > 1.0)) throw std::invalid_argument("force-closure QP needs upper bound > 1");
  BoxQp qp;
  qp.H = W.transpose() * W;
  qp.g = VecX::Zero(W.cols());
  qp.lower = VecX::Ones(W.cols());
  qp.upper = VecX::Constant(W.cols(), upper);
  return qp;
}

namespace {

constexpr double kKktTol = 1e-8;
constexpr double kMultiplierTol = 1e-10;

struct Problem {
  const MatX& H;
  VecX g;
  VecX lower;
  VecX upper;
  bool has_sum = false;
  double sum = 0.0;
};

std::vector<Eigen::Index> free_indices(const std::vector<BoundState>& state) {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state[i] == BoundState::kFree) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

// Pseudo-inverse solve of a symmetric PSD system; `null_dir` receives the
// component of -rhs outside the range when the system is inconsistent.
VecX psd_min_norm_solve(const MatX& A, const VecX& rhs, VecX& null_dir) {
  Eigen::SelfAdjointEigenSolver<MatX> eig(A);
  const VecX& ev = eig.eigenvalues();
  const MatX& V = eig.eigenvectors();
  const double cutoff = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  const VecX coeff = V.transpose() * rhs;
  VecX x = VecX::Zero(A.rows());
  null_dir = VecX::Zero(A.rows());
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    if (ev[k] > cutoff) {
      x += V.col(k) * (coeff[k] / ev[k]);
    } else {
      null_dir -= V.col(k) * coeff[k];
    }
  }
  return x;
}

// Step restricted to the free set: minimizes 1/2 p^T H p + r^T p with p = 0
// on active coordinates (and sum(p) = 0 when the sum row is present).
// Returns false in `bounded` when the subproblem has a zero-curvature
// descent direction; the direction is then returned instead.
VecX subspace_step(const Problem& pb, const VecX& r, const std::vector<Eigen::Index>& F, bool& bounded) {
  const Eigen::Index n = r.size();
  const Eigen::Index m = static_cast<Eigen::Index>(F.size());
  VecX p = VecX::Zero(n);
  bounded = true;
  if (m == 0) return p;
  MatX Hff(m, m);
  VecX rf(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    rf[a] = r[F[a]];
    for (Eigen::Index b = 0; b < m; ++b) Hff(a, b) = pb.H(F[a], F[b]);
  }
  MatX Z;
  if (pb.has_sum) {
    if (m == 1) return p;
    Eigen::HouseholderQR<MatX> qr(VecX::Ones(m));
    Z = MatX(qr.householderQ()).rightCols(m - 1);
  } else {
    Z = MatX::Identity(m, m);
  }
  const MatX Hr = Z.transpose() * Hff * Z;
  const VecX rr = Z.transpose() * rf;
  VecX null_dir;
  const VecX y = -psd_min_norm_solve(Hr, rr, null_dir);
  const double rscale = 1.0 + rr.cwiseAbs().maxCoeff();
  VecX pf;
  if (null_dir.norm() > 1e-12 * rscale) {
    bounded = false;
    pf = Z * null_dir;
  } else {
    pf = Z * y;
  }
  for (Eigen::Index a = 0; a < m; ++a) p[F[a]] = pf[a];
  return p;
}

QpSolution active_set(const Problem& pb, VecX z, std::vector<BoundState> state) {
  const Eigen::Index n = z.size();
  QpSolution sol;
  const int max_iter = 50 * static_cast<int>(std::max<Eigen::Index>(1, n));
  const double hscale = std::max(1.0, pb.H.cwiseAbs().maxCoeff());

  double nu = 0.0;
  int iter = 0;
  bool optimal = false;
  // A full unblocked step lands on the subspace minimizer; the next pass
  // goes straight to the multiplier check.
  bool at_minimizer = false;
  for (; iter < max_iter; ++iter) {
    const VecX r = pb.H * z + pb.g;
    const auto F = free_indices(state);
    bool bounded = true;
    VecX p = at_minimizer ? VecX::Zero(n) : subspace_step(pb, r, F, bounded);
    const double zscale = 1.0 + z.cwiseAbs().maxCoeff();

    if (at_minimizer || (bounded && p.cwiseAbs().maxCoeff() <= 1e-13 * zscale)) {
      at_minimizer = false;
      // Subspace minimizer: check the bound multipliers.
      nu = 0.0;
      if (pb.has_sum && !F.empty()) {
        for (auto i : F) nu += r[i];
        nu /= static_cast<double>(F.size());
      }
      Eigen::Index release = -1;
      double worst = -kMultiplierTol * hscale * zscale;
      for (Eigen::Index i = 0; i < n; ++i) {
        double lambda = 0.0;
        if (state[i] == BoundState::kLower) lambda = r[i] - nu;
        if (state[i] == BoundState::kUpper) lambda = nu - r[i];
        if (state[i] != BoundState::kFree && lambda < worst) {
          worst = lambda;
          release = i;
        }
      }
      if (release < 0) {
        optimal = true;
        break;
      }
      state[release] = BoundState::kFree;
      continue;
    }

    // Ratio test; unbounded directions always hit the box.
    double alpha = bounded ? 1.0 : std::numeric_limits<double>::infinity();
    Eigen::Index block = -1;
    BoundState block_state = BoundState::kFree;
    for (auto i : F) {
      if (p[i] < 0.0) {
        const double a = (pb.lower[i] - z[i]) / p[i];
        if (a < alpha) {
          alpha = a;
          block = i;
          block_state = BoundState::kLower;
        }
      } else if (p[i] > 0.0 && std::isfinite(pb.upper[i])) {
        const double a = (pb.upper[i] - z[i]) / p[i];
        if (a < alpha) {
          alpha = a;
          block = i;
          block_state = BoundState::kUpper;
        }
      }
    }
    if (!std::isfinite(alpha)) break;  // unbounded program; cannot happen on a box
    alpha = std::max(alpha, 0.0);
    z += alpha * p;
    at_minimizer = block < 0;
    if (block >= 0) {
      state[block] = block_state;
      z[block] = block_state == BoundState::kLower ? pb.lower[block] : pb.upper[block];
    }
    for (auto i : F) z[i] = std::clamp(z[i], pb.lower[i], pb.upper[i]);
  }

  sol.z = z;
  sol.state = state;
  sol.iterations = iter;
  const VecX r = pb.H * z + pb.g;
  sol.objective = 0.5 * z.dot(pb.H * z) + pb.g.dot(z);
  sol.multipliers = VecX::Zero(n);
  sol.equality_multiplier = nu;
  double residual = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ri = r[i] - nu;
    switch (state[i]) {
      case BoundState::kFree:
        residual = std::max(residual, std::abs(ri));
        break;
      case BoundState::kLower:
        sol.multipliers[i] = std::max(0.0, ri);
        residual = std::max(residual, std::max(0.0, -ri));
        break;
      case BoundState::kUpper:
        sol.multipliers[i] = std::max(0.0, -ri);
        residual = std::max(residual, std::max(0.0, ri));
        break;
    }
  }
  sol.kkt_residual = residual;
  sol.converged = optimal && residual < kKktTol * std::max(1.0, hscale * (1.0 + z.cwiseAbs().maxCoeff()) / 50.0);
  return sol;
}

}  // namespace

QpSolution solve_box_qp(const BoxQp& qp) {
  const Eigen::Index n = qp.H.rows();
  if (qp.H.cols() != n || qp.g.size() != n || qp.lower.size() != n || qp.upper.size() != n) {
    throw std::invalid_argument("solve_box_qp: dimension mismatch");
  }
  if (((qp.upper - qp.lower).array() <= 0.0).any()) throw std::invalid_argument("solve_box_qp: need lower < upper");
  Problem pb{qp.H, qp.g, qp.lower, qp.upper};
  std::vector<BoundState> state(n, BoundState::kLower);
  return active_set(pb, qp.lower, state);
}

QpSolution solve_simplex_qp(const MatX& H, double total) {
  const Eigen::Index n = H.rows();
  if (n == 0 || !(total > 0.0)) throw std::invalid_argument("solve_simplex_qp: empty program or total <= 0");
  Problem pb{H, VecX::Zero(n), VecX::Zero(n), VecX::Constant(n, std::numeric_limits<double>::infinity())};
  pb.has_sum = true;
  pb.sum = total;
  std::vector<BoundState> state(n, BoundState::kFree);
  return active_set(pb, VecX::Constant(n, total / static_cast<double>(n)), state);
}

QpGradient qp_gradients(const BoxQp& qp, const QpSolution& solution, const VecX& upstream) {
  const Eigen::Index n = qp.H.rows();
  QpGradient out;
  out.dH = MatX::Zero(n, n);
  out.dg = VecX::Zero(n);
  const auto F = free_indices(solution.state);
  const Eigen::Index m = static_cast<Eigen::Index>(F.size());
  if (m == 0) return out;

  MatX Hff(m, m);
  VecX vf(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    vf[a] = upstream[F[a]];
    for (Eigen::Index b = 0; b < m; ++b) Hff(a, b) = qp.H(F[a], F[b]);
  }
  Eigen::LDLT<MatX> ldlt(Hff);
  const VecX diag = ldlt.vectorD();
  const double scale = std::max(1.0, Hff.cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success || diag.minCoeff() <= 1e-12 * scale) {
    out.regularized = true;
    ldlt.compute(Hff + 1e-10 * MatX::Identity(m, m));
  }
  const VecX yf = ldlt.solve(vf);
  VecX y = VecX::Zero(n);
  for (Eigen::Index a = 0; a < m; ++a) y[F[a]] = yf[a];
  // dL = -y^T (dH z + dg); symmetrized for symmetric perturbations.
  const MatX outer = y * solution.z.transpose();
  out.dH = -0.5 * (outer + outer.transpose());
  out.dg = -y;
  return out;
}

double barrier_penalty(const VecX& gamma, double upper, double tau, double eps) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < gamma.size(); ++i) {
    for (const double h : {gamma[i] - 1.0, upper - gamma[i]}) {
      total += h < 0.0 ? -h : -std::log(h + eps) / tau;
    }
  }
  return total;
}

namespace {

struct BarrierModel {
  double value = 0.0;
  VecX grad;
  MatX hess;
};

BarrierModel barrier_model(const MatX& W, const VecX& gamma, double upper, double tau, double eps) {
  BarrierModel m;
  const VecX r = W * gamma;
  const double rn = r.norm();
  const Eigen::Index n = gamma.size();
  m.value = rn + barrier_penalty(gamma, upper, tau, eps);
  m.grad = VecX::Zero(n);
  m.hess = MatX::Zero(n, n);
  if (rn > 1e-15) {
    const VecX g = W.transpose() * r / rn;
    m.grad += g;
    m.hess += (W.transpose() * W) / rn - g * g.transpose() / rn;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lo = gamma[i] - 1.0;
    const double hi = upper - gamma[i];
    if (lo < 0.0) {
      m.grad[i] += -1.0;
    } else {
      m.grad[i] += -1.0 / (tau * (lo + eps));
      m.hess(i, i) += 1.0 / (tau * (lo + eps) * (lo + eps));
    }
    if (hi < 0.0) {
      m.grad[i] += 1.0;
    } else {
      m.grad[i] += 1.0 / (tau * (hi + eps));
      m.hess(i, i) += 1.0 / (tau * (hi + eps) * (hi + eps));
    }
  }
  return m;
}

VecX dogleg_step(const VecX& g, const MatX& B, double radius) {
  Eigen::SelfAdjointEigenSolver<MatX> eig(B);
  const double min_ev = eig.eigenvalues().minCoeff();
  MatX Bpd = B;
  if (min_ev < 1e-8) Bpd += (1e-8 - min_ev) * MatX::Identity(B.rows(), B.cols());
  const VecX newton = -Bpd.ldlt().solve(g);
  if (newton.norm() <= radius) return newton;
  const double gBg = g.dot(Bpd * g);
  const VecX cauchy = -(g.squaredNorm() / gBg) * g;
  if (cauchy.norm() >= radius) return -radius * g / g.norm();
  // Intersect the segment cauchy -> newton with the trust-region boundary.
  const VecX d = newton - cauchy;
  const double a = d.squaredNorm();
  const double b = 2.0 * cauchy.dot(d);
  const double c = cauchy.squaredNorm() - radius * radius;
  const double t = (-b + std::sqrt(std::max(0.0, b * b - 4 * a * c))) / (2 * a);
  return cauchy + t * d;
}

}  // namespace

BarrierSolution solve_barrier_unconstrained(const MatX& W, double upper, double tau, double eps) {
  if (!(upper > 1.0)) throw std::invalid_argument("barrier solve needs upper > 1");
  const Eigen::Index n = W.cols();
  BarrierSolution out;
  VecX gamma = VecX::Constant(n, 0.5 * (1.0 + upper));
  double radius = 1.0;
  constexpr int kMaxIter = 500;
  BarrierModel cur = barrier_model(W, gamma, upper, tau, eps);
  int iter = 0;
  for (; iter < kMaxIter; ++iter) {
    if (cur.grad.norm() < 1e-9) {
      out.converged = true;
      break;
    }
    const VecX step = dogleg_step(cur.grad, cur.hess, radius);
    const double predicted = -(cur.grad.dot(step) + 0.5 * step.dot(cur.hess * step));
    const BarrierModel next = barrier_model(W, gamma + step, upper, tau, eps);
    const double actual = cur.value - next.value;
    const double rho = predicted > 0.0 ? actual / predicted : (actual > 0.0 ? 1.0 : -1.0);
    if (rho < 0.25) {
      radius *= 0.25;
    } else if (rho > 0.75 && step.norm() > 0.99 * radius) {
      radius = std::min(2.0 * radius, 100.0);
    }
    if (rho > 1e-4 && actual > 0.0) {
      gamma += step;
      cur = next;
    }
    if (radius < 1e-12) {
      out.converged = true;
      break;
    }
  }
  out.gamma = gamma;
  out.iterations = iter;
  out.objective = cur.value;
  out.residual = (W * gamma.cwiseMax(1.0).cwiseMin(upper)).norm();
  return out;
}

}  // namespace graspqp
