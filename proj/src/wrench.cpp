#include "graspqp/wrench.hpp"

#include <cmath>

#include <Eigen/SVD>

#include "graspqp/lp.hpp"

namespace graspqp {

namespace {

constexpr double kSpanPositivity = 1e-8;

}  // namespace

Vec6 contact_wrench(const Vec3& c, const Vec3& f) {
  Vec6 w;
  w.head<3>() = f;
  w.tail<3>() = f.cross(c);
  return w;
}

namespace {

int seed_axis(const Vec3& n) {
  int axis = 0;
  n.cwiseAbs().minCoeff(&axis);
  return axis;
}

}  // namespace

std::pair<Vec3, Vec3> tangent_basis(const Vec3& n) {
  const Vec3 a = Vec3::Unit(seed_axis(n));
  const Vec3 t1 = (a - a.dot(n) * n).normalized();
  return {t1, n.cross(t1)};
}

FrictionCone friction_cone_edges(const Vec3& n_in, double mu) {
  if (!(mu >= 0.0)) throw std::invalid_argument("friction coefficient must be non-negative");
  const double len = n_in.norm();
  if (!(len > 1e-12)) throw std::invalid_argument("friction_cone_edges: zero normal");
  const Vec3 n = n_in / len;
  const auto [t1, t2] = tangent_basis(n);
  FrictionCone cone;
  cone.mu = mu;
  cone.edges[0] = (n + mu * t1).normalized();
  cone.edges[1] = (n - mu * t1).normalized();
  cone.edges[2] = (n + mu * t2).normalized();
  cone.edges[3] = (n - mu * t2).normalized();
  return cone;
}

std::array<Mat3, 4> friction_cone_edge_jacobians(const Vec3& n, double mu) {
  const Vec3 a = Vec3::Unit(seed_axis(n));
  const Vec3 v = a - a.dot(n) * n;
  const double vlen = v.norm();
  const Vec3 t1 = v / vlen;
  const Vec3 t2 = n.cross(t1);
  const Mat3 I = Mat3::Identity();
  const Mat3 dv = -a.dot(n) * I - n * a.transpose();
  const Mat3 dt1 = (I - t1 * t1.transpose()) * dv / vlen;
  const Mat3 dt2 = -skew(t1) + skew(n) * dt1;

  std::array<Mat3, 4> out;
  const std::array<std::pair<double, const Mat3*>, 4> terms = {
      std::pair{+1.0, &dt1}, std::pair{-1.0, &dt1}, std::pair{+1.0, &dt2}, std::pair{-1.0, &dt2}};
  const std::array<Vec3, 4> tangents = {t1, t1, t2, t2};
  for (int k = 0; k < 4; ++k) {
    const double s = terms[k].first;
    const Vec3 m = n + mu * s * tangents[k];
    const double mlen = m.norm();
    const Vec3 e = m / mlen;
    const Mat3 dm = I + mu * s * (*terms[k].second);
    out[k] = (I - e * e.transpose()) * dm / mlen;
  }
  return out;
}

WrenchMatrix build_wrench_matrix(std::span<const ContactFrame> contacts, double mu, double torque_weight) {
  if (!(torque_weight > 0.0)) throw std::invalid_argument("torque weight must be positive");
  const int edges_per_contact = mu > 0.0 ? 4 : 1;
  WrenchMatrix W;
  W.torque_weight = torque_weight;
  W.columns.resize(6, static_cast<Eigen::Index>(contacts.size()) * edges_per_contact);
  const double torque_scale = std::sqrt(torque_weight);
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < contacts.size(); ++i) {
    const FrictionCone cone = friction_cone_edges(contacts[i].normal, mu);
    for (int k = 0; k < edges_per_contact; ++k) {
      Vec6 w = contact_wrench(contacts[i].point, cone.edges[k]);
      w.tail<3>() *= torque_scale;
      W.columns.col(col++) = w;
      W.provenance.emplace_back(static_cast<int>(i), k);
    }
  }
  return W;
}

int wrench_rank(const Mat6X& W) {
  if (W.cols() == 0) return 0;
  Eigen::JacobiSVD<MatX> svd(W);
  const auto& s = svd.singularValues();
  const double tol = 1e-9 * std::max(1.0, s[0]);
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) rank += s[i] > tol ? 1 : 0;
  return rank;
}

double max_min_positive_combination(const Mat6X& W) {
  const Eigen::Index n = W.cols();
  if (n == 0) return -1.0;
  // alpha = t * 1 + s with s >= 0, t >= 0:
  //   W s + t W 1 = 0,  sum(s) + n t = n,  maximize t.
  MatX A = MatX::Zero(7, n + 1);
  VecX b = VecX::Zero(7);
  A.topLeftCorner(6, n) = W;
  A.block(0, n, 6, 1) = W.rowwise().sum();
  A.block(6, 0, 1, n).setOnes();
  A(6, n) = static_cast<double>(n);
  b[6] = static_cast<double>(n);
  VecX c = VecX::Zero(n + 1);
  c[n] = -1.0;
  const LpResult lp = solve_standard_lp(c, A, b);
  if (lp.status != LpStatus::kOptimal) return -1.0;
  return lp.x[n];
}

bool positively_spans(const Mat6X& W) {
  if (W.cols() < 7) return false;
  if (wrench_rank(W) < 6) return false;
  return max_min_positive_combination(W) > kSpanPositivity;
}

Vec6 wrench_svd(const Mat6X& W) {
  Vec6 out = Vec6::Zero();
  if (W.cols() == 0) return out;
  Eigen::JacobiSVD<MatX> svd(W);
  const auto& s = svd.singularValues();
  for (Eigen::Index i = 0; i < s.size() && i < 6; ++i) out[i] = s[i];
  return out;
}

}  // namespace graspqp
