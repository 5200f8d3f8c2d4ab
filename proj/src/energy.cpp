#include "graspqp/energy.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "graspqp/qp.hpp"

namespace graspqp {

EnergyVariant parse_energy_variant(std::string_view name) {
  if (name == "graspqp") return EnergyVariant::kGraspQp;
  if (name == "graspqp-no-exp") return EnergyVariant::kGraspQpNoExp;
  if (name == "dexgraspnet") return EnergyVariant::kDexGraspNet;
  if (name == "gendexgrasp") return EnergyVariant::kGenDexGrasp;
  if (name == "constrained-ii") return EnergyVariant::kConstrainedII;
  if (name == "barrier") return EnergyVariant::kBarrier;
  throw InputError("unknown energy variant '" + std::string(name) + "'");
}

std::string to_string(EnergyVariant variant) {
  switch (variant) {
    case EnergyVariant::kGraspQp: return "graspqp";
    case EnergyVariant::kGraspQpNoExp: return "graspqp-no-exp";
    case EnergyVariant::kDexGraspNet: return "dexgraspnet";
    case EnergyVariant::kGenDexGrasp: return "gendexgrasp";
    case EnergyVariant::kConstrainedII: return "constrained-ii";
    case EnergyVariant::kBarrier: return "barrier";
  }
  return "graspqp";
}

DistanceMode distance_mode(EnergyVariant variant) {
  return variant == EnergyVariant::kDexGraspNet ? DistanceMode::kPlain : DistanceMode::kNormalWeighted;
}

void EnergyWeights::validate() const {
  if (!(w_dis >= 0 && w_pen >= 0 && w_spen >= 0 && w_joints >= 0)) {
    throw std::invalid_argument("energy weights must be non-negative");
  }
  if (!(mu >= 0)) throw std::invalid_argument("friction coefficient must be non-negative");
  if (!(upper > 1.0)) throw std::invalid_argument("gamma upper bound must exceed 1");
  if (!(torque_weight > 0)) throw std::invalid_argument("torque weight must be positive");
}

double sigma_product(const Mat6X& W, Mat6X* grad) {
  if (grad) *grad = Mat6X::Zero(6, W.cols());
  if (W.cols() < 6) return 0.0;
  Eigen::JacobiSVD<MatX> svd(W, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VecX& s = svd.singularValues();
  if (grad) {
    for (int i = 0; i < 6; ++i) {
      double others = 1.0;
      for (int j = 0; j < 6; ++j) {
        if (j != i) others *= s[j];
      }
      *grad += others * svd.matrixU().col(i) * svd.matrixV().col(i).transpose();
    }
  }
  if (wrench_rank(W) < 6) return 0.0;
  return s.head<6>().prod();
}

namespace {

constexpr double kTinyResidual = 1e-12;

// value = residual * exp(-P); folds the residual gradient and the exp factor.
void apply_exp_factor(const Mat6X& W, bool use_exp, bool want_gradient, const Mat6X& d_residual, FcValue& out) {
  Mat6X d_prod;
  out.sigma_product = sigma_product(W, want_gradient && use_exp ? &d_prod : nullptr);
  const double factor = use_exp ? std::exp(-out.sigma_product) : 1.0;
  out.value = out.residual * factor;
  if (!want_gradient) return;
  out.d_w = factor * d_residual;
  if (use_exp) {
    out.d_w -= out.residual * factor * d_prod;
    if (out.sigma_product == 0.0 && W.cols() >= 6) out.nonsmooth = true;
  }
}

}  // namespace

FcValue e_fc_graspqp(const Mat6X& W, double upper, bool use_exp, bool want_gradient) {
  FcValue out;
  const BoxQp qp = make_force_closure_qp(W, upper);
  const QpSolution sol = solve_box_qp(qp);
  out.gamma = sol.z;
  out.converged = sol.converged;
  out.residual = (W * sol.z).norm();
  Mat6X d_residual = Mat6X::Zero(6, W.cols());
  if (want_gradient) {
    if (out.residual > kTinyResidual) {
      // d(objective)/dH: explicit term plus the solution's sensitivity.
      const VecX upstream = qp.H * sol.z;
      const QpGradient qg = qp_gradients(qp, sol, upstream);
      const MatX d_obj = 0.5 * sol.z * sol.z.transpose() + qg.dH;
      d_residual = (2.0 / out.residual) * W * (0.5 * (d_obj + d_obj.transpose()));
      if (qg.regularized) out.nonsmooth = true;
    } else {
      out.nonsmooth = true;
    }
    const double tol = 1e-10 * std::max(1.0, qp.H.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < sol.z.size(); ++i) {
      if (sol.state[i] != BoundState::kFree && sol.multipliers[i] < tol) out.nonsmooth = true;
      if (sol.state[i] == BoundState::kFree &&
          (sol.z[i] - qp.lower[i] < 1e-10 || qp.upper[i] - sol.z[i] < 1e-10)) {
        out.nonsmooth = true;
      }
    }
  }
  apply_exp_factor(W, use_exp, want_gradient, d_residual, out);
  return out;
}

FcValue e_fc_dexgraspnet(const Mat6X& W, bool want_gradient) {
  FcValue out;
  out.gamma = VecX::Ones(W.cols());
  const Vec6 r = W.rowwise().sum();
  out.residual = r.norm();
  out.value = out.residual;
  if (want_gradient) {
    out.d_w = Mat6X::Zero(6, W.cols());
    if (out.residual > kTinyResidual) {
      out.d_w = (r / out.residual) * VecX::Ones(W.cols()).transpose();
    } else {
      out.nonsmooth = true;
    }
  }
  return out;
}

FcValue e_fc_constrained_ii(const Mat6X& W, bool want_gradient) {
  FcValue out;
  const Eigen::Index n = W.cols();
  const QpSolution sol = solve_simplex_qp(W.transpose() * W, static_cast<double>(n));
  out.gamma = sol.z;
  out.converged = sol.converged;
  const Vec6 r = W * sol.z;
  out.residual = r.norm();
  Mat6X d_residual = Mat6X::Zero(6, n);
  if (want_gradient) {
    if (out.residual > kTinyResidual) {
      d_residual = (r / out.residual) * sol.z.transpose();
    } else {
      out.nonsmooth = true;
    }
  }
  apply_exp_factor(W, true, want_gradient, d_residual, out);
  return out;
}

FcValue e_fc_barrier(const Mat6X& W, double upper, bool want_gradient) {
  FcValue out;
  const BarrierSolution sol = solve_barrier_unconstrained(W, upper);
  out.gamma = sol.gamma.cwiseMax(1.0).cwiseMin(upper);
  out.converged = sol.converged;
  const Vec6 r = W * out.gamma;
  out.residual = r.norm();
  Mat6X d_residual = Mat6X::Zero(6, W.cols());
  if (want_gradient) {
    // gamma held fixed; the barrier minimizer is not differentiated.
    out.nonsmooth = true;
    if (out.residual > kTinyResidual) d_residual = (r / out.residual) * out.gamma.transpose();
  }
  apply_exp_factor(W, true, want_gradient, d_residual, out);
  return out;
}

FcValue e_fc_graspqp(std::span<const ContactFrame> contacts, const EnergyWeights& weights) {
  if (contacts.empty()) throw std::invalid_argument("e_fc needs at least one contact");
  return e_fc_graspqp(build_wrench_matrix(contacts, weights.mu, weights.torque_weight).columns, weights.upper);
}

FcValue e_fc_dexgraspnet(std::span<const ContactFrame> contacts, const EnergyWeights& weights) {
  if (contacts.empty()) throw std::invalid_argument("e_fc needs at least one contact");
  return e_fc_dexgraspnet(build_wrench_matrix(contacts, 0.0, weights.torque_weight).columns);
}

FcValue e_fc_constrained_ii(std::span<const ContactFrame> contacts, const EnergyWeights& weights) {
  if (contacts.empty()) throw std::invalid_argument("e_fc needs at least one contact");
  return e_fc_constrained_ii(build_wrench_matrix(contacts, weights.mu, weights.torque_weight).columns);
}

namespace {

using ParamGrad = VecX;

struct ContactSample {
  int candidate = -1;
  int link = -1;
  Vec3 position;        // world
  Vec3 finger_normal;   // world, out of the finger
  SdfSample sdf;
};

struct Evaluation {
  EnergyBreakdown energy;
  VecX grad;
};

Mat3 normal_jacobian(const SdfSample& s) {
  const double len = s.raw_gradient.norm();
  if (len < 1e-12) return Mat3::Zero();
  return (Mat3::Identity() - s.gradient * s.gradient.transpose()) * s.hessian / len;
}

Evaluation evaluate(const Grasp& grasp, const ObjectModel& object, const GripperModel& model,
                    const EnergyWeights& weights, bool want_gradient) {
  weights.validate();
  if (grasp.q.size() != model.dof()) throw std::invalid_argument("grasp joint vector has the wrong size");
  const int n_params = 6 + model.dof();
  Evaluation ev;
  EnergyBreakdown& e = ev.energy;
  VecX& grad = ev.grad;
  grad = VecX::Zero(n_params);
  const ForwardKinematics fk = forward_kinematics(model, grasp.pose, grasp.q);

  std::vector<ContactSample> contacts;
  contacts.reserve(grasp.active_contacts.size());
  for (int idx : grasp.active_contacts) {
    ContactSample c;
    c.candidate = idx;
    c.link = model.candidates.at(idx).link;
    c.position = fk.candidate_positions[idx];
    c.finger_normal = fk.candidate_normals[idx];
    c.sdf = sdf_query(object.sdf, c.position);
    contacts.push_back(c);
  }

  // Force closure.
  if (!contacts.empty()) {
    std::vector<ContactFrame> frames;
    frames.reserve(contacts.size());
    for (const auto& c : contacts) frames.push_back({c.position - object.com, c.sdf.gradient});
    const bool frictionless =
        weights.variant == EnergyVariant::kDexGraspNet || weights.variant == EnergyVariant::kGenDexGrasp;
    const double mu = frictionless ? 0.0 : weights.mu;
    const WrenchMatrix W = build_wrench_matrix(frames, mu, weights.torque_weight);
    FcValue fc;
    switch (weights.variant) {
      case EnergyVariant::kGraspQp: fc = e_fc_graspqp(W.columns, weights.upper, true, want_gradient); break;
      case EnergyVariant::kGraspQpNoExp: fc = e_fc_graspqp(W.columns, weights.upper, false, want_gradient); break;
      case EnergyVariant::kDexGraspNet:
      case EnergyVariant::kGenDexGrasp: fc = e_fc_dexgraspnet(W.columns, want_gradient); break;
      case EnergyVariant::kConstrainedII: fc = e_fc_constrained_ii(W.columns, want_gradient); break;
      case EnergyVariant::kBarrier: fc = e_fc_barrier(W.columns, weights.upper, want_gradient); break;
    }
    e.e_fc = fc.value;
    e.gamma = fc.gamma;
    e.sigma_product = fc.sigma_product;
    e.qp_converged = fc.converged;
    e.nonsmooth = e.nonsmooth || fc.nonsmooth;

    if (want_gradient) {
      const double s = std::sqrt(weights.torque_weight);
      std::vector<Vec3> d_point(contacts.size(), Vec3::Zero());
      std::vector<Vec3> d_normal(contacts.size(), Vec3::Zero());
      std::vector<FrictionCone> cones;
      for (const auto& f : frames) cones.push_back(friction_cone_edges(f.normal, mu));
      for (Eigen::Index col = 0; col < W.columns.cols(); ++col) {
        const auto [i, k] = W.provenance[col];
        const Vec3 g_f = fc.d_w.col(col).head<3>();
        const Vec3 g_t = s * fc.d_w.col(col).tail<3>();
        const Vec3& edge = cones[i].edges[k];
        const Vec3& c = frames[i].point;
        const Vec3 d_edge = g_f + skew(c) * g_t;
        d_point[i] += -skew(edge) * g_t;
        const auto jac = friction_cone_edge_jacobians(frames[i].normal, mu);
        d_normal[i] += jac[k].transpose() * d_edge;
      }
      for (std::size_t i = 0; i < contacts.size(); ++i) {
        const Vec3 dp = d_point[i] + normal_jacobian(contacts[i].sdf).transpose() * d_normal[i];
        grad += point_jacobian(model, fk, contacts[i].link, contacts[i].position).transpose() * dp;
        if (contacts[i].sdf.outside_grid) e.nonsmooth = true;
      }
    }
  }

  // Contact distance.
  const DistanceMode mode = distance_mode(weights.variant);
  for (const auto& c : contacts) {
    const double d = c.sdf.distance;
    const double ad = std::abs(d);
    double weight = 1.0;
    double cos_angle = 1.0;
    if (mode == DistanceMode::kNormalWeighted) {
      cos_angle = -c.finger_normal.dot(c.sdf.gradient);
      weight = normal_distance_weight(cos_angle);
    }
    e.e_dis += weight * ad;
    if (!want_gradient) continue;
    if (ad < 1e-12) e.nonsmooth = true;
    const double sign = d >= 0.0 ? 1.0 : -1.0;
    const Eigen::MatrixXd Jp = point_jacobian(model, fk, c.link, c.position);
    Vec3 dp = weights.w_dis * weight * sign * c.sdf.raw_gradient;
    if (mode == DistanceMode::kNormalWeighted) {
      // d weight = -weight * d cos, cos = -<n_c, n_o>.
      const double dw = weights.w_dis * ad * weight;
      dp += dw * normal_jacobian(c.sdf).transpose() * c.finger_normal;
      const Vec3 d_finger = dw * c.sdf.gradient;
      grad += direction_jacobian(model, fk, c.link, c.finger_normal).transpose() * d_finger;
    }
    grad += Jp.transpose() * dp;
  }

  // Penetration of gripper spheres into the object.
  std::vector<std::pair<int, Vec3>> sphere_centers;
  std::vector<double> radii;
  for (int l = 0; l < static_cast<int>(model.links.size()); ++l) {
    for (const auto& sp : model.links[l].spheres) {
      sphere_centers.emplace_back(l, fk.link_poses[l] * sp.center);
      radii.push_back(sp.radius);
    }
  }
  for (std::size_t a = 0; a < sphere_centers.size(); ++a) {
    const auto& [link, center] = sphere_centers[a];
    const SdfSample s = sdf_query(object.sdf, center);
    const double depth = radii[a] - s.distance;
    if (depth <= 0.0) continue;
    e.e_pen += depth;
    if (want_gradient) {
      if (depth < 1e-12) e.nonsmooth = true;
      grad += point_jacobian(model, fk, link, center).transpose() * (-weights.w_pen * s.raw_gradient);
    }
  }

  // Self penetration between spheres of non-adjacent links.
  for (std::size_t a = 0; a < sphere_centers.size(); ++a) {
    for (std::size_t b = a + 1; b < sphere_centers.size(); ++b) {
      const int la = sphere_centers[a].first;
      const int lb = sphere_centers[b].first;
      if (la == lb || model.adjacent(la, lb)) continue;
      const Vec3 diff = sphere_centers[a].second - sphere_centers[b].second;
      const double dist = diff.norm();
      const double overlap = radii[a] + radii[b] - dist;
      if (overlap <= 0.0) continue;
      e.e_spen += overlap;
      if (want_gradient && dist > 1e-12) {
        const Vec3 dir = diff / dist;
        grad += point_jacobian(model, fk, la, sphere_centers[a].second).transpose() * (-weights.w_spen * dir);
        grad += point_jacobian(model, fk, lb, sphere_centers[b].second).transpose() * (weights.w_spen * dir);
      }
    }
  }

  // Joint limits.
  for (int j = 0; j < model.dof(); ++j) {
    const double hi = grasp.q[j] - model.joints[j].upper;
    const double lo = model.joints[j].lower - grasp.q[j];
    if (hi > 0.0) {
      e.e_joints += hi * hi;
      if (want_gradient) grad[6 + j] += weights.w_joints * 2.0 * hi;
    }
    if (lo > 0.0) {
      e.e_joints += lo * lo;
      if (want_gradient) grad[6 + j] -= weights.w_joints * 2.0 * lo;
    }
  }

  e.total = e.e_fc + weights.w_dis * e.e_dis + weights.w_pen * e.e_pen + weights.w_spen * e.e_spen +
            weights.w_joints * e.e_joints;
  return ev;
}

}  // namespace

double e_dis(const Grasp& grasp, const ObjectModel& object, const GripperModel& model, DistanceMode mode) {
  const ForwardKinematics fk = forward_kinematics(model, grasp.pose, grasp.q);
  double total = 0.0;
  for (int idx : grasp.active_contacts) {
    const SdfSample s = sdf_query(object.sdf, fk.candidate_positions[idx]);
    double weight = 1.0;
    if (mode == DistanceMode::kNormalWeighted) {
      weight = normal_distance_weight(-fk.candidate_normals[idx].dot(s.gradient));
    }
    total += weight * std::abs(s.distance);
  }
  return total;
}

RegularizerTerms e_reg(const Grasp& grasp, const ObjectModel& object, const GripperModel& model) {
  Grasp no_contacts = grasp;
  no_contacts.active_contacts.clear();
  const EnergyBreakdown e = evaluate(no_contacts, object, model, EnergyWeights{}, false).energy;
  return {e.e_pen, e.e_spen, e.e_joints};
}

EnergyBreakdown total_energy(const Grasp& grasp, const ObjectModel& object, const GripperModel& model,
                             const EnergyWeights& weights) {
  return evaluate(grasp, object, model, weights, false).energy;
}

EnergyGradient energy_gradient(const Grasp& grasp, const ObjectModel& object, const GripperModel& model,
                               const EnergyWeights& weights) {
  Evaluation ev = evaluate(grasp, object, model, weights, true);
  return {std::move(ev.grad), std::move(ev.energy)};
}

std::vector<ContactFrame> active_contact_frames(const Grasp& grasp, const ObjectModel& object,
                                                const GripperModel& model) {
  const ForwardKinematics fk = forward_kinematics(model, grasp.pose, grasp.q);
  std::vector<ContactFrame> frames;
  for (int idx : grasp.active_contacts) {
    const Vec3 p = fk.candidate_positions[idx];
    frames.push_back({p - object.com, sdf_query(object.sdf, p).gradient});
  }
  return frames;
}

}  // namespace graspqp
