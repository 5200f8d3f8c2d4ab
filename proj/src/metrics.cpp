#include "graspqp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "binary_io.hpp"
#include "graspqp/lp.hpp"

namespace graspqp {

namespace {

constexpr double kDegToRad = M_PI / 180.0;

std::int64_t floor_div(double value, double delta) { return static_cast<std::int64_t>(std::floor(value / delta)); }

}  // namespace

void DiscretizationConfig::validate() const {
  if (!(delta_r > 0 && delta_phi_deg > 0 && delta_q_deg > 0 && entropy_bins > 0 && position_range > 0)) {
    throw std::invalid_argument("discretization parameters must be positive");
  }
}

Vec3 intrinsic_xyz_euler(const Mat3& R) { return R.eulerAngles(0, 1, 2); }

GraspKey grasp_key(const Grasp& grasp, const DiscretizationConfig& config) {
  GraspKey key;
  key.reserve(6 + grasp.q.size());
  for (int a = 0; a < 3; ++a) key.push_back(floor_div(grasp.pose.translation[a], config.delta_r));
  const Vec3 euler = intrinsic_xyz_euler(grasp.pose.rotation.toRotationMatrix());
  for (int a = 0; a < 3; ++a) key.push_back(floor_div(euler[a], config.delta_phi_deg * kDegToRad));
  for (Eigen::Index j = 0; j < grasp.q.size(); ++j) key.push_back(floor_div(grasp.q[j], config.delta_q_deg * kDegToRad));
  return key;
}

double unique_grasp_rate(std::span<const GraspRecord> records, const DiscretizationConfig& config) {
  if (records.empty()) throw std::invalid_argument("unique_grasp_rate: no records");
  std::set<GraspKey> keys;
  for (const auto& r : records) {
    if (r.success) keys.insert(grasp_key(r.grasp, config));
  }
  return static_cast<double>(keys.size()) / static_cast<double>(records.size());
}

Vec3 axis_angle_to_spherical(const Mat3& R) {
  const Eigen::AngleAxisd aa(R);
  double angle = aa.angle();
  Vec3 axis = aa.axis();
  if (angle > M_PI) {
    angle = 2.0 * M_PI - angle;
    axis = -axis;
  }
  if (angle < 1e-12) return Vec3::Zero();
  if (angle > M_PI - 1e-9) {
    // +axis and -axis describe the same rotation; pick the one whose first
    // significant component is positive.
    for (int a = 0; a < 3; ++a) {
      if (std::abs(axis[a]) > 1e-9) {
        if (axis[a] < 0) axis = -axis;
        break;
      }
    }
  }
  const Vec3 v = angle * axis;
  const double r = v.norm();
  const double theta = std::acos(std::clamp(v.z() / r, -1.0, 1.0));
  const double planar = std::hypot(v.x(), v.y());
  const double phi = planar < 1e-12 * r ? 0.0 : std::atan2(v.y(), v.x());
  return {r, theta, phi};
}

double histogram_entropy(std::span<const double> values, double lo, double hi, int bins) {
  if (values.empty()) return 0.0;
  if (!(hi > lo) || bins <= 0) throw std::invalid_argument("histogram_entropy: bad range");
  std::vector<int> counts(bins, 0);
  for (double v : values) {
    const double f = (std::clamp(v, lo, hi) - lo) / (hi - lo);
    const int b = std::clamp(static_cast<int>(std::floor(f * bins)), 0, bins - 1);
    ++counts[b];
  }
  double h = 0.0;
  const double n = static_cast<double>(values.size());
  for (int c : counts) {
    if (c == 0) continue;
    const double p = c / n;
    h -= p * std::log(p);
  }
  return h;
}

EntropyReport grasp_entropy(std::span<const GraspRecord> records, const GripperModel& model, const Vec3& com,
                            const DiscretizationConfig& config) {
  config.validate();
  EntropyReport out;
  std::vector<const GraspRecord*> ok;
  for (const auto& r : records) {
    if (r.success) ok.push_back(&r);
  }
  out.samples = static_cast<int>(ok.size());
  if (ok.empty()) return out;
  const int bins = config.entropy_bins;
  std::vector<double> column(ok.size());

  const double half = 0.5 * config.position_range;
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < ok.size(); ++i) column[i] = ok[i]->grasp.pose.translation[a] - com[a];
    out.pos += histogram_entropy(column, -half, half, bins) / 3.0;
  }

  std::vector<Vec3> sph(ok.size());
  for (std::size_t i = 0; i < ok.size(); ++i) sph[i] = axis_angle_to_spherical(ok[i]->grasp.pose.rotation.toRotationMatrix());
  const std::array<std::pair<double, double>, 3> ranges = {std::pair{0.0, M_PI}, std::pair{0.0, M_PI},
                                                           std::pair{-M_PI, M_PI}};
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < ok.size(); ++i) column[i] = sph[i][a];
    out.rot += histogram_entropy(column, ranges[a].first, ranges[a].second, bins) / 3.0;
  }

  const int dof = model.dof();
  for (int j = 0; j < dof; ++j) {
    for (std::size_t i = 0; i < ok.size(); ++i) column[i] = ok[i]->grasp.q[j];
    out.q += histogram_entropy(column, model.joints[j].lower, model.joints[j].upper, bins) / dof;
  }
  out.total = 0.5 * out.q + 0.5 * (out.pos + out.rot);
  return out;
}

namespace {

struct WorldSphere {
  Vec3 center;
  double radius;
};

std::vector<WorldSphere> world_spheres(const GripperModel& model, const Grasp& grasp) {
  const ForwardKinematics fk = forward_kinematics(model, grasp.pose, grasp.q);
  std::vector<WorldSphere> out;
  for (std::size_t l = 0; l < model.links.size(); ++l) {
    for (const auto& s : model.links[l].spheres) out.push_back({fk.link_poses[l] * s.center, s.radius});
  }
  return out;
}

}  // namespace

double penetration_depth(std::span<const Grasp> grasps, const SurfaceSampleSet& surface, const GripperModel& model) {
  if (grasps.empty()) return 0.0;
  double total = 0.0;
  for (const auto& g : grasps) {
    const auto spheres = world_spheres(model, g);
    double worst = 0.0;
    for (const auto& p : surface.points) {
      for (const auto& s : spheres) worst = std::max(worst, s.radius - (p - s.center).norm());
    }
    total += worst;
  }
  return total / static_cast<double>(grasps.size());
}

bool analytic_disturbance_check(const Mat6X& W, double upper, double force, const Vec3& axis) {
  if (!(upper > 0.0)) throw std::invalid_argument("disturbance check needs a positive force bound");
  if (force == 0.0) return true;
  const Eigen::Index m = W.cols();
  if (m == 0) return false;
  // gamma + slack = upper, W gamma = -w_ext.
  MatX A = MatX::Zero(6 + m, 2 * m);
  VecX b = VecX::Zero(6 + m);
  A.topLeftCorner(6, m) = W;
  b.head<3>() = -force * axis;
  A.bottomLeftCorner(m, m).setIdentity();
  A.bottomRightCorner(m, m).setIdentity();
  b.tail(m).setConstant(upper);
  return solve_standard_lp(VecX::Zero(2 * m), A, b).status == LpStatus::kOptimal;
}

bool analytic_disturbance_check(std::span<const ContactFrame> contacts, double mu, double upper,
                                double torque_weight, double force, const Vec3& axis) {
  return analytic_disturbance_check(build_wrench_matrix(contacts, mu, torque_weight).columns, upper, force, axis);
}

StabilityReport surrogate_stability(std::span<const ContactFrame> contacts, double force, const SurrogateConfig& config) {
  StabilityReport rep;
  if (contacts.empty()) return rep;
  const Mat6X W = build_wrench_matrix(contacts, config.mu, config.torque_weight).columns;
  // Columns are built from outward normals, i.e. they are the negated contact
  // forces, so resisting +F a means W gamma = F a.
  for (int a = 0; a < 3; ++a) {
    rep.per_axis[2 * a] = analytic_disturbance_check(W, config.upper, force, -Vec3::Unit(a));
    rep.per_axis[2 * a + 1] = analytic_disturbance_check(W, config.upper, force, Vec3::Unit(a));
  }
  rep.succ3 = true;
  for (int a = 0; a < 3; ++a) {
    const bool both = rep.per_axis[2 * a] && rep.per_axis[2 * a + 1];
    rep.succ1 = rep.succ1 || both;
    rep.succ3 = rep.succ3 && both;
  }
  return rep;
}

std::vector<ContactFrame> touching_contacts(const Grasp& grasp, const ObjectModel& object, const GripperModel& model,
                                            double tolerance) {
  const ForwardKinematics fk = forward_kinematics(model, grasp.pose, grasp.q);
  std::vector<ContactFrame> out;
  for (int idx : grasp.active_contacts) {
    const Vec3 p = fk.candidate_positions[idx];
    const SdfSample s = sdf_query(object.sdf, p);
    if (std::abs(s.distance) <= tolerance) out.push_back({p - object.com, s.gradient});
  }
  return out;
}

VecX heatmap_weights(const Grasp& grasp, const TriangleMesh& mesh, const GripperModel& model) {
  const auto spheres = world_spheres(model, grasp);
  const Eigen::Index n = static_cast<Eigen::Index>(mesh.vertices.size());
  VecX logits(n);
  for (Eigen::Index v = 0; v < n; ++v) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& s : spheres) d = std::min(d, std::max(0.0, (mesh.vertices[v] - s.center).norm() - s.radius));
    if (spheres.empty()) d = 0.0;
    logits[v] = -10.0 * d;
  }
  const double top = logits.maxCoeff();
  VecX w = (logits.array() - top).exp();
  return w / w.sum();
}

std::vector<float> contact_heatmap(std::span<const Grasp> grasps, const TriangleMesh& mesh, const GripperModel& model) {
  if (grasps.empty()) throw std::invalid_argument("contact_heatmap: no grasps");
  VecX acc = VecX::Zero(static_cast<Eigen::Index>(mesh.vertices.size()));
  for (const auto& g : grasps) acc += heatmap_weights(g, mesh, model);
  acc /= static_cast<double>(grasps.size());
  const double top = acc.size() ? acc.maxCoeff() : 0.0;
  std::vector<float> out(acc.size());
  for (Eigen::Index v = 0; v < acc.size(); ++v) out[v] = static_cast<float>(top > 0 ? acc[v] / top : 0.0);
  return out;
}

void save_heatmap(const std::vector<float>& values, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(values.size()));
  for (float v : values) detail::write_le<float>(out, v);
}

std::vector<float> load_heatmap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  const auto n = detail::read_le<std::uint32_t>(in);
  std::vector<float> values(n);
  for (auto& v : values) v = detail::read_le<float>(in);
  return values;
}

}  // namespace graspqp
