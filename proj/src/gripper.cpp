#include "graspqp/gripper.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

namespace graspqp {

using nlohmann::json;

int GripperModel::link_index(const std::string& link_name) const {
  for (std::size_t i = 0; i < links.size(); ++i) {
    if (links[i].name == link_name) return static_cast<int>(i);
  }
  return -1;
}

bool GripperModel::adjacent(int link_a, int link_b) const {
  return link_a == link_b || links[link_a].parent == link_b || links[link_b].parent == link_a;
}

VecX GripperModel::lower_limits() const {
  VecX lo(dof());
  for (int j = 0; j < dof(); ++j) lo[j] = joints[j].lower;
  return lo;
}

VecX GripperModel::upper_limits() const {
  VecX hi(dof());
  for (int j = 0; j < dof(); ++j) hi[j] = joints[j].upper;
  return hi;
}

void finalize_gripper(GripperModel& model) {
  const int n = static_cast<int>(model.links.size());
  if (n == 0) throw InputError("gripper has no links");

  int roots = 0;
  for (const auto& link : model.links) {
    if (link.parent < -1 || link.parent >= n) throw InputError("link '" + link.name + "' has invalid parent");
    if (link.parent == -1) ++roots;
  }
  if (roots != 1) throw InputError("kinematic graph must have exactly one root link");

  // Topological order; anything unreachable from the root sits on a cycle.
  std::vector<std::vector<int>> children(n);
  int root = -1;
  for (int i = 0; i < n; ++i) {
    if (model.links[i].parent == -1) {
      root = i;
    } else {
      children[model.links[i].parent].push_back(i);
    }
  }
  model.topological_order.clear();
  std::vector<int> stack{root};
  while (!stack.empty()) {
    const int cur = stack.back();
    stack.pop_back();
    model.topological_order.push_back(cur);
    for (auto it = children[cur].rbegin(); it != children[cur].rend(); ++it) stack.push_back(*it);
  }
  if (static_cast<int>(model.topological_order.size()) != n) throw InputError("kinematic graph has a cycle");

  for (auto& link : model.links) link.joint = -1;
  for (std::size_t j = 0; j < model.joints.size(); ++j) {
    auto& joint = model.joints[j];
    if (joint.child_link < 0 || joint.child_link >= n) throw InputError("joint has invalid child link");
    auto& child = model.links[joint.child_link];
    if (child.joint != -1) throw InputError("link '" + child.name + "' is driven by two joints");
    if (joint.parent_link != child.parent) {
      throw InputError("joint parent does not match the parent of link '" + child.name + "'");
    }
    if (std::abs(joint.axis.norm() - 1.0) > 1e-6) throw InputError("joint axis is not unit length");
    if (!(joint.lower < joint.upper)) throw InputError("joint limits must satisfy lower < upper");
    child.joint = static_cast<int>(j);
  }

  std::vector<ContactCandidate> unique;
  for (const auto& c : model.candidates) {
    if (c.link < 0 || c.link >= n) throw InputError("contact candidate references unknown link");
    if (std::abs(c.normal.norm() - 1.0) > 1e-6) throw InputError("contact normal is not unit length");
    const bool dup = std::any_of(unique.begin(), unique.end(), [&](const ContactCandidate& u) {
      return u.link == c.link && (u.point - c.point).norm() < 1e-12;
    });
    if (!dup) unique.push_back(c);
  }
  model.candidates = std::move(unique);
  if (model.candidates.empty()) throw InputError("gripper has no contact candidates");

  for (const auto& [tax, mask] : model.taxonomies) {
    if (mask.empty()) throw InputError("taxonomy mask '" + tax + "' is empty");
    for (int l : mask) {
      if (l < 0 || l >= n) throw InputError("taxonomy mask '" + tax + "' references unknown link");
    }
  }
}

namespace {

Vec3 read_vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw InputError(std::string("expected 3-vector for ") + what);
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

// URDF-style origin: translation xyz, fixed-axis roll-pitch-yaw.
Eigen::Isometry3d read_origin(const json& j) {
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  if (j.is_null()) return t;
  if (j.contains("xyz")) t.translation() = read_vec3(j["xyz"], "origin.xyz");
  if (j.contains("rpy")) {
    const Vec3 rpy = read_vec3(j["rpy"], "origin.rpy");
    t.linear() = (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
                  Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
                     .toRotationMatrix();
  }
  return t;
}

}  // namespace

GripperModel parse_gripper_spec(const json& spec) {
  GripperModel model;
  try {
    model.name = spec.value("name", std::string("gripper"));
    const auto& links = spec.at("links");
    for (const auto& jl : links) {
      Link link;
      link.name = jl.at("name").get<std::string>();
      link.origin = read_origin(jl.value("origin", json()));
      for (const auto& js : jl.value("spheres", json::array())) {
        link.spheres.push_back({read_vec3(js.at("c"), "sphere center"), js.at("r").get<double>()});
      }
      model.links.push_back(std::move(link));
    }
    std::set<std::string> names;
    for (const auto& l : model.links) {
      if (!names.insert(l.name).second) throw InputError("duplicate link name '" + l.name + "'");
    }
    for (std::size_t i = 0; i < links.size(); ++i) {
      const auto& parent = links[i].value("parent", json());
      if (parent.is_null() || (parent.is_string() && parent.get<std::string>().empty())) continue;
      const int idx = model.link_index(parent.get<std::string>());
      if (idx < 0) throw InputError("unknown parent link '" + parent.get<std::string>() + "'");
      model.links[i].parent = idx;
    }
    for (const auto& jj : spec.value("joints", json::array())) {
      Joint joint;
      const auto type = jj.at("type").get<std::string>();
      if (type == "revolute") {
        joint.type = JointType::kRevolute;
      } else if (type == "prismatic") {
        joint.type = JointType::kPrismatic;
      } else {
        throw InputError("unknown joint type '" + type + "'");
      }
      joint.axis = read_vec3(jj.at("axis"), "joint axis");
      const auto& lim = jj.at("limits");
      if (!lim.is_array() || lim.size() != 2) throw InputError("joint limits must be [lo, hi]");
      joint.lower = lim[0].get<double>();
      joint.upper = lim[1].get<double>();
      joint.parent_link = model.link_index(jj.at("parent").get<std::string>());
      joint.child_link = model.link_index(jj.at("child").get<std::string>());
      if (joint.parent_link < 0 || joint.child_link < 0) throw InputError("joint references unknown link");
      joint.origin = read_origin(jj.value("origin", json()));
      model.joints.push_back(joint);
    }
    for (const auto& jc : spec.at("contacts")) {
      ContactCandidate c;
      c.link = model.link_index(jc.at("link").get<std::string>());
      if (c.link < 0) throw InputError("contact references unknown link");
      c.point = read_vec3(jc.at("point"), "contact point");
      c.normal = read_vec3(jc.at("normal"), "contact normal");
      model.candidates.push_back(c);
    }
    const json taxonomies = spec.value("taxonomies", json::object());
    for (const auto& [tax, list] : taxonomies.items()) {
      std::vector<int> mask;
      for (const auto& ln : list) {
        const int idx = model.link_index(ln.get<std::string>());
        if (idx < 0) throw InputError("taxonomy '" + tax + "' references unknown link");
        mask.push_back(idx);
      }
      model.taxonomies[tax] = std::move(mask);
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("gripper spec: ") + e.what());
  }
  finalize_gripper(model);
  return model;
}

GripperModel load_gripper_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open gripper spec " + path.string());
  json spec;
  try {
    in >> spec;
  } catch (const json::exception& e) {
    throw InputError("gripper spec " + path.string() + ": " + e.what());
  }
  return parse_gripper_spec(spec);
}

ForwardKinematics forward_kinematics(const GripperModel& model, const WristPose& pose, const VecX& q) {
  if (q.size() != model.dof()) throw std::invalid_argument("forward_kinematics: q has wrong size");
  ForwardKinematics fk;
  fk.link_poses.resize(model.links.size());
  fk.joint_origins.resize(model.joints.size());
  fk.joint_axes.resize(model.joints.size());

  Eigen::Isometry3d& wrist = fk.wrist;
  wrist.linear() = pose.rotation.normalized().toRotationMatrix();
  wrist.translation() = pose.translation;

  for (int li : model.topological_order) {
    const Link& link = model.links[li];
    Eigen::Isometry3d parent = link.parent < 0 ? wrist : fk.link_poses[link.parent];
    if (link.joint >= 0) {
      const Joint& joint = model.joints[link.joint];
      const Eigen::Isometry3d frame = parent * joint.origin;
      fk.joint_origins[link.joint] = frame.translation();
      fk.joint_axes[link.joint] = frame.linear() * joint.axis;
      Eigen::Isometry3d motion = Eigen::Isometry3d::Identity();
      if (joint.type == JointType::kRevolute) {
        motion.linear() = Eigen::AngleAxisd(q[link.joint], joint.axis).toRotationMatrix();
      } else {
        motion.translation() = q[link.joint] * joint.axis;
      }
      parent = frame * motion;
    }
    fk.link_poses[li] = parent * link.origin;
  }

  fk.candidate_positions.reserve(model.candidates.size());
  fk.candidate_normals.reserve(model.candidates.size());
  for (const auto& c : model.candidates) {
    const auto& t = fk.link_poses[c.link];
    fk.candidate_positions.push_back(t * c.point);
    fk.candidate_normals.push_back(t.linear() * c.normal);
  }
  return fk;
}

namespace {

template <typename ColumnFn>
Eigen::MatrixXd chain_jacobian(const GripperModel& model, int link, ColumnFn&& joint_column) {
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3, 6 + model.dof());
  for (int cur = link; cur >= 0; cur = model.links[cur].parent) {
    const int j = model.links[cur].joint;
    if (j >= 0) jac.col(6 + j) = joint_column(j);
  }
  return jac;
}

}  // namespace

Eigen::MatrixXd point_jacobian(const GripperModel& model, const ForwardKinematics& fk, int link,
                               const Vec3& world_point) {
  Eigen::MatrixXd jac = chain_jacobian(model, link, [&](int j) -> Vec3 {
    if (model.joints[j].type == JointType::kRevolute) {
      return fk.joint_axes[j].cross(world_point - fk.joint_origins[j]);
    }
    return fk.joint_axes[j];
  });
  jac.block<3, 3>(0, 0).setIdentity();
  const Vec3 lever = world_point - fk.wrist.translation();
  jac.block<3, 3>(0, 3) = -skew(lever);
  return jac;
}

Eigen::MatrixXd direction_jacobian(const GripperModel& model, const ForwardKinematics& fk, int link,
                                   const Vec3& world_direction) {
  Eigen::MatrixXd jac = chain_jacobian(model, link, [&](int j) -> Vec3 {
    if (model.joints[j].type == JointType::kRevolute) return fk.joint_axes[j].cross(world_direction);
    return Vec3::Zero();
  });
  jac.block<3, 3>(0, 3) = -skew(world_direction);
  return jac;
}

Eigen::MatrixXd fk_jacobian(const GripperModel& model, const WristPose& pose, const VecX& q, int candidate) {
  if (candidate < 0 || candidate >= static_cast<int>(model.candidates.size())) {
    throw std::out_of_range("fk_jacobian: candidate index out of range");
  }
  const ForwardKinematics fk = forward_kinematics(model, pose, q);
  return point_jacobian(model, fk, model.candidates[candidate].link, fk.candidate_positions[candidate]);
}

WristPose retract(const WristPose& pose, const Vec3& d_translation, const Vec3& d_rotation) {
  WristPose out;
  out.translation = pose.translation + d_translation;
  out.rotation = (quat_exp(d_rotation) * pose.rotation).normalized();
  return out;
}

VecX clamp_to_limits(const GripperModel& model, const VecX& q) {
  return q.cwiseMax(model.lower_limits()).cwiseMin(model.upper_limits());
}

std::vector<int> select_grasp_type_contacts(const GripperModel& model, const std::string& taxonomy) {
  const auto it = model.taxonomies.find(taxonomy);
  std::vector<int> pool;
  if (it == model.taxonomies.end()) {
    if (taxonomy != "power") throw std::invalid_argument("unknown grasp taxonomy '" + taxonomy + "'");
    // Power grasps use the whole hand when no mask is configured.
    pool.resize(model.candidates.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i);
    return pool;
  }
  if (it->second.empty()) throw std::invalid_argument("taxonomy mask '" + taxonomy + "' is empty");
  const std::set<int> mask(it->second.begin(), it->second.end());
  for (std::size_t i = 0; i < model.candidates.size(); ++i) {
    if (mask.count(model.candidates[i].link)) pool.push_back(static_cast<int>(i));
  }
  if (pool.empty()) throw std::invalid_argument("taxonomy '" + taxonomy + "' selects no contact candidates");
  return pool;
}

double gripper_reach(const GripperModel& model) {
  const VecX mid = 0.5 * (model.lower_limits() + model.upper_limits());
  const ForwardKinematics fk = forward_kinematics(model, WristPose{}, mid);
  double reach = 0.0;
  for (const auto& p : fk.candidate_positions) reach = std::max(reach, p.norm());
  for (std::size_t l = 0; l < model.links.size(); ++l) {
    for (const auto& s : model.links[l].spheres) {
      reach = std::max(reach, (fk.link_poses[l] * s.center).norm() + s.radius);
    }
  }
  return reach;
}

namespace {

Vec3 random_unit_vector(Rng& rng) {
  Vec3 v(standard_normal(rng), standard_normal(rng), standard_normal(rng));
  const double n = v.norm();
  return n > 1e-12 ? Vec3(v / n) : Vec3::UnitZ();
}

}  // namespace

Grasp initialize_grasp(const GripperModel& model, const ObjectModel& object, std::span<const int> pool,
                       int contact_count, Rng& rng) {
  if (contact_count > static_cast<int>(pool.size())) {
    throw std::invalid_argument("contact count exceeds the taxonomy pool size");
  }
  Grasp grasp;
  const double radius = object.circumradius + gripper_reach(model);
  grasp.pose.translation = object.com + radius * random_unit_vector(rng);

  const auto& surface = object.surface.points;
  const Vec3 target = surface.empty()
                          ? object.com
                          : surface[std::uniform_int_distribution<std::size_t>(0, surface.size() - 1)(rng)];
  Vec3 palm = target - grasp.pose.translation;
  palm = palm.norm() > 1e-12 ? Vec3(palm.normalized()) : Vec3(-grasp.pose.translation.normalized());
  const double roll = 2.0 * M_PI * uniform01(rng);
  const Eigen::Quaterniond aim = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), palm);
  grasp.pose.rotation = (Eigen::Quaterniond(Eigen::AngleAxisd(roll, palm)) * aim).normalized();

  grasp.q.resize(model.dof());
  for (int j = 0; j < model.dof(); ++j) {
    const auto& joint = model.joints[j];
    grasp.q[j] = joint.lower + (0.2 + 0.6 * uniform01(rng)) * (joint.upper - joint.lower);
  }
  grasp.desired_torque = VecX::Zero(model.dof());

  const ForwardKinematics rest = forward_kinematics(model, WristPose{}, grasp.q);
  std::vector<Vec3> pool_points;
  pool_points.reserve(pool.size());
  for (int idx : pool) pool_points.push_back(rest.candidate_positions[idx]);
  const int start = std::uniform_int_distribution<int>(0, static_cast<int>(pool.size()) - 1)(rng);
  for (int local : farthest_point_sample(pool_points, contact_count, start)) {
    grasp.active_contacts.push_back(pool[local]);
  }
  return grasp;
}

GraspBatch initialize_grasps(const GripperModel& model, const ObjectModel& object, int n_seeds,
                             const InitConfig& config, std::uint64_t seed) {
  if (n_seeds <= 0) throw std::invalid_argument("initialize_grasps: n_seeds must be positive");
  const std::vector<int> pool = select_grasp_type_contacts(model, config.taxonomy);
  GraspBatch batch;
  batch.grasps.reserve(n_seeds);
  batch.rngs.reserve(n_seeds);
  for (int i = 0; i < n_seeds; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    batch.grasps.push_back(initialize_grasp(model, object, pool, config.contact_count, rng));
    batch.rngs.push_back(std::move(rng));
  }
  return batch;
}

ResampleResult resample_active_contacts(const Grasp& grasp, std::span<const int> pool, Rng& rng,
                                        double p_switch) {
  ResampleResult out{grasp, false, false};
  const auto& active = grasp.active_contacts;
  std::vector<int> spare;
  for (int idx : pool) {
    if (std::find(active.begin(), active.end(), idx) == active.end()) spare.push_back(idx);
  }
  if (spare.empty() || active.empty()) {
    out.pool_exhausted = true;
    return out;
  }
  if (uniform01(rng) >= p_switch) return out;
  const auto slot = std::uniform_int_distribution<std::size_t>(0, active.size() - 1)(rng);
  const auto pick = std::uniform_int_distribution<std::size_t>(0, spare.size() - 1)(rng);
  out.grasp.active_contacts[slot] = spare[pick];
  out.switched = true;
  return out;
}

}  // namespace graspqp
