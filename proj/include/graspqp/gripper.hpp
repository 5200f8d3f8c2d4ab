#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "graspqp/common.hpp"
#include "graspqp/geometry.hpp"

namespace graspqp {

enum class JointType { kRevolute, kPrismatic };

struct CollisionSphere {
  Vec3 center = Vec3::Zero();  // link frame
  double radius = 0.0;
};

struct Link {
  std::string name;
  int parent = -1;  // -1 for the wrist (root)
  Eigen::Isometry3d origin = Eigen::Isometry3d::Identity();
  std::vector<CollisionSphere> spheres;
  int joint = -1;  // joint whose child is this link, -1 when rigidly attached
};

struct Joint {
  JointType type = JointType::kRevolute;
  Vec3 axis = Vec3::UnitZ();  // unit, in the joint frame
  double lower = 0.0;
  double upper = 0.0;
  int parent_link = -1;
  int child_link = -1;
  Eigen::Isometry3d origin = Eigen::Isometry3d::Identity();
};

struct ContactCandidate {
  int link = -1;
  Vec3 point = Vec3::Zero();   // link frame
  Vec3 normal = Vec3::UnitZ(); // link frame, pointing out of the finger surface
};

// Kinematic tree rooted at the wrist. Link transforms compose as
//   world_T_child = world_T_parent * joint.origin * motion(q) * link.origin
// with the joint terms omitted for rigidly attached links.
struct GripperModel {
  std::string name;
  std::vector<Link> links;
  std::vector<Joint> joints;
  std::vector<ContactCandidate> candidates;
  std::map<std::string, std::vector<int>> taxonomies;  // link indices
  std::vector<int> topological_order;                  // parents before children

  int dof() const { return static_cast<int>(joints.size()); }
  int link_index(const std::string& name) const;
  bool adjacent(int link_a, int link_b) const;
  VecX lower_limits() const;
  VecX upper_limits() const;
};

// Validates and finalizes a model assembled in code; throws InputError.
void finalize_gripper(GripperModel& model);

GripperModel parse_gripper_spec(const nlohmann::json& spec);
GripperModel load_gripper_spec(const std::filesystem::path& path);

struct WristPose {
  Vec3 translation = Vec3::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
};

struct Grasp {
  WristPose pose;
  VecX q;
  std::vector<int> active_contacts;  // indices into GripperModel::candidates
  VecX desired_torque;               // carried along, never optimized
};

struct GraspBatch {
  std::vector<Grasp> grasps;
  std::vector<Rng> rngs;  // one stream per grasp
};

struct ForwardKinematics {
  Eigen::Isometry3d wrist = Eigen::Isometry3d::Identity();
  std::vector<Eigen::Isometry3d> link_poses;
  std::vector<Vec3> joint_origins;  // world
  std::vector<Vec3> joint_axes;     // world, unit
  std::vector<Vec3> candidate_positions;
  std::vector<Vec3> candidate_normals;
};

ForwardKinematics forward_kinematics(const GripperModel& model, const WristPose& pose, const VecX& q);

// d(world point on `link`)/d(translation, rotation tangent, q): 3 x (6 + n_q).
// Rotation perturbations act on the left: R' = exp(delta) * R.
Eigen::MatrixXd point_jacobian(const GripperModel& model, const ForwardKinematics& fk, int link,
                               const Vec3& world_point);
// Same for a world direction attached to `link` (rotates only).
Eigen::MatrixXd direction_jacobian(const GripperModel& model, const ForwardKinematics& fk, int link,
                                   const Vec3& world_direction);

Eigen::MatrixXd fk_jacobian(const GripperModel& model, const WristPose& pose, const VecX& q, int candidate);

// Applies a tangent-space step (translation, rotation tangent) to a pose.
WristPose retract(const WristPose& pose, const Vec3& d_translation, const Vec3& d_rotation);

VecX clamp_to_limits(const GripperModel& model, const VecX& q);

std::vector<int> select_grasp_type_contacts(const GripperModel& model, const std::string& taxonomy);

struct InitConfig {
  std::string taxonomy = "power";
  int contact_count = 4;
};

// Draws one grasp: wrist on the inflated bounding sphere, palm z-axis aimed at
// a random surface point with uniform roll, q in the middle 60% of its range,
// and active contacts by farthest point sampling over the taxonomy pool.
Grasp initialize_grasp(const GripperModel& model, const ObjectModel& object, std::span<const int> pool,
                       int contact_count, Rng& rng);

GraspBatch initialize_grasps(const GripperModel& model, const ObjectModel& object, int n_seeds,
                             const InitConfig& config, std::uint64_t seed);

// Max distance from the wrist origin to any candidate or sphere surface at mid-range q.
double gripper_reach(const GripperModel& model);

struct ResampleResult {
  Grasp grasp;
  bool switched = false;
  bool pool_exhausted = false;  // pool has no spare candidate; grasp unchanged
};

ResampleResult resample_active_contacts(const Grasp& grasp, std::span<const int> pool, Rng& rng, double p_switch);

}  // namespace graspqp
