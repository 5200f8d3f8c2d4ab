#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "graspqp/common.hpp"
#include "graspqp/energy.hpp"
#include "graspqp/geometry.hpp"
#include "graspqp/gripper.hpp"
#include "graspqp/wrench.hpp"

namespace graspqp {

struct DiscretizationConfig {
  double delta_r = 0.02;         // m
  double delta_phi_deg = 4.0;    // Euler angle bin
  double delta_q_deg = 1.15;     // joint bin
  int entropy_bins = 32;
  double position_range = 0.5;   // side of the CoM-centered cube used for position histograms

  void validate() const;
};

using GraspKey = std::vector<std::int64_t>;

// R = Rx(a) * Ry(b) * Rz(c).
Vec3 intrinsic_xyz_euler(const Mat3& R);

// Floor of position / delta_r, Euler angles / delta_phi and joints / delta_q.
GraspKey grasp_key(const Grasp& grasp, const DiscretizationConfig& config);

struct StabilityReport {
  std::array<bool, 6> per_axis{};  // +x, -x, +y, -y, +z, -z
  bool succ1 = false;  // some axis resisted in both directions
  bool succ3 = false;  // every axis resisted in both directions
};

struct GraspRecord {
  Grasp grasp;
  EnergyBreakdown energy;
  StabilityReport stability;
  bool success = false;
  GraspKey key;
};

// Successful records with distinct keys over all records.
double unique_grasp_rate(std::span<const GraspRecord> records, const DiscretizationConfig& config);

// (r, theta, phi) of the axis-angle vector; identity maps to (0, 0, 0).
Vec3 axis_angle_to_spherical(const Mat3& R);

// Shannon entropy (nats) of a histogram over [lo, hi]; values are clamped into range.
double histogram_entropy(std::span<const double> values, double lo, double hi, int bins);

struct EntropyReport {
  double q = 0.0;
  double pos = 0.0;
  double rot = 0.0;
  double total = 0.0;  // q/2 + (pos + rot)/2
  int samples = 0;
};

// Over successful records. Each block is the mean of its per-dimension entropies.
EntropyReport grasp_entropy(std::span<const GraspRecord> records, const GripperModel& model, const Vec3& com,
                            const DiscretizationConfig& config);

// Per grasp: max over surface samples and gripper spheres of max(0, r - |p - c|);
// the result is the mean over grasps.
double penetration_depth(std::span<const Grasp> grasps, const SurfaceSampleSet& surface, const GripperModel& model);

// Is there gamma in [0, upper] with W gamma + [F a; 0] = 0?
bool analytic_disturbance_check(const Mat6X& W, double upper, double force, const Vec3& axis);
bool analytic_disturbance_check(std::span<const ContactFrame> contacts, double mu, double upper,
                                double torque_weight, double force, const Vec3& axis);

struct SurrogateConfig {
  double mu = 0.2;
  double upper = 50.0;
  double torque_weight = 5.0;
  double contact_tolerance = 0.005;  // m; contacts farther from the surface carry no force
};

StabilityReport surrogate_stability(std::span<const ContactFrame> contacts, double force, const SurrogateConfig& config);

// Contacts of a grasp that lie within the tolerance of the object surface.
std::vector<ContactFrame> touching_contacts(const Grasp& grasp, const ObjectModel& object, const GripperModel& model,
                                            double tolerance);

// Per-vertex softmax of exp(-10 d(v, G)) for one grasp; sums to one.
VecX heatmap_weights(const Grasp& grasp, const TriangleMesh& mesh, const GripperModel& model);

// Mean of the per-grasp weights, max-normalized to [0, 1].
std::vector<float> contact_heatmap(std::span<const Grasp> grasps, const TriangleMesh& mesh, const GripperModel& model);

// Sidecar format: u32 vertex count, then f32 values, little-endian.
void save_heatmap(const std::vector<float>& values, const std::filesystem::path& path);
std::vector<float> load_heatmap(const std::filesystem::path& path);

}  // namespace graspqp
