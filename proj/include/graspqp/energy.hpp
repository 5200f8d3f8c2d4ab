#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>

#include "graspqp/common.hpp"
#include "graspqp/geometry.hpp"
#include "graspqp/gripper.hpp"
#include "graspqp/wrench.hpp"

namespace graspqp {

enum class EnergyVariant { kGraspQp, kGraspQpNoExp, kDexGraspNet, kGenDexGrasp, kConstrainedII, kBarrier };

// Names as used on the command line: graspqp, graspqp-no-exp, dexgraspnet,
// gendexgrasp, constrained-ii, barrier.
EnergyVariant parse_energy_variant(std::string_view name);
std::string to_string(EnergyVariant variant);

enum class DistanceMode { kPlain, kNormalWeighted };

// GraspQP-family energies and GenDexGrasp use the normal-weighted distance,
// DexGraspNet the plain one.
DistanceMode distance_mode(EnergyVariant variant);

struct EnergyWeights {
  double w_dis = 100.0;
  double w_pen = 100.0;
  double w_spen = 10.0;
  double w_joints = 1.0;
  double mu = 0.2;
  double upper = 50.0;  // gamma upper bound
  double torque_weight = 5.0;
  EnergyVariant variant = EnergyVariant::kGraspQp;

  void validate() const;  // throws std::invalid_argument
};

struct EnergyBreakdown {
  double e_fc = 0.0;
  double e_dis = 0.0;
  double e_pen = 0.0;
  double e_spen = 0.0;
  double e_joints = 0.0;
  double total = 0.0;
  VecX gamma;
  double sigma_product = 0.0;
  bool qp_converged = true;
  bool nonsmooth = false;  // gradient taken at a kink (active-set change, zero residual, ...)
};

struct FcValue {
  double value = 0.0;
  double residual = 0.0;  // ||W gamma||
  VecX gamma;
  double sigma_product = 0.0;
  bool converged = true;
  bool nonsmooth = false;
  Mat6X d_w;  // dvalue/dW, filled when requested
};

// Product of the six singular values, 0 when rank(W) < 6. When `grad` is
// given it receives d(product)/dW.
double sigma_product(const Mat6X& W, Mat6X* grad = nullptr);

// ||W gamma*|| * exp(-prod sigma) with gamma* from the box QP on [1, upper].
FcValue e_fc_graspqp(const Mat6X& W, double upper, bool use_exp = true, bool want_gradient = false);
// ||W 1||, the plain column sum.
FcValue e_fc_dexgraspnet(const Mat6X& W, bool want_gradient = false);
// ||W alpha*|| * exp(-prod sigma) with alpha >= 0, sum(alpha) = N.
FcValue e_fc_constrained_ii(const Mat6X& W, bool want_gradient = false);
// ||W clamp(gamma_b)|| * exp(-prod sigma), gamma_b from the barrier program.
FcValue e_fc_barrier(const Mat6X& W, double upper, bool want_gradient = false);

// Contact-level entry points: build the wrench matrix and dispatch.
FcValue e_fc_graspqp(std::span<const ContactFrame> contacts, const EnergyWeights& weights);
FcValue e_fc_dexgraspnet(std::span<const ContactFrame> contacts, const EnergyWeights& weights);
FcValue e_fc_constrained_ii(std::span<const ContactFrame> contacts, const EnergyWeights& weights);

// Per-contact normal weight of the GenDexGrasp distance, exp(1 - cos).
inline double normal_distance_weight(double cos_angle) { return std::exp(1.0 - cos_angle); }

double e_dis(const Grasp& grasp, const ObjectModel& object, const GripperModel& model, DistanceMode mode);

struct RegularizerTerms {
  double e_pen = 0.0;
  double e_spen = 0.0;
  double e_joints = 0.0;
};
RegularizerTerms e_reg(const Grasp& grasp, const ObjectModel& object, const GripperModel& model);

EnergyBreakdown total_energy(const Grasp& grasp, const ObjectModel& object, const GripperModel& model,
                             const EnergyWeights& weights);

struct EnergyGradient {
  VecX grad;  // translation 3, rotation tangent 3, q n_q
  EnergyBreakdown energy;
};

EnergyGradient energy_gradient(const Grasp& grasp, const ObjectModel& object, const GripperModel& model,
                               const EnergyWeights& weights);

// Object-frame contact frames of the active contacts: point relative to the
// center of mass, normal from the SDF gradient at the contact.
std::vector<ContactFrame> active_contact_frames(const Grasp& grasp, const ObjectModel& object,
                                                const GripperModel& model);

}  // namespace graspqp
