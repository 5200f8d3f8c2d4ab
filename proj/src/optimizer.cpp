#include "graspqp/optimizer.hpp"

#include <algorithm>
#include <ostream>

namespace graspqp {

void MalaConfig::validate() const {
  if (steps <= 0) throw std::invalid_argument("MALA steps must be positive");
  if (!(step_trans > 0 && step_rot > 0 && step_q > 0)) throw std::invalid_argument("step sizes must be positive");
  if (!(p_th > 0.0 && p_th <= 1.0)) throw std::invalid_argument("p_th must lie in (0, 1]");
  if (!(p_switch >= 0.0 && p_switch <= 1.0)) throw std::invalid_argument("p_switch must lie in [0, 1]");
  if (!(temperature_start >= 0.0 && temperature_end >= 0.0)) throw std::invalid_argument("temperatures must be >= 0");
  if (!(step_scale_end > 0.0)) throw std::invalid_argument("step_scale_end must be positive");
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("noise scale must be >= 0");
  if (n_reset < 0 || trace_stride < 0 || max_nonfinite <= 0) throw std::invalid_argument("bad MALA counters");
}

double MalaConfig::progress(int iteration, int start) const {
  const int span = steps - 1 - start;
  if (span <= 0) return 1.0;
  return std::clamp(static_cast<double>(iteration - start) / span, 0.0, 1.0);
}

double MalaConfig::base_temperature(double f) const {
  return temperature_start + f * (temperature_end - temperature_start);
}

double MalaConfig::step_scale(double f) const { return 1.0 + f * (step_scale_end - 1.0); }

MalaConfig plain_mala(MalaConfig config) {
  config.enable_resets = false;
  config.enable_adaptive_temp = false;
  return config;
}

EnergyStats compute_stats(std::span<const double> energies, std::span<const char> include) {
  EnergyStats s;
  double sum = 0.0;
  for (std::size_t i = 0; i < energies.size(); ++i) {
    if (!include.empty() && !include[i]) continue;
    sum += energies[i];
    ++s.count;
  }
  if (s.count == 0) return s;
  s.mean = sum / s.count;
  double var = 0.0;
  for (std::size_t i = 0; i < energies.size(); ++i) {
    if (!include.empty() && !include[i]) continue;
    var += (energies[i] - s.mean) * (energies[i] - s.mean);
  }
  s.stddev = std::sqrt(var / s.count);
  return s;
}

namespace {

double tail_probability(double energy, const EnergyStats& stats) {
  if (!(stats.stddev > 0.0)) return 0.5;
  return normal_cdf((energy - stats.mean) / stats.stddev);
}

}  // namespace

double adaptive_temperature(double energy, const EnergyStats& stats, double t_base) {
  return t_base * (1.0 + tail_probability(energy, stats));
}

bool mh_accept(double delta_e, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("mh_accept: temperature must be positive");
  if (delta_e <= 0.0) return true;
  return uniform01(rng) < std::exp(-delta_e / temperature);
}

std::vector<char> dynamic_reset(std::span<const double> energies, const EnergyStats& stats,
                                const MalaConfig& config, std::span<const char> include) {
  std::vector<char> mask(energies.size(), 0);
  if (!(stats.stddev > 0.0) || config.p_th >= 1.0) return mask;
  for (std::size_t i = 0; i < energies.size(); ++i) {
    if (!include.empty() && !include[i]) continue;
    const double phi = tail_probability(energies[i], stats);
    mask[i] = config.reset_tail == ResetTail::kHigh ? phi >= config.p_th : phi <= 1.0 - config.p_th;
  }
  return mask;
}

VecX langevin_delta(const VecX& grad, const VecX& eta, double temperature, double noise_scale, Rng& rng) {
  VecX delta(grad.size());
  for (Eigen::Index k = 0; k < grad.size(); ++k) {
    const double xi = standard_normal(rng);
    delta[k] = -eta[k] * grad[k] + noise_scale * std::sqrt(2.0 * eta[k] * temperature) * xi;
  }
  return delta;
}

void write_trace_csv(std::ostream& out, std::span<const TraceRow> rows) {
  out << "iteration,chain_id,e_fc,e_dis,e_pen,e_spen,e_joints,total,temperature,accepted,reset\n";
  const auto old_precision = out.precision(17);
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.chain << ',' << r.energy.e_fc << ',' << r.energy.e_dis << ',' << r.energy.e_pen
        << ',' << r.energy.e_spen << ',' << r.energy.e_joints << ',' << r.energy.total << ',' << r.temperature << ','
        << (r.accepted ? 1 : 0) << ',' << (r.reset ? 1 : 0) << '\n';
  }
  out.precision(old_precision);
}

GraspProblem::GraspProblem(const GripperModel& model, const ObjectModel& object, const EnergyWeights& weights,
                           const InitConfig& init)
    : model_(&model), object_(&object), weights_(weights), init_(init),
      pool_(select_grasp_type_contacts(model, init.taxonomy)) {
  weights_.validate();
}

Evaluated GraspProblem::evaluate(const Grasp& grasp, bool with_gradient) const {
  if (!with_gradient) return {total_energy(grasp, *object_, *model_, weights_), VecX()};
  EnergyGradient g = energy_gradient(grasp, *object_, *model_, weights_);
  return {std::move(g.energy), std::move(g.grad)};
}

VecX GraspProblem::step_sizes(const MalaConfig& config) const {
  VecX eta(6 + model_->dof());
  eta.head<3>().setConstant(config.step_trans);
  eta.segment<3>(3).setConstant(config.step_rot);
  for (int j = 0; j < model_->dof(); ++j) {
    // Prismatic joints move in meters, like the wrist translation.
    eta[6 + j] = model_->joints[j].type == JointType::kPrismatic ? config.step_trans : config.step_q;
  }
  return eta;
}

Grasp GraspProblem::retract(const Grasp& grasp, const VecX& delta) const {
  Grasp out = grasp;
  out.pose = graspqp::retract(grasp.pose, delta.head<3>(), delta.segment<3>(3));
  out.q = clamp_to_limits(*model_, grasp.q + delta.tail(model_->dof()));
  return out;
}

Grasp GraspProblem::resample(const Grasp& grasp, Rng& rng, const MalaConfig& config) const {
  return resample_active_contacts(grasp, pool_, rng, config.p_switch).grasp;
}

Grasp GraspProblem::initialize(int, Rng& rng) const {
  return initialize_grasp(*model_, *object_, pool_, init_.contact_count, rng);
}

Grasp langevin_propose(const GraspProblem& problem, const Grasp& grasp, const VecX& gradient,
                       const MalaConfig& config, double temperature, Rng& rng) {
  const VecX eta = problem.step_sizes(config);
  return problem.retract(grasp, langevin_delta(gradient, eta, temperature, config.noise_scale, rng));
}

}  // namespace graspqp
