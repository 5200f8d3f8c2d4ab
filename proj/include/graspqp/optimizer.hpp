#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <thread>
#include <vector>

#include "graspqp/common.hpp"
#include "graspqp/energy.hpp"
#include "graspqp/gripper.hpp"

namespace graspqp {

// Which tail of the fitted energy distribution gets re-initialized.
enum class ResetTail { kHigh, kLow };

struct MalaConfig {
  int steps = 7000;
  double temperature_start = 1e-2;  // linear decay to temperature_end
  double temperature_end = 1e-4;
  double step_trans = 1e-5;  // m, also used for prismatic joints
  double step_rot = 1e-4;    // rad
  double step_q = 1e-4;      // rad
  double step_scale_end = 0.01;  // step sizes shrink linearly to this fraction
  double noise_scale = 1.0;
  int n_reset = 500;
  double p_th = 0.8413;
  double p_switch = 0.25;
  bool enable_resets = true;
  bool enable_adaptive_temp = true;
  ResetTail reset_tail = ResetTail::kHigh;
  int threads = 1;
  int trace_stride = 1;  // record every k-th iteration, 0 disables the trace
  int max_nonfinite = 100;

  void validate() const;  // throws std::invalid_argument
  // Annealing progress in [0, 1] of a chain (re)started at `start`; a reset
  // chain runs the full schedule over the remaining iterations.
  double progress(int iteration, int start = 0) const;
  double base_temperature(double progress) const;
  double step_scale(double progress) const;
};

// Plain MALA: no resets, fixed temperature per iteration.
MalaConfig plain_mala(MalaConfig config);

struct EnergyStats {
  double mean = 0.0;
  double stddev = 0.0;  // population
  int count = 0;
};

// Statistics over the entries with include[i] set (all when include is empty).
EnergyStats compute_stats(std::span<const double> energies, std::span<const char> include = {});

// T_base * (1 + Phi((E - mean) / stddev)); Phi := 0.5 when stddev == 0.
double adaptive_temperature(double energy, const EnergyStats& stats, double t_base);

bool mh_accept(double delta_e, double temperature, Rng& rng);

// Mask of chains to re-initialize: Phi((E - mean)/stddev) >= p_th for the high
// tail, <= 1 - p_th for the low tail. No resets when stddev == 0 or p_th >= 1.
std::vector<char> dynamic_reset(std::span<const double> energies, const EnergyStats& stats,
                                const MalaConfig& config, std::span<const char> include = {});

// -eta * grad + noise_scale * sqrt(2 * eta * T) * xi, per coordinate.
VecX langevin_delta(const VecX& grad, const VecX& eta, double temperature, double noise_scale, Rng& rng);

struct Evaluated {
  EnergyBreakdown energy;
  VecX grad;
};

// What the sampler needs from a problem.
template <class P>
concept MalaProblem = requires(const P& p, const typename P::State& s, const VecX& v, Rng& rng, int chain,
                               const MalaConfig& cfg) {
  { p.evaluate(s, true) } -> std::same_as<Evaluated>;
  { p.step_sizes(cfg) } -> std::convertible_to<VecX>;
  { p.retract(s, v) } -> std::same_as<typename P::State>;
  { p.resample(s, rng, cfg) } -> std::same_as<typename P::State>;
  { p.initialize(chain, rng) } -> std::same_as<typename P::State>;
  { p.same_discrete(s, s) } -> std::convertible_to<bool>;
};

struct TraceRow {
  int iteration = 0;
  int chain = 0;
  EnergyBreakdown energy;
  double temperature = 0.0;
  bool accepted = false;
  bool reset = false;
};

void write_trace_csv(std::ostream& out, std::span<const TraceRow> rows);

struct ChainCounters {
  int accepted = 0;
  int rejected = 0;
  int resets = 0;
  int nonfinite_streak = 0;
  bool frozen = false;
};

template <class State>
struct ChainState {
  State state;
  EnergyBreakdown energy;
  Rng rng;
  double temperature = 0.0;  // last adaptive temperature, drives the next proposal's noise
  int schedule_start = 0;    // iteration of the last (re)initialization
  ChainCounters counters;
};

template <class State>
struct OptimizeResult {
  std::vector<ChainState<State>> chains;
  std::vector<TraceRow> trace;
  long qp_failures = 0;  // (chain, iteration) pairs with a non-converged inner QP
  long evaluations = 0;
};

namespace detail {

template <class F>
void parallel_for(int n, int threads, F&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
}

inline bool finite_energy(const EnergyBreakdown& e) { return std::isfinite(e.total); }

}  // namespace detail

// MALA* over a batch of chains. Each chain owns its RNG stream, so results do
// not depend on config.threads.
template <MalaProblem P>
OptimizeResult<typename P::State> optimize(const P& problem, std::vector<typename P::State> initial,
                                           std::vector<Rng> rngs, const MalaConfig& config) {
  using State = typename P::State;
  config.validate();
  if (initial.size() != rngs.size()) throw std::invalid_argument("optimize: one RNG stream per chain");
  const int n = static_cast<int>(initial.size());
  OptimizeResult<State> out;
  out.chains.resize(n);
  const VecX eta = problem.step_sizes(config);

  std::vector<VecX> cached_grad(n);
  std::vector<char> grad_valid(n, 0);
  detail::parallel_for(n, config.threads, [&](int i) {
    auto& c = out.chains[i];
    c.state = std::move(initial[i]);
    c.rng = std::move(rngs[i]);
    Evaluated ev = problem.evaluate(c.state, true);
    c.energy = ev.energy;
    cached_grad[i] = std::move(ev.grad);
    grad_valid[i] = 1;
  });
  out.evaluations += n;

  auto energies_and_mask = [&](std::vector<double>& energies, std::vector<char>& include) {
    for (int i = 0; i < n; ++i) {
      energies[i] = out.chains[i].energy.total;
      include[i] = !out.chains[i].counters.frozen && std::isfinite(energies[i]);
    }
  };

  std::vector<double> energies(n);
  std::vector<char> include(n);
  energies_and_mask(energies, include);
  {
    const EnergyStats stats = compute_stats(energies, include);
    const double t0 = config.base_temperature(0.0);
    for (int i = 0; i < n; ++i) {
      out.chains[i].temperature = config.enable_adaptive_temp ? adaptive_temperature(energies[i], stats, t0) : t0;
    }
  }
  if (config.trace_stride > 0) {
    for (int i = 0; i < n; ++i) out.trace.push_back({0, i, out.chains[i].energy, out.chains[i].temperature, false, false});
  }

  std::vector<State> proposals(n);
  std::vector<Evaluated> proposal_eval(n);
  std::vector<char> proposal_grad_fresh(n);

  for (int iter = 0; iter < config.steps; ++iter) {

    // Propose: contact resample, gradient, Langevin step, evaluate.
    detail::parallel_for(n, config.threads, [&](int i) {
      auto& c = out.chains[i];
      if (c.counters.frozen) return;
      State base = problem.resample(c.state, c.rng, config);
      VecX grad;
      const bool switched = !problem.same_discrete(base, c.state);
      if (switched || !grad_valid[i]) {
        grad = problem.evaluate(base, true).grad;
      } else {
        grad = cached_grad[i];
      }
      if (!grad.allFinite()) grad.setZero();
      const double eta_scale = config.step_scale(config.progress(iter, c.schedule_start));
      const VecX delta = langevin_delta(grad, eta * eta_scale, c.temperature, config.noise_scale, c.rng);
      proposals[i] = problem.retract(base, delta);
      proposal_eval[i] = problem.evaluate(proposals[i], true);
      proposal_grad_fresh[i] = switched ? 2 : 1;
    });
    for (int i = 0; i < n; ++i) {
      if (out.chains[i].counters.frozen) continue;
      out.evaluations += proposal_grad_fresh[i];
      if (!proposal_eval[i].energy.qp_converged) ++out.qp_failures;
    }

    // Batch statistics over the current chain energies.
    energies_and_mask(energies, include);
    const EnergyStats stats = compute_stats(energies, include);

    // Accept / reject.
    std::vector<char> accepted(n, 0);
    for (int i = 0; i < n; ++i) {
      auto& c = out.chains[i];
      if (c.counters.frozen) continue;
      const double t_base = config.base_temperature(config.progress(iter, c.schedule_start));
      const double t_i = config.enable_adaptive_temp ? adaptive_temperature(energies[i], stats, t_base) : t_base;
      c.temperature = t_i;
      const EnergyBreakdown& proposed = proposal_eval[i].energy;
      if (!detail::finite_energy(proposed)) {
        ++c.counters.rejected;
        if (++c.counters.nonfinite_streak >= config.max_nonfinite) c.counters.frozen = true;
        continue;
      }
      c.counters.nonfinite_streak = 0;
      const double delta = proposed.total - c.energy.total;
      if (!std::isfinite(c.energy.total) || mh_accept(delta, t_i, c.rng)) {
        c.state = std::move(proposals[i]);
        c.energy = proposed;
        cached_grad[i] = std::move(proposal_eval[i].grad);
        grad_valid[i] = 1;
        accepted[i] = 1;
        ++c.counters.accepted;
      } else {
        ++c.counters.rejected;
      }
    }

    // Periodic dynamic reset on the post-acceptance energies.
    std::vector<char> reset(n, 0);
    if (config.enable_resets && config.n_reset > 0 && (iter + 1) % config.n_reset == 0 && iter + 1 < config.steps) {
      energies_and_mask(energies, include);
      const EnergyStats post = compute_stats(energies, include);
      reset = dynamic_reset(energies, post, config, include);
      detail::parallel_for(n, config.threads, [&](int i) {
        if (!reset[i]) return;
        auto& c = out.chains[i];
        c.state = problem.initialize(i, c.rng);
        c.schedule_start = iter + 1;
        Evaluated ev = problem.evaluate(c.state, true);
        c.energy = ev.energy;
        cached_grad[i] = std::move(ev.grad);
        grad_valid[i] = 1;
        ++c.counters.resets;
      });
      for (int i = 0; i < n; ++i) out.evaluations += reset[i] ? 1 : 0;
    }

    // Row k holds the state after k steps; row 0 is the initialization.
    if (config.trace_stride > 0 && ((iter + 1) % config.trace_stride == 0 || iter + 1 == config.steps)) {
      for (int i = 0; i < n; ++i) {
        const auto& c = out.chains[i];
        out.trace.push_back({iter + 1, i, c.energy, c.temperature, accepted[i] != 0, reset[i] != 0});
      }
    }
  }
  return out;
}

// Grasp synthesis as a sampler problem: parameters are wrist translation,
// wrist rotation tangent and joint angles; active contacts are resampled as
// part of each proposal.
class GraspProblem {
 public:
  using State = Grasp;

  GraspProblem(const GripperModel& model, const ObjectModel& object, const EnergyWeights& weights,
               const InitConfig& init);

  Evaluated evaluate(const Grasp& grasp, bool with_gradient) const;
  VecX step_sizes(const MalaConfig& config) const;
  Grasp retract(const Grasp& grasp, const VecX& delta) const;
  Grasp resample(const Grasp& grasp, Rng& rng, const MalaConfig& config) const;
  Grasp initialize(int chain, Rng& rng) const;
  bool same_discrete(const Grasp& a, const Grasp& b) const { return a.active_contacts == b.active_contacts; }

  const std::vector<int>& pool() const { return pool_; }

 private:
  const GripperModel* model_;
  const ObjectModel* object_;
  EnergyWeights weights_;
  InitConfig init_;
  std::vector<int> pool_;
};

// Langevin proposal for one grasp (no contact resampling).
Grasp langevin_propose(const GraspProblem& problem, const Grasp& grasp, const VecX& gradient,
                       const MalaConfig& config, double temperature, Rng& rng);

}  // namespace graspqp
