#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "graspqp/pipeline.hpp"

using graspqp::InputError;
using nlohmann::json;

namespace {

// Flags that were given on the command line, as config-file keys.
struct FlagSet {
  json values = json::object();

  template <class T>
  void bind(CLI::App* app, const std::string& key, std::optional<T>& slot, const std::string& help) {
    app->add_option("--" + key, slot, help);
    setters.push_back([this, key, &slot] {
      if (slot) values[key] = *slot;
    });
  }
  void collect() {
    for (auto& s : setters) s();
  }
  std::vector<std::function<void()>> setters;
};

struct SynthFlags {
  std::optional<std::string> object, gripper, taxonomy, energy, optimizer, success, reset_tail;
  std::optional<int> seeds, steps, contacts, threads, trace_stride, n_reset, surface_samples;
  std::optional<double> friction, gamma_max, torque_weight, step_trans, step_rot, step_q, step_scale_end,
      temperature_start, temperature_end, p_th, p_switch, w_dis, w_pen, w_spen, w_joints, sdf_spacing, force,
      contact_tolerance, max_qp_failure_rate;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<double>> forces;
  std::optional<bool> resets, adaptive_temp, normalize_scale;
  std::optional<std::string> out;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grasp synthesis with a QP-based force-closure energy and MALA*"};
  app.set_version_flag("--version", graspqp::version_string());
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "optimize a batch of grasps and write dataset, trace and metrics");
  SynthFlags sf;
  FlagSet synth_flags;
  std::string config_path;
  synth->add_option("--config", config_path, "JSON config file; flags override its values")->check(CLI::ExistingFile);
  synth_flags.bind(synth, "object", sf.object, "object mesh (OBJ)");
  synth_flags.bind(synth, "gripper", sf.gripper, "gripper spec (JSON)");
  synth_flags.bind(synth, "taxonomy", sf.taxonomy, "power | pinch | precision");
  synth_flags.bind(synth, "seeds", sf.seeds, "number of grasps (chains)");
  synth_flags.bind(synth, "steps", sf.steps, "optimizer iterations");
  synth_flags.bind(synth, "energy", sf.energy,
                   "graspqp | graspqp-no-exp | dexgraspnet | gendexgrasp | constrained-ii | barrier");
  synth_flags.bind(synth, "optimizer", sf.optimizer, "mala | mala-star");
  synth_flags.bind(synth, "friction", sf.friction, "friction coefficient");
  synth_flags.bind(synth, "gamma-max", sf.gamma_max, "upper bound of the contact force magnitudes");
  synth_flags.bind(synth, "torque-weight", sf.torque_weight, "weight of the torque rows");
  synth_flags.bind(synth, "seed", sf.seed, "master seed");
  synth_flags.bind(synth, "out", sf.out, "output directory");
  synth_flags.bind(synth, "contacts", sf.contacts, "active contacts per grasp");
  synth_flags.bind(synth, "threads", sf.threads, "worker threads");
  synth_flags.bind(synth, "trace-stride", sf.trace_stride, "trace every k-th iteration, 0 disables");
  synth_flags.bind(synth, "n-reset", sf.n_reset, "iterations between dynamic resets");
  synth_flags.bind(synth, "surface-samples", sf.surface_samples, "object surface samples");
  synth_flags.bind(synth, "step-trans", sf.step_trans, "translation and prismatic step size");
  synth_flags.bind(synth, "step-rot", sf.step_rot, "rotation step size");
  synth_flags.bind(synth, "step-q", sf.step_q, "revolute joint step size");
  synth_flags.bind(synth, "step-scale-end", sf.step_scale_end, "final step-size fraction");
  synth_flags.bind(synth, "temperature-start", sf.temperature_start, "initial base temperature");
  synth_flags.bind(synth, "temperature-end", sf.temperature_end, "final base temperature");
  synth_flags.bind(synth, "p-th", sf.p_th, "reset threshold on the energy CDF");
  synth_flags.bind(synth, "p-switch", sf.p_switch, "contact switch probability");
  synth_flags.bind(synth, "reset-tail", sf.reset_tail, "high | low");
  synth_flags.bind(synth, "resets", sf.resets, "enable dynamic resets");
  synth_flags.bind(synth, "adaptive-temp", sf.adaptive_temp, "enable adaptive temperatures");
  synth_flags.bind(synth, "w-dis", sf.w_dis, "distance energy weight");
  synth_flags.bind(synth, "w-pen", sf.w_pen, "penetration energy weight");
  synth_flags.bind(synth, "w-spen", sf.w_spen, "self-penetration energy weight");
  synth_flags.bind(synth, "w-joints", sf.w_joints, "joint limit energy weight");
  synth_flags.bind(synth, "normalize-scale", sf.normalize_scale, "rescale the object to gripper size");
  synth_flags.bind(synth, "sdf-spacing", sf.sdf_spacing, "SDF grid spacing in meters, 0 for default");
  synth_flags.bind(synth, "force", sf.force, "disturbance force defining success");
  synth_flags.bind(synth, "forces", sf.forces, "disturbance levels reported in the metrics");
  synth_flags.bind(synth, "success", sf.success, "succ1 | succ3");
  synth_flags.bind(synth, "contact-tolerance", sf.contact_tolerance, "max |sdf| of a load-bearing contact");
  synth_flags.bind(synth, "max-qp-failure-rate", sf.max_qp_failure_rate,
                   "fraction of failed inner QPs above which the run fails");

  // metrics
  auto* metrics = app.add_subcommand("metrics", "recompute metrics of a stored dataset");
  std::string dataset_path, metrics_out, metrics_object;
  std::vector<double> metric_forces;
  metrics->add_option("--dataset", dataset_path, "dataset JSONL")->required()->check(CLI::ExistingFile);
  metrics->add_option("--forces", metric_forces, "disturbance force levels");
  metrics->add_option("--object", metrics_object, "override the dataset's object mesh");
  metrics->add_option("--out", metrics_out, "report path (stdout when omitted)");

  // heatmap
  auto* heatmap = app.add_subcommand("heatmap", "per-vertex contact heatmap of a stored dataset");
  std::string heat_dataset, heat_object, heat_out;
  heatmap->add_option("--dataset", heat_dataset, "dataset JSONL")->required()->check(CLI::ExistingFile);
  heatmap->add_option("--object", heat_object, "object mesh (OBJ)")->required()->check(CLI::ExistingFile);
  heatmap->add_option("--out", heat_out, "sidecar output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      graspqp::RunConfig config;
      if (!config_path.empty()) config = graspqp::load_run_config(config_path);
      synth_flags.collect();
      graspqp::apply_json(config, synth_flags.values);
      const auto result = graspqp::run_synthesis(config);
      const double rate = result.qp_failure_rate();
      std::cout << "wrote " << result.dataset.rows.size() << " grasps to " << config.out_dir.string()
                << " (succ1 " << result.metrics["succ1"].get<double>() << ", ugr "
                << result.metrics["ugr"].get<double>() << ")\n";
      if (rate > config.max_qp_failure_rate) {
        std::cerr << "error: inner QP failed on " << rate * 100.0 << "% of (chain, iteration) pairs\n";
        return 3;
      }
      if (result.qp_failures > 0) {
        std::cerr << "warning: inner QP failed on " << result.qp_failures << " (chain, iteration) pairs\n";
      }
      return 0;
    }
    if (metrics->parsed()) {
      const auto dataset = graspqp::read_dataset(dataset_path);
      const json report = graspqp::run_metrics(dataset, {metric_forces, metrics_object});
      if (metrics_out.empty()) {
        std::cout << report.dump(2) << '\n';
      } else {
        std::ofstream out(metrics_out);
        if (!out) throw InputError("cannot write " + metrics_out);
        out << report.dump(2) << '\n';
      }
      return 0;
    }
    if (heatmap->parsed()) {
      const auto dataset = graspqp::read_dataset(heat_dataset);
      if (dataset.rows.empty()) throw InputError("dataset has no grasps");
      graspqp::RunConfig config;
      if (dataset.header.contains("config")) graspqp::apply_json(config, dataset.header.at("config"));
      const auto model = graspqp::load_gripper_spec(config.gripper);
      graspqp::TriangleMesh mesh = graspqp::load_mesh(heat_object);
      if (config.normalize_scale) mesh = graspqp::normalize_object_scale(mesh);
      std::vector<graspqp::Grasp> grasps;
      for (const auto& r : dataset.rows) grasps.push_back(r.grasp);
      graspqp::save_heatmap(graspqp::contact_heatmap(grasps, mesh, model), heat_out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
