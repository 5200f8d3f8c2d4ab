#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "graspqp/energy.hpp"
#include "graspqp/metrics.hpp"
#include "graspqp/optimizer.hpp"

namespace graspqp {

// git describe of the source tree at build time.
std::string version_string();

enum class SuccessCriterion { kSucc1, kSucc3 };

struct RunConfig {
  std::filesystem::path object;
  std::filesystem::path gripper;
  std::string taxonomy = "power";
  int n_seeds = 32;
  int contact_count = 4;
  bool mala_star = true;  // false: plain MALA
  MalaConfig mala;
  EnergyWeights weights;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";

  bool normalize_scale = true;
  double sdf_spacing = 0.0;  // 0 picks the default for the mesh
  int surface_samples = 3000;

  // Surrogate evaluation of the final grasps.
  double success_force = 1.0;
  std::vector<double> force_levels{1.0, 2.0, 5.0, 10.0};
  SuccessCriterion success = SuccessCriterion::kSucc1;
  double contact_tolerance = 0.005;
  DiscretizationConfig discretization;

  double max_qp_failure_rate = 0.01;

  void validate() const;  // throws InputError
  MalaConfig effective_mala() const { return mala_star ? mala : plain_mala(mala); }
  SurrogateConfig surrogate() const;
};

// Every RunConfig field except out_dir, keyed like the command-line flags.
nlohmann::json to_json(const RunConfig& config);
// Overlays the keys present in `j` onto `config`; unknown keys are an error.
void apply_json(RunConfig& config, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Object as the synthesis run sees it (scale-normalized when requested).
ObjectModel load_object(const RunConfig& config);

struct StoredGrasp {
  int chain = 0;
  Grasp grasp;
  Grasp initial;
  EnergyBreakdown energy;
  std::vector<ContactFrame> contact_frames;  // touching contacts, object frame
  StabilityReport stability;
  GraspKey key;
};

nlohmann::json to_json(const StoredGrasp& row);
StoredGrasp stored_grasp_from_json(const nlohmann::json& j);

struct Dataset {
  nlohmann::json header;
  std::vector<StoredGrasp> rows;
};

// First line is {"header": {...}}, then one grasp per line.
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);

struct SynthesisResult {
  Dataset dataset;
  std::vector<TraceRow> trace;
  nlohmann::json metrics;
  long qp_failures = 0;
  long qp_solves = 0;
  double qp_failure_rate() const { return qp_solves ? static_cast<double>(qp_failures) / qp_solves : 0.0; }
};

// geometry -> initialization -> MALA(*) -> metrics. Pure: writes nothing.
SynthesisResult synthesize(const RunConfig& config);

// synthesize() plus dataset.jsonl, trace.csv and metrics.json in out_dir.
SynthesisResult run_synthesis(const RunConfig& config);

struct MetricsOptions {
  std::vector<double> force_levels;  // empty: those of the dataset header
  std::filesystem::path object;      // empty: the dataset's object
};

// Recomputes UGR, entropy, penetration and surrogate stability from stored
// rows without re-optimizing. Throws InputError on an empty dataset.
nlohmann::json run_metrics(const Dataset& dataset, const MetricsOptions& options);

}  // namespace graspqp
