#include "graspqp/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#ifndef GRASPQP_VERSION
#define GRASPQP_VERSION "unknown"
#endif

namespace graspqp {

using nlohmann::json;

std::string version_string() { return GRASPQP_VERSION; }

namespace {

constexpr std::array<const char*, 6> kAxisNames = {"+x", "-x", "+y", "-y", "+z", "-z"};

std::string success_name(SuccessCriterion c) { return c == SuccessCriterion::kSucc1 ? "succ1" : "succ3"; }

SuccessCriterion parse_success(const std::string& s) {
  if (s == "succ1") return SuccessCriterion::kSucc1;
  if (s == "succ3") return SuccessCriterion::kSucc3;
  throw InputError("success criterion must be succ1 or succ3, got '" + s + "'");
}

std::string reset_tail_name(ResetTail t) { return t == ResetTail::kHigh ? "high" : "low"; }

ResetTail parse_reset_tail(const std::string& s) {
  if (s == "high") return ResetTail::kHigh;
  if (s == "low") return ResetTail::kLow;
  throw InputError("reset tail must be high or low, got '" + s + "'");
}

using Setter = std::function<void(RunConfig&, const json&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"object", [](RunConfig& c, const json& v) { c.object = v.get<std::string>(); }},
      {"gripper", [](RunConfig& c, const json& v) { c.gripper = v.get<std::string>(); }},
      {"taxonomy", [](RunConfig& c, const json& v) { c.taxonomy = v.get<std::string>(); }},
      {"seeds", [](RunConfig& c, const json& v) { c.n_seeds = v.get<int>(); }},
      {"contacts", [](RunConfig& c, const json& v) { c.contact_count = v.get<int>(); }},
      {"optimizer",
       [](RunConfig& c, const json& v) {
         const auto s = v.get<std::string>();
         if (s != "mala" && s != "mala-star") throw InputError("optimizer must be mala or mala-star, got '" + s + "'");
         c.mala_star = s == "mala-star";
       }},
      {"seed", [](RunConfig& c, const json& v) { c.seed = v.get<std::uint64_t>(); }},
      {"out", [](RunConfig& c, const json& v) { c.out_dir = v.get<std::string>(); }},
      {"steps", [](RunConfig& c, const json& v) { c.mala.steps = v.get<int>(); }},
      {"temperature-start", [](RunConfig& c, const json& v) { c.mala.temperature_start = v.get<double>(); }},
      {"temperature-end", [](RunConfig& c, const json& v) { c.mala.temperature_end = v.get<double>(); }},
      {"step-trans", [](RunConfig& c, const json& v) { c.mala.step_trans = v.get<double>(); }},
      {"step-rot", [](RunConfig& c, const json& v) { c.mala.step_rot = v.get<double>(); }},
      {"step-q", [](RunConfig& c, const json& v) { c.mala.step_q = v.get<double>(); }},
      {"step-scale-end", [](RunConfig& c, const json& v) { c.mala.step_scale_end = v.get<double>(); }},
      {"noise-scale", [](RunConfig& c, const json& v) { c.mala.noise_scale = v.get<double>(); }},
      {"n-reset", [](RunConfig& c, const json& v) { c.mala.n_reset = v.get<int>(); }},
      {"p-th", [](RunConfig& c, const json& v) { c.mala.p_th = v.get<double>(); }},
      {"p-switch", [](RunConfig& c, const json& v) { c.mala.p_switch = v.get<double>(); }},
      {"resets", [](RunConfig& c, const json& v) { c.mala.enable_resets = v.get<bool>(); }},
      {"adaptive-temp", [](RunConfig& c, const json& v) { c.mala.enable_adaptive_temp = v.get<bool>(); }},
      {"reset-tail", [](RunConfig& c, const json& v) { c.mala.reset_tail = parse_reset_tail(v.get<std::string>()); }},
      {"threads", [](RunConfig& c, const json& v) { c.mala.threads = v.get<int>(); }},
      {"trace-stride", [](RunConfig& c, const json& v) { c.mala.trace_stride = v.get<int>(); }},
      {"energy", [](RunConfig& c, const json& v) { c.weights.variant = parse_energy_variant(v.get<std::string>()); }},
      {"friction", [](RunConfig& c, const json& v) { c.weights.mu = v.get<double>(); }},
      {"gamma-max", [](RunConfig& c, const json& v) { c.weights.upper = v.get<double>(); }},
      {"torque-weight", [](RunConfig& c, const json& v) { c.weights.torque_weight = v.get<double>(); }},
      {"w-dis", [](RunConfig& c, const json& v) { c.weights.w_dis = v.get<double>(); }},
      {"w-pen", [](RunConfig& c, const json& v) { c.weights.w_pen = v.get<double>(); }},
      {"w-spen", [](RunConfig& c, const json& v) { c.weights.w_spen = v.get<double>(); }},
      {"w-joints", [](RunConfig& c, const json& v) { c.weights.w_joints = v.get<double>(); }},
      {"normalize-scale", [](RunConfig& c, const json& v) { c.normalize_scale = v.get<bool>(); }},
      {"sdf-spacing", [](RunConfig& c, const json& v) { c.sdf_spacing = v.get<double>(); }},
      {"surface-samples", [](RunConfig& c, const json& v) { c.surface_samples = v.get<int>(); }},
      {"force", [](RunConfig& c, const json& v) { c.success_force = v.get<double>(); }},
      {"forces", [](RunConfig& c, const json& v) { c.force_levels = v.get<std::vector<double>>(); }},
      {"success", [](RunConfig& c, const json& v) { c.success = parse_success(v.get<std::string>()); }},
      {"contact-tolerance", [](RunConfig& c, const json& v) { c.contact_tolerance = v.get<double>(); }},
      {"delta-r", [](RunConfig& c, const json& v) { c.discretization.delta_r = v.get<double>(); }},
      {"delta-phi", [](RunConfig& c, const json& v) { c.discretization.delta_phi_deg = v.get<double>(); }},
      {"delta-q", [](RunConfig& c, const json& v) { c.discretization.delta_q_deg = v.get<double>(); }},
      {"entropy-bins", [](RunConfig& c, const json& v) { c.discretization.entropy_bins = v.get<int>(); }},
      {"position-range", [](RunConfig& c, const json& v) { c.discretization.position_range = v.get<double>(); }},
      {"max-qp-failure-rate", [](RunConfig& c, const json& v) { c.max_qp_failure_rate = v.get<double>(); }},
  };
  return table;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw InputError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json pose_json(const Grasp& g) {
  const auto& q = g.pose.rotation;
  return {{"t", vec_json(g.pose.translation)}, {"quat", json::array({q.w(), q.x(), q.y(), q.z()})}};
}

json grasp_state_json(const Grasp& g) {
  return {{"pose", pose_json(g)}, {"q", std::vector<double>(g.q.data(), g.q.data() + g.q.size())},
          {"contacts", g.active_contacts}};
}

Grasp grasp_from_json(const json& j) {
  Grasp g;
  const json& pose = j.at("pose");
  g.pose.translation = vec3_from(pose.at("t"));
  const auto quat = pose.at("quat").get<std::vector<double>>();
  if (quat.size() != 4) throw InputError("pose.quat must have 4 entries (w, x, y, z)");
  g.pose.rotation = Eigen::Quaterniond(quat[0], quat[1], quat[2], quat[3]);
  // Stored rows are already unit length; leave them bit-exact.
  if (std::abs(g.pose.rotation.norm() - 1.0) > 1e-12) g.pose.rotation.normalize();
  const auto q = j.at("q").get<std::vector<double>>();
  g.q = Eigen::Map<const VecX>(q.data(), static_cast<Eigen::Index>(q.size()));
  g.active_contacts = j.at("contacts").get<std::vector<int>>();
  g.desired_torque = VecX::Zero(g.q.size());
  return g;
}

json energies_json(const EnergyBreakdown& e) {
  return {{"e_fc", e.e_fc},       {"e_dis", e.e_dis}, {"e_pen", e.e_pen},
          {"e_spen", e.e_spen},   {"e_joints", e.e_joints}, {"total", e.total},
          {"sigma_product", e.sigma_product}, {"qp_converged", e.qp_converged}, {"nonsmooth", e.nonsmooth}};
}

EnergyBreakdown energies_from_json(const json& j) {
  EnergyBreakdown e;
  e.e_fc = j.at("e_fc").get<double>();
  e.e_dis = j.at("e_dis").get<double>();
  e.e_pen = j.at("e_pen").get<double>();
  e.e_spen = j.at("e_spen").get<double>();
  e.e_joints = j.at("e_joints").get<double>();
  e.total = j.at("total").get<double>();
  e.sigma_product = j.value("sigma_product", 0.0);
  e.qp_converged = j.value("qp_converged", true);
  e.nonsmooth = j.value("nonsmooth", false);
  return e;
}

json stability_json(const StabilityReport& s) {
  json axes = json::object();
  for (int a = 0; a < 6; ++a) axes[kAxisNames[a]] = s.per_axis[a];
  return {{"succ1", s.succ1}, {"succ3", s.succ3}, {"per_axis", axes}};
}

StabilityReport stability_from_json(const json& j) {
  StabilityReport s;
  s.succ1 = j.at("succ1").get<bool>();
  s.succ3 = j.at("succ3").get<bool>();
  const json& axes = j.at("per_axis");
  for (int a = 0; a < 6; ++a) s.per_axis[a] = axes.at(kAxisNames[a]).get<bool>();
  return s;
}

bool is_success(const StabilityReport& s, SuccessCriterion c) { return c == SuccessCriterion::kSucc1 ? s.succ1 : s.succ3; }

// Mesh, center of mass and surface samples; the SDF only when asked for.
ObjectModel object_for(const RunConfig& config, bool with_sdf) {
  TriangleMesh mesh = load_mesh(config.object);
  if (config.normalize_scale) mesh = normalize_object_scale(mesh);
  if (with_sdf) return make_object_model(std::move(mesh), config.sdf_spacing, config.surface_samples, config.seed);
  ObjectModel obj;
  obj.mesh = std::move(mesh);
  validate_mesh(obj.mesh);
  obj.com = center_of_mass(obj.mesh);
  for (const auto& v : obj.mesh.vertices) obj.circumradius = std::max(obj.circumradius, (v - obj.com).norm());
  obj.surface = surface_sample(obj.mesh, config.surface_samples, config.seed);
  return obj;
}

json metrics_report(const RunConfig& config, std::span<const StoredGrasp> rows, const ObjectModel& object,
                    const GripperModel& model, std::span<const double> forces) {
  if (rows.empty()) throw InputError("dataset has no grasps");
  const SurrogateConfig sc = config.surrogate();

  auto records_at = [&](double force) {
    std::vector<GraspRecord> records;
    records.reserve(rows.size());
    for (const auto& r : rows) {
      GraspRecord rec;
      rec.grasp = r.grasp;
      rec.energy = r.energy;
      rec.stability = surrogate_stability(r.contact_frames, force, sc);
      rec.success = is_success(rec.stability, config.success);
      rec.key = r.key;
      records.push_back(std::move(rec));
    }
    return records;
  };
  auto fraction = [&](const std::vector<GraspRecord>& recs, bool StabilityReport::*field) {
    long count = 0;
    for (const auto& r : recs) count += r.stability.*field ? 1 : 0;
    return static_cast<double>(count) / static_cast<double>(recs.size());
  };

  const auto records = records_at(config.success_force);
  const EntropyReport ent = grasp_entropy(records, model, object.com, config.discretization);
  std::vector<Grasp> grasps;
  grasps.reserve(rows.size());
  for (const auto& r : rows) grasps.push_back(r.grasp);

  json levels = json::array();
  for (double f : forces) {
    const auto recs = records_at(f);
    levels.push_back({{"force", f},
                      {"succ1", fraction(recs, &StabilityReport::succ1)},
                      {"succ3", fraction(recs, &StabilityReport::succ3)},
                      {"ugr", unique_grasp_rate(recs, config.discretization)}});
  }

  json cfg = to_json(config);
  return {{"object", config.object.string()},
          {"gripper", config.gripper.string()},
          {"taxonomy", config.taxonomy},
          {"n_grasps", rows.size()},
          {"ugr", unique_grasp_rate(records, config.discretization)},
          {"entropy", {{"q", ent.q}, {"pos", ent.pos}, {"rot", ent.rot}, {"total", ent.total}}},
          {"penetration_m", penetration_depth(grasps, object.surface, model)},
          {"succ1", fraction(records, &StabilityReport::succ1)},
          {"succ3", fraction(records, &StabilityReport::succ3)},
          {"force_levels", levels},
          {"meta",
           {{"version", version_string()},
            {"seed", config.seed},
            {"config", cfg},
            {"success_definition", "analytic LP surrogate (" + success_name(config.success) +
                                       ") at force " + std::to_string(config.success_force) +
                                       " in normalized wrench units; no physics simulation"}}}};
}

std::string header_comment(const json& header) { return "# " + header.dump(); }

}  // namespace

void RunConfig::validate() const {
  if (object.empty() || !std::filesystem::exists(object)) throw InputError("object file not found: " + object.string());
  if (gripper.empty() || !std::filesystem::exists(gripper)) {
    throw InputError("gripper spec not found: " + gripper.string());
  }
  if (n_seeds < 1) throw InputError("seeds must be >= 1");
  if (contact_count < 1) throw InputError("contacts must be >= 1");
  if (surface_samples < 1) throw InputError("surface-samples must be >= 1");
  if (!(sdf_spacing >= 0.0)) throw InputError("sdf-spacing must be >= 0");
  if (!(success_force >= 0.0)) throw InputError("force must be >= 0");
  for (double f : force_levels) {
    if (!(f >= 0.0)) throw InputError("force levels must be >= 0");
  }
  if (!(contact_tolerance >= 0.0)) throw InputError("contact-tolerance must be >= 0");
  if (!(max_qp_failure_rate >= 0.0)) throw InputError("max-qp-failure-rate must be >= 0");
  try {
    mala.validate();
    weights.validate();
    discretization.validate();
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
}

SurrogateConfig RunConfig::surrogate() const {
  SurrogateConfig sc;
  sc.mu = weights.mu;
  sc.upper = weights.upper;
  sc.torque_weight = weights.torque_weight;
  sc.contact_tolerance = contact_tolerance;
  return sc;
}

json to_json(const RunConfig& c) {
  return {{"object", c.object.string()},
          {"gripper", c.gripper.string()},
          {"taxonomy", c.taxonomy},
          {"seeds", c.n_seeds},
          {"contacts", c.contact_count},
          {"optimizer", c.mala_star ? "mala-star" : "mala"},
          {"seed", c.seed},
          {"steps", c.mala.steps},
          {"temperature-start", c.mala.temperature_start},
          {"temperature-end", c.mala.temperature_end},
          {"step-trans", c.mala.step_trans},
          {"step-rot", c.mala.step_rot},
          {"step-q", c.mala.step_q},
          {"step-scale-end", c.mala.step_scale_end},
          {"noise-scale", c.mala.noise_scale},
          {"n-reset", c.mala.n_reset},
          {"p-th", c.mala.p_th},
          {"p-switch", c.mala.p_switch},
          {"resets", c.mala.enable_resets},
          {"adaptive-temp", c.mala.enable_adaptive_temp},
          {"reset-tail", reset_tail_name(c.mala.reset_tail)},
          {"threads", c.mala.threads},
          {"trace-stride", c.mala.trace_stride},
          {"energy", to_string(c.weights.variant)},
          {"friction", c.weights.mu},
          {"gamma-max", c.weights.upper},
          {"torque-weight", c.weights.torque_weight},
          {"w-dis", c.weights.w_dis},
          {"w-pen", c.weights.w_pen},
          {"w-spen", c.weights.w_spen},
          {"w-joints", c.weights.w_joints},
          {"normalize-scale", c.normalize_scale},
          {"sdf-spacing", c.sdf_spacing},
          {"surface-samples", c.surface_samples},
          {"force", c.success_force},
          {"forces", c.force_levels},
          {"success", success_name(c.success)},
          {"contact-tolerance", c.contact_tolerance},
          {"delta-r", c.discretization.delta_r},
          {"delta-phi", c.discretization.delta_phi_deg},
          {"delta-q", c.discretization.delta_q_deg},
          {"entropy-bins", c.discretization.entropy_bins},
          {"position-range", c.discretization.position_range},
          {"max-qp-failure-rate", c.max_qp_failure_rate}};
}

void apply_json(RunConfig& config, const json& j) {
  if (!j.is_object()) throw InputError("config must be a JSON object");
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw InputError("unknown config key '" + key + "'");
    try {
      it->second(config, value);
    } catch (const json::exception& e) {
      throw InputError("config key '" + key + "': " + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError("config " + path.string() + ": " + e.what());
  }
  RunConfig config;
  apply_json(config, j);
  return config;
}

ObjectModel load_object(const RunConfig& config) { return object_for(config, true); }

json to_json(const StoredGrasp& row) {
  json frames = json::array();
  for (const auto& f : row.contact_frames) frames.push_back({{"p", vec_json(f.point)}, {"n", vec_json(f.normal)}});
  json j = grasp_state_json(row.grasp);
  j["chain"] = row.chain;
  j["contact_frames"] = frames;
  j["energies"] = energies_json(row.energy);
  j["stability"] = stability_json(row.stability);
  j["key"] = row.key;
  j["initial"] = grasp_state_json(row.initial);
  return j;
}

StoredGrasp stored_grasp_from_json(const json& j) {
  try {
    StoredGrasp r;
    r.chain = j.value("chain", 0);
    r.grasp = grasp_from_json(j);
    if (j.contains("initial")) r.initial = grasp_from_json(j.at("initial"));
    for (const auto& f : j.at("contact_frames")) r.contact_frames.push_back({vec3_from(f.at("p")), vec3_from(f.at("n"))});
    r.energy = energies_from_json(j.at("energies"));
    r.stability = stability_from_json(j.at("stability"));
    r.key = j.at("key").get<GraspKey>();
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("dataset row does not match the schema: ") + e.what());
  }
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << json{{"header", dataset.header}}.dump() << '\n';
  for (const auto& r : dataset.rows) out << to_json(r).dump() << '\n';
  if (!out) throw InputError("write failed: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open dataset " + path.string());
  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (j.contains("header")) {
      ds.header = j["header"];
      continue;
    }
    ds.rows.push_back(stored_grasp_from_json(j));
  }
  if (ds.header.is_null()) throw InputError(path.string() + ": missing header line");
  return ds;
}

SynthesisResult synthesize(const RunConfig& config) {
  config.validate();
  const GripperModel model = load_gripper_spec(config.gripper);
  const ObjectModel object = load_object(config);
  const InitConfig init{config.taxonomy, config.contact_count};

  GraspBatch batch = initialize_grasps(model, object, config.n_seeds, init, config.seed);
  const std::vector<Grasp> initial = batch.grasps;
  const GraspProblem problem(model, object, config.weights, init);
  const MalaConfig mala = config.effective_mala();
  auto opt = optimize(problem, std::move(batch.grasps), std::move(batch.rngs), mala);

  SynthesisResult result;
  result.qp_failures = opt.qp_failures;
  result.qp_solves = static_cast<long>(config.n_seeds) * mala.steps;
  result.trace = std::move(opt.trace);

  json header = {{"version", version_string()}, {"seed", config.seed}, {"config", to_json(config)}};
  result.dataset.header = header;
  const SurrogateConfig sc = config.surrogate();
  for (int i = 0; i < config.n_seeds; ++i) {
    const auto& chain = opt.chains[i];
    StoredGrasp row;
    row.chain = i;
    row.grasp = chain.state;
    row.initial = initial[i];
    row.energy = chain.energy;
    row.contact_frames = touching_contacts(chain.state, object, model, config.contact_tolerance);
    row.stability = surrogate_stability(row.contact_frames, config.success_force, sc);
    row.key = grasp_key(chain.state, config.discretization);
    result.dataset.rows.push_back(std::move(row));
  }
  result.metrics = metrics_report(config, result.dataset.rows, object, model, config.force_levels);
  result.metrics["meta"]["qp_failures"] = result.qp_failures;
  result.metrics["meta"]["qp_failure_rate"] = result.qp_failure_rate();
  return result;
}

SynthesisResult run_synthesis(const RunConfig& config) {
  SynthesisResult result = synthesize(config);
  std::filesystem::create_directories(config.out_dir);
  write_dataset(config.out_dir / "dataset.jsonl", result.dataset);
  {
    std::ofstream out(config.out_dir / "trace.csv", std::ios::binary);
    if (!out) throw InputError("cannot write trace.csv");
    out << header_comment(result.dataset.header) << '\n';
    write_trace_csv(out, result.trace);
  }
  {
    std::ofstream out(config.out_dir / "metrics.json", std::ios::binary);
    if (!out) throw InputError("cannot write metrics.json");
    out << result.metrics.dump(2) << '\n';
  }
  return result;
}

json run_metrics(const Dataset& dataset, const MetricsOptions& options) {
  if (dataset.rows.empty()) throw InputError("dataset has no grasps");
  RunConfig config;
  if (dataset.header.contains("config")) apply_json(config, dataset.header.at("config"));
  if (!options.object.empty()) config.object = options.object;
  const std::vector<double> forces = options.force_levels.empty() ? config.force_levels : options.force_levels;
  for (double f : forces) {
    if (!(f >= 0.0)) throw InputError("force levels must be >= 0");
  }
  if (!std::filesystem::exists(config.object)) throw InputError("object file not found: " + config.object.string());
  const GripperModel model = load_gripper_spec(config.gripper);
  for (const auto& r : dataset.rows) {
    if (r.grasp.q.size() != model.dof()) throw InputError("dataset joint count does not match the gripper");
    for (int idx : r.grasp.active_contacts) {
      if (idx < 0 || idx >= static_cast<int>(model.candidates.size())) {
        throw InputError("dataset contact index out of range for the gripper");
      }
    }
  }
  const ObjectModel object = object_for(config, false);
  json report = metrics_report(config, dataset.rows, object, model, forces);
  report["meta"]["source_header"] = dataset.header;
  return report;
}

}  // namespace graspqp
