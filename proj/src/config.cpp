#include "zmpc/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "zmpc/detail/codec.hpp"

namespace zmpc {
namespace {

using nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config." + path + ": " + what);
}

const ordered_json& at(const ordered_json& j, const std::string& path, const std::string& key) {
  if (!j.is_object()) fail(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) fail(path + "." + key, "missing");
  return *it;
}

double num(const ordered_json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

int integer(const ordered_json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<int>();
}

bool boolean(const ordered_json& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "expected a boolean");
  return j.get<bool>();
}

std::string str(const ordered_json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

Vector vec(const ordered_json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of numbers");
  Vector v(Index(j.size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = num(j[size_t(i)], path);
  return v;
}

Eigen::VectorXi ivec(const ordered_json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of integers");
  Eigen::VectorXi v(Index(j.size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = integer(j[size_t(i)], path);
  return v;
}

BoxSet box(const ordered_json& j, const std::string& path) {
  BoxSet b;
  b.lb = vec(at(j, path, "lb"), path + ".lb");
  b.ub = vec(at(j, path, "ub"), path + ".ub");
  if (b.lb.size() != b.ub.size()) fail(path, "lb and ub differ in length");
  if (!b.valid()) fail(path, "lb exceeds ub on some axis");
  return b;
}

ordered_json to_json(const Vector& v) {
  return ordered_json(std::vector<double>(v.begin(), v.end()));
}

ordered_json to_json(const Eigen::VectorXi& v) {
  return ordered_json(std::vector<int>(v.begin(), v.end()));
}

ordered_json to_json(const BoxSet& b) {
  ordered_json j;
  j["lb"] = to_json(b.lb);
  j["ub"] = to_json(b.ub);
  return j;
}

std::string mode_name(DisturbanceMode m) {
  return m == DisturbanceMode::uniform_iid ? "uniform_iid" : "zero";
}

DisturbanceMode mode_from(const std::string& name, const std::string& path) {
  if (name == "uniform_iid") return DisturbanceMode::uniform_iid;
  if (name == "zero") return DisturbanceMode::zero;
  fail(path, "unknown disturbance mode '" + name + "'");
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.state_bounds = BoxSet{Vector{{0.0, 345.0}}, Vector{{1.0, 355.0}}};
  c.input_bounds = BoxSet{Vector{{285.0}}, Vector{{315.0}}};
  c.disturbance_bounds = BoxSet{Vector{{-0.1, -2.0}}, Vector{{0.1, 2.0}}};
  c.target = BoxSet{Vector{{0.0, 348.0}}, Vector{{1.0, 352.0}}};
  c.tracked_mask = Vector{{0.0, 1.0}};
  c.cis_cells = Eigen::VectorXi{{80, 80}};
  c.cis_inputs = Eigen::VectorXi{{61}};
  c.x0 = Vector{{0.12, 355.0}};
  c.seeds = {1};
  return c;
}

ExperimentConfig parse_config(const std::string& json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }

  ExperimentConfig c;
  const ordered_json& model = at(j, "", "model");
  if (str(at(model, "model", "type"), "model.type") != "cstr")
    fail("model.type", "only 'cstr' is supported");
  const ordered_json& pj = at(model, "model", "parameters");
  c.cstr.q = num(at(pj, "model.parameters", "q"), "model.parameters.q");
  c.cstr.V = num(at(pj, "model.parameters", "V"), "model.parameters.V");
  c.cstr.rho = num(at(pj, "model.parameters", "rho"), "model.parameters.rho");
  c.cstr.Cp = num(at(pj, "model.parameters", "Cp"), "model.parameters.Cp");
  c.cstr.dH = num(at(pj, "model.parameters", "dH"), "model.parameters.dH");
  c.cstr.UA = num(at(pj, "model.parameters", "UA"), "model.parameters.UA");
  c.cstr.k0 = num(at(pj, "model.parameters", "k0"), "model.parameters.k0");
  c.cstr.E_over_R = num(at(pj, "model.parameters", "E_over_R"), "model.parameters.E_over_R");
  c.cstr.CAf_nominal = num(at(pj, "model.parameters", "CAf_nominal"), "model.parameters.CAf_nominal");
  c.cstr.Tf_nominal = num(at(pj, "model.parameters", "Tf_nominal"), "model.parameters.Tf_nominal");
  c.sample_time = num(at(model, "model", "sample_time"), "model.sample_time");
  c.integrator_substeps = integer(at(model, "model", "integrator_substeps"),
                                  "model.integrator_substeps");
  if (c.sample_time <= 0) fail("model.sample_time", "must be positive");
  if (c.integrator_substeps < 1) fail("model.integrator_substeps", "must be at least 1");

  const ordered_json& bounds = at(j, "", "bounds");
  c.state_bounds = box(at(bounds, "bounds", "state"), "bounds.state");
  c.input_bounds = box(at(bounds, "bounds", "input"), "bounds.input");
  c.disturbance_bounds = box(at(bounds, "bounds", "disturbance"), "bounds.disturbance");
  c.target = box(at(bounds, "bounds", "target"), "bounds.target");
  if (c.state_bounds.dim() != 2) fail("bounds.state", "cstr model has 2 states");
  if (c.input_bounds.dim() != 1) fail("bounds.input", "cstr model has 1 input");
  if (c.disturbance_bounds.dim() != 2) fail("bounds.disturbance", "cstr model has 2 disturbances");
  if (c.target.dim() != c.state_bounds.dim()) fail("bounds.target", "dimension mismatch");

  const ordered_json& ctrl = at(j, "", "controller");
  c.variant = variant_from_string(str(at(ctrl, "controller", "variant"), "controller.variant"));
  c.horizon = integer(at(ctrl, "controller", "horizon"), "controller.horizon");
  c.c1 = num(at(ctrl, "controller", "c1"), "controller.c1");
  c.c2 = num(at(ctrl, "controller", "c2"), "controller.c2");
  c.economic_weight = num(at(ctrl, "controller", "economic_weight"), "controller.economic_weight");
  c.gamma = num(at(ctrl, "controller", "gamma"), "controller.gamma");
  if (ctrl.contains("tracked_mask") && !ctrl["tracked_mask"].is_null())
    c.tracked_mask = vec(ctrl["tracked_mask"], "controller.tracked_mask");
  c.shrink_lower = boolean(at(ctrl, "controller", "shrink_lower"), "controller.shrink_lower");
  c.shrink_upper = boolean(at(ctrl, "controller", "shrink_upper"), "controller.shrink_upper");
  if (c.horizon < 1) fail("controller.horizon", "must be at least 1");
  if (c.c1 < 0 || c.c2 < 0) fail("controller.c1", "zone weights must be nonnegative");
  if (c.gamma < 0) fail("controller.gamma", "must be nonnegative");
  if (c.tracked_mask.size() != 0 && c.tracked_mask.size() != c.state_bounds.dim())
    fail("controller.tracked_mask", "dimension mismatch");

  const ordered_json& sj = at(ctrl, "controller", "solver");
  c.solver.max_iterations = integer(at(sj, "controller.solver", "max_iterations"),
                                    "controller.solver.max_iterations");
  c.solver.constraint_tolerance = num(at(sj, "controller.solver", "constraint_tolerance"),
                                      "controller.solver.constraint_tolerance");
  c.solver.stationarity_tolerance = num(at(sj, "controller.solver", "stationarity_tolerance"),
                                        "controller.solver.stationarity_tolerance");
  c.solver.penalty_initial = num(at(sj, "controller.solver", "penalty_initial"),
                                 "controller.solver.penalty_initial");
  c.solver.penalty_growth = num(at(sj, "controller.solver", "penalty_growth"),
                                "controller.solver.penalty_growth");
  c.solver.penalty_max = num(at(sj, "controller.solver", "penalty_max"),
                             "controller.solver.penalty_max");
  c.solver.multistart_count = integer(at(sj, "controller.solver", "multistart_count"),
                                      "controller.solver.multistart_count");
  c.solver.seed = std::uint64_t(integer(at(sj, "controller.solver", "seed"),
                                        "controller.solver.seed"));

  const ordered_json& cis = at(j, "", "cis");
  c.cis_cells = ivec(at(cis, "cis", "cells_per_axis"), "cis.cells_per_axis");
  c.cis_inputs = ivec(at(cis, "cis", "inputs_per_axis"), "cis.inputs_per_axis");
  c.cache_dir = str(at(cis, "cis", "cache_dir"), "cis.cache_dir");
  c.verify_samples = integer(at(cis, "cis", "verify_samples"), "cis.verify_samples");
  if (c.cis_cells.size() != c.state_bounds.dim()) fail("cis.cells_per_axis", "dimension mismatch");
  if (c.cis_inputs.size() != c.input_bounds.dim()) fail("cis.inputs_per_axis", "dimension mismatch");
  if (c.cis_cells.minCoeff() < 1) fail("cis.cells_per_axis", "cells must be positive");
  if (c.cis_inputs.minCoeff() < 1) fail("cis.inputs_per_axis", "input counts must be positive");
  if (c.verify_samples < 1) fail("cis.verify_samples", "must be positive");

  const ordered_json& run = at(j, "", "run");
  c.x0 = vec(at(run, "run", "x0"), "run.x0");
  c.steps = integer(at(run, "run", "steps"), "run.steps");
  const ordered_json& seeds = at(run, "run", "seeds");
  if (!seeds.is_array() || seeds.empty()) fail("run.seeds", "expected a nonempty array");
  c.seeds.clear();
  for (size_t i = 0; i < seeds.size(); ++i)
    c.seeds.push_back(std::uint64_t(integer(seeds[i], "run.seeds")));
  c.abort_budget = integer(at(run, "run", "abort_budget"), "run.abort_budget");
  c.output_dir = str(at(run, "run", "output_dir"), "run.output_dir");
  c.disturbance_mode =
      mode_from(str(at(run, "run", "disturbance_mode"), "run.disturbance_mode"),
                "run.disturbance_mode");
  if (c.x0.size() != c.state_bounds.dim()) fail("run.x0", "dimension mismatch");
  if (c.steps < 1) fail("run.steps", "must be positive");
  if (c.abort_budget < 0) fail("run.abort_budget", "must be nonnegative");
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string emit_config(const ExperimentConfig& c) {
  ordered_json j;
  ordered_json model;
  model["type"] = "cstr";
  ordered_json pj;
  pj["q"] = c.cstr.q;
  pj["V"] = c.cstr.V;
  pj["rho"] = c.cstr.rho;
  pj["Cp"] = c.cstr.Cp;
  pj["dH"] = c.cstr.dH;
  pj["UA"] = c.cstr.UA;
  pj["k0"] = c.cstr.k0;
  pj["E_over_R"] = c.cstr.E_over_R;
  pj["CAf_nominal"] = c.cstr.CAf_nominal;
  pj["Tf_nominal"] = c.cstr.Tf_nominal;
  model["parameters"] = pj;
  model["sample_time"] = c.sample_time;
  model["integrator_substeps"] = c.integrator_substeps;
  j["model"] = model;

  ordered_json bounds;
  bounds["state"] = to_json(c.state_bounds);
  bounds["input"] = to_json(c.input_bounds);
  bounds["disturbance"] = to_json(c.disturbance_bounds);
  bounds["target"] = to_json(c.target);
  j["bounds"] = bounds;

  ordered_json ctrl;
  ctrl["variant"] = to_string(c.variant);
  ctrl["horizon"] = c.horizon;
  ctrl["c1"] = c.c1;
  ctrl["c2"] = c.c2;
  ctrl["economic_weight"] = c.economic_weight;
  ctrl["gamma"] = c.gamma;
  if (c.tracked_mask.size() != 0)
    ctrl["tracked_mask"] = to_json(c.tracked_mask);
  else
    ctrl["tracked_mask"] = nullptr;
  ctrl["shrink_lower"] = c.shrink_lower;
  ctrl["shrink_upper"] = c.shrink_upper;
  ordered_json sj;
  sj["max_iterations"] = c.solver.max_iterations;
  sj["constraint_tolerance"] = c.solver.constraint_tolerance;
  sj["stationarity_tolerance"] = c.solver.stationarity_tolerance;
  sj["penalty_initial"] = c.solver.penalty_initial;
  sj["penalty_growth"] = c.solver.penalty_growth;
  sj["penalty_max"] = c.solver.penalty_max;
  sj["multistart_count"] = c.solver.multistart_count;
  sj["seed"] = std::int64_t(c.solver.seed);
  ctrl["solver"] = sj;
  j["controller"] = ctrl;

  ordered_json cis;
  cis["cells_per_axis"] = to_json(c.cis_cells);
  cis["inputs_per_axis"] = to_json(c.cis_inputs);
  cis["cache_dir"] = c.cache_dir;
  cis["verify_samples"] = c.verify_samples;
  j["cis"] = cis;

  ordered_json run;
  run["x0"] = to_json(c.x0);
  run["steps"] = c.steps;
  std::vector<std::int64_t> seeds;
  for (std::uint64_t s : c.seeds) seeds.push_back(std::int64_t(s));
  run["seeds"] = seeds;
  run["abort_budget"] = c.abort_budget;
  run["output_dir"] = c.output_dir;
  run["disturbance_mode"] = mode_name(c.disturbance_mode);
  j["run"] = run;

  return j.dump(2) + "\n";
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  return detail::fnv1a(emit_config(cfg));
}

namespace {

GriddedInvariantSet cached_cis(const SystemModel& model, const BoxSet& region, const BoxSet& U,
                               const Eigen::VectorXi& cells, const Eigen::VectorXi& inputs,
                               const std::string& cache_dir, bool use_cache) {
  std::ostringstream key;
  key << detail::hex64(model_hash(model));
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "|%.17g", v);
    key << buf;
  };
  for (Index i = 0; i < region.dim(); ++i) {
    put(region.lb[i]);
    put(region.ub[i]);
  }
  for (Index i = 0; i < U.dim(); ++i) {
    put(U.lb[i]);
    put(U.ub[i]);
  }
  for (Index i = 0; i < cells.size(); ++i) key << "|" << cells[i];
  for (Index i = 0; i < inputs.size(); ++i) key << "|" << inputs[i];

  const std::string path =
      cache_dir + "/grid-" + detail::hex64(detail::fnv1a(key.str())) + ".json";
  if (use_cache && std::filesystem::exists(path)) {
    try {
      GriddedInvariantSet cached = load_grid_set(path);
      if (cached.model_id == model_hash(model)) return cached;
    } catch (const ConfigError&) {
      // Fall through to recompute; a stale or damaged cache never poisons a run.
    }
  }
  GriddedInvariantSet fresh = compute_cis(model, region, U, cells, inputs);
  if (use_cache) {
    std::error_code ec;
    std::filesystem::create_directories(cache_dir, ec);
    if (!ec) save_grid_set(path, fresh);
  }
  return fresh;
}

}  // namespace

Pipeline build_pipeline(const ExperimentConfig& cfg, bool use_cache) {
  Pipeline p;
  p.model = make_cstr_model(cfg.cstr, cfg.sample_time, cfg.integrator_substeps);
  p.tracked_mask = cfg.tracked_mask.size() != 0
                       ? cfg.tracked_mask
                       : derive_tracked_mask(cfg.state_bounds, cfg.target);

  p.cis_actual = cached_cis(p.model, cfg.target, cfg.input_bounds, cfg.cis_cells, cfg.cis_inputs,
                            cfg.cache_dir, use_cache);
  p.terminal_actual = inner_box(p.cis_actual, p.model, cfg.input_bounds, cfg.verify_samples);

  if (cfg.variant != Variant::nominal) {
    p.xd = estimate_xd_max(p.model, p.cis_actual.bounding_box(), cfg.input_bounds,
                           cfg.disturbance_bounds, p.tracked_mask);
    const ShrinkageSpec shrink = make_shrinkage(cfg.gamma, p.tracked_mask, p.xd->xd_max,
                                                cfg.shrink_lower, cfg.shrink_upper);
    p.shrinkage = shrink.s;
    p.modified_target = shrink_target(cfg.target, shrink);
    if (cfg.variant == Variant::proposed ||
        cfg.variant == Variant::original_zone_modified_terminal) {
      p.cis_modified = cached_cis(p.model, *p.modified_target, cfg.input_bounds, cfg.cis_cells,
                                  cfg.cis_inputs, cfg.cache_dir, use_cache);
      p.terminal_modified = inner_box(*p.cis_modified, p.model, cfg.input_bounds,
                                      cfg.verify_samples);
    }
  }

  ZmpcConfig ctrl;
  ctrl.variant = cfg.variant;
  ctrl.horizon = cfg.horizon;
  ctrl.zone_cost.c1 = cfg.c1;
  ctrl.zone_cost.c2 = cfg.c2;
  ctrl.actual_target = cfg.target;
  ctrl.economic_weight = cfg.economic_weight;
  ctrl.econ_coeff = Vector::Zero(p.model.state_dim);
  ctrl.econ_coeff[0] = 1.0;  // economic objective drives the reactant concentration down
  ctrl.state_bounds = cfg.state_bounds;
  ctrl.input_bounds = cfg.input_bounds;
  ctrl.solver = cfg.solver;
  switch (cfg.variant) {
    case Variant::nominal:
      ctrl.zone_cost.target = cfg.target;
      ctrl.terminal_set = p.terminal_actual;
      break;
    case Variant::proposed:
      ctrl.zone_cost.target = *p.modified_target;
      ctrl.terminal_set = *p.terminal_modified;
      break;
    case Variant::original_zone_modified_terminal:
      ctrl.zone_cost.target = cfg.target;
      ctrl.terminal_set = *p.terminal_modified;
      break;
    case Variant::no_terminal:
      ctrl.zone_cost.target = *p.modified_target;
      ctrl.terminal_set.reset();
      break;
  }
  p.controller = ctrl;
  return p;
}

}  // namespace zmpc
