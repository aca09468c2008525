// Experiment configuration: JSON round-trip, content hashing, and assembly of
// the model / invariant-set / controller pipeline behind one config file.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zmpc/closedloop.hpp"

namespace zmpc {

struct ExperimentConfig {
  // model
  CstrParameters cstr;
  double sample_time = 0.1;
  int integrator_substeps = 8;

  // bounds
  BoxSet state_bounds;
  BoxSet input_bounds;
  BoxSet disturbance_bounds;
  BoxSet target;

  // controller
  Variant variant = Variant::proposed;
  int horizon = 5;
  double c1 = 1e4;
  double c2 = 1e4;
  double economic_weight = 1.0;
  double gamma = 1.0;
  Vector tracked_mask;  // empty means derive from target vs state bounds
  bool shrink_lower = true;
  bool shrink_upper = true;
  SolverSettings solver;

  // invariant-set grid
  Eigen::VectorXi cis_cells;
  Eigen::VectorXi cis_inputs;
  std::string cache_dir = "cache";
  int verify_samples = 500;

  // run
  Vector x0;
  int steps = 100;
  std::vector<std::uint64_t> seeds;
  int abort_budget = 3;
  std::string output_dir = "out";
  DisturbanceMode disturbance_mode = DisturbanceMode::uniform_iid;
};

// The benchmark setup: canonical reactor, bounds, N = 5, c1 = c2 = 1e4.
ExperimentConfig default_config();

// Throws ConfigError with a field path on any structural or semantic problem.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Canonical serialization; parse(emit(c)) reproduces c exactly and emit is a
// fixed point, so the content hash below is stable.
std::string emit_config(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

// Everything derived from a config that a command might need. Members that a
// variant does not use stay unset.
struct Pipeline {
  SystemModel model;
  Vector tracked_mask;
  GriddedInvariantSet cis_actual;        // invariant set inside the actual target
  BoxSet terminal_actual;                // verified inner box of cis_actual
  std::optional<XdMaxResult> xd;         // worst one-step displacement estimate
  Vector shrinkage;                      // per-axis tightening applied to the target
  std::optional<BoxSet> modified_target;
  std::optional<GriddedInvariantSet> cis_modified;
  std::optional<BoxSet> terminal_modified;
  ZmpcConfig controller;                 // ready for solve_zmpc / simulate
};

// Grid sets are cached under cfg.cache_dir keyed by model and grid identity;
// pass use_cache = false to force recomputation.
Pipeline build_pipeline(const ExperimentConfig& cfg, bool use_cache = true);

}  // namespace zmpc
