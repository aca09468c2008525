// Receding-horizon zone-tracking optimal control problem and its solver.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zmpc/dynamics.hpp"
#include "zmpc/sets.hpp"
#include "zmpc/types.hpp"

namespace zmpc {

enum class Variant {
  nominal,                          // tracks the actual target, terminal from it
  proposed,                         // tracks the tightened target, terminal from it
  original_zone_modified_terminal,  // tracks the actual target, tightened terminal
  no_terminal                       // tracks the tightened target, no terminal constraint
};

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

enum class SolveStatus { optimal, feasible_suboptimal, infeasible };

std::string to_string(SolveStatus s);

struct SolverSettings {
  int max_iterations = 60;            // inner descent iterations per penalty round
  double constraint_tolerance = 1e-6;
  double stationarity_tolerance = 1e-6;  // final coordinate-step resolution, input units
  double penalty_initial = 1e4;
  double penalty_growth = 10.0;
  double penalty_max = 1e10;
  int multistart_count = 5;
  std::uint64_t seed = 0;
};

struct ZmpcConfig {
  Variant variant = Variant::proposed;
  int horizon = 5;
  ZoneCostSpec zone_cost;      // weights and the tracked target box
  BoxSet actual_target;        // untightened zone, used for logging and metrics
  double economic_weight = 1.0;
  Vector econ_coeff;           // l_e(x) = econ_coeff . x
  BoxSet state_bounds;
  BoxSet input_bounds;
  std::optional<BoxSet> terminal_set;
  SolverSettings solver;
};

// Zone-distance cost of x plus the weighted economic term.
double stage_cost(const Vector& x, const Vector& u, const ZmpcConfig& cfg);

struct CandidateInfo {
  double objective = 0.0;
  double violation = 0.0;
  double input_norm = 0.0;
  bool polished = false;
};

struct OcpSolution {
  std::vector<Vector> inputs;            // horizon inputs, all inside the input box
  std::vector<Vector> predicted_states;  // horizon+1 states, single-shooting consistent
  double objective_value = 0.0;
  double max_constraint_violation = 0.0;
  SolveStatus status = SolveStatus::infeasible;

  struct Diagnostics {
    int penalty_rounds = 0;
    long objective_evaluations = 0;
    std::vector<CandidateInfo> candidates;  // every start evaluated, raw and polished
  } diagnostics;
};

// Single-shooting exact-penalty solve over the stacked input vector. Starts from
// the warm start (plus a terminal-witness repaired copy), a constant-input scan
// and seeded random sequences; raw starts stay in the candidate pool so the
// returned objective never exceeds the cost of any feasible start.
OcpSolution solve_zmpc(const SystemModel& model, const ZmpcConfig& cfg, const Vector& x0,
                       const std::optional<std::vector<Vector>>& warm_start = std::nullopt);

// V_N^0 estimate at x: solve_zmpc with widened multistart.
double evaluate_value_function(const SystemModel& model, const ZmpcConfig& cfg, const Vector& x);

}  // namespace zmpc
