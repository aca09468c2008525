// Disturbed closed-loop simulation, run metrics and the tightening-level sweep.
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "zmpc/cis.hpp"
#include "zmpc/ocp.hpp"

namespace zmpc {

enum class DisturbanceMode { uniform_iid, zero };

// Seeded i.i.d. uniform draws from the disturbance box; platform-independent
// given the seed (raw 53-bit mt19937_64 doubles, no distribution adapters).
class DisturbanceGenerator {
 public:
  DisturbanceGenerator(BoxSet bounds, std::uint64_t seed,
                       DisturbanceMode mode = DisturbanceMode::uniform_iid);
  Vector next();
  const BoxSet& bounds() const { return bounds_; }

 private:
  BoxSet bounds_;
  DisturbanceMode mode_;
  std::mt19937_64 rng_;
};

struct StepRecord {
  int step = 0;
  double time = 0.0;
  Vector x;  // plant state before applying u
  Vector u;  // first input of the horizon solution
  Vector w;  // disturbance realized over this step
  double zone_cost_actual = 0.0;    // wrt the untightened target
  double zone_cost_modified = 0.0;  // wrt the tracked target
  double econ_cost = 0.0;           // unweighted economic stage term
  double optimal_value = 0.0;       // V_N^0 reported by the solve
  SolveStatus status = SolveStatus::infeasible;
  Vector predicted_next;  // controller's one-step prediction of x
};

struct ClosedLoopRecord {
  std::vector<StepRecord> steps;
  Vector final_state;
  bool aborted = false;
  int abort_step = -1;
};

struct RunMetrics {
  double accumulated_zone_cost_actual = 0.0;
  double accumulated_economic_cost = 0.0;
  std::optional<int> first_entry_step;  // first state inside the actual target
  int violations_after_entry = 0;       // later states outside the actual target
  std::optional<double> avg_violation_magnitude;  // mean 1-norm residual, violating steps only
  int state_constraint_violations = 0;            // states outside the hard state bounds
  Vector max_abs_prediction_deviation;            // per-axis max |x(n+1) - predicted|
};

struct SimulateOptions {
  int steps = 100;
  int abort_budget = 3;  // consecutive infeasible solves tolerated before aborting
};

// Receding-horizon loop: solve from the true state with the w = 0 model, apply
// the first input to the disturbed plant. Warm starts shift the previous
// solution by one block, repeating the last input. The returned record marks
// aborted runs instead of throwing so partial trajectories stay inspectable;
// aborts cover persistent infeasibility, a solve whose every candidate rollout
// diverges, and a plant step that leaves the integrator's envelope.
ClosedLoopRecord simulate(const SystemModel& model, const ZmpcConfig& cfg, const Vector& x0,
                          DisturbanceGenerator& gen, const SimulateOptions& opt);

// Metrics over the state sequence x(0..S) (steps plus final state); stage costs
// accumulate over executed steps only.
RunMetrics compute_metrics(const ClosedLoopRecord& record, const ZoneCostSpec& actual_zone,
                           const BoxSet& state_bounds, const Vector& econ_coeff);

struct GammaSweepContext {
  BoxSet actual_target;
  BoxSet state_bounds;
  BoxSet input_bounds;
  BoxSet disturbance_bounds;
  Vector xd_max;
  Vector tracked_mask;
  bool shrink_lower = true;
  bool shrink_upper = true;
  Eigen::VectorXi cis_cells;
  Eigen::VectorXi cis_inputs;
  int verify_samples = 500;
  ZmpcConfig controller;  // variant, weights and solver settings; targets replaced per gamma
  Vector x0;
  int steps = 100;
  int abort_budget = 3;
  std::vector<std::uint64_t> seeds;
};

struct GammaSweepRow {
  double gamma = 0.0;
  bool setup_ok = false;
  std::string note;  // error condition name when the setup is infeasible
  BoxSet modified_target;
  int runs = 0;
  int aborted = 0;
  double mean_zone_cost_actual = 0.0;
  double mean_economic_cost = 0.0;
  double mean_violations_after_entry = 0.0;
  std::optional<double> mean_avg_violation_magnitude;
  double mean_first_entry_step = 0.0;
  double mean_state_violations = 0.0;
};

// Per tightening level: rebuild the tracked target and its terminal set, run
// every seed and average the metrics. Infeasible levels are flagged, not fatal.
std::vector<GammaSweepRow> gamma_sweep(const SystemModel& model, const GammaSweepContext& ctx,
                                       const std::vector<double>& gammas);

// Per-step trajectory table; canonical plant names for 2-state/1-input/2-noise
// models, generic x_i/u_i/w_i otherwise.
void write_trajectory_csv(const std::string& path, const ClosedLoopRecord& record);
void write_metrics_json(const std::string& path, const RunMetrics& metrics,
                        const ClosedLoopRecord& record);
void write_sweep_csv(const std::string& path, const std::vector<GammaSweepRow>& rows);

}  // namespace zmpc
