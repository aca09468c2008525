#include "zmpc/closedloop.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "zmpc/sets.hpp"

namespace zmpc {
namespace {

double u64_to_unit(std::uint64_t bits) { return double(bits >> 11) * 0x1.0p-53; }

void write_double(std::ostream& os, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

}  // namespace

DisturbanceGenerator::DisturbanceGenerator(BoxSet bounds, std::uint64_t seed, DisturbanceMode mode)
    : bounds_(std::move(bounds)), mode_(mode), rng_(seed) {
  require_valid(bounds_, "disturbance bounds");
}

Vector DisturbanceGenerator::next() {
  const Index d = bounds_.dim();
  Vector w(d);
  if (mode_ == DisturbanceMode::zero) {
    w.setZero();
    return w;
  }
  for (Index i = 0; i < d; ++i) {
    const double t = u64_to_unit(rng_());
    w[i] = bounds_.lb[i] + t * (bounds_.ub[i] - bounds_.lb[i]);
  }
  return w;
}

ClosedLoopRecord simulate(const SystemModel& model, const ZmpcConfig& cfg, const Vector& x0,
                          DisturbanceGenerator& gen, const SimulateOptions& opt) {
  if (opt.steps < 1) throw ConfigError("simulate: steps must be positive");
  if (gen.bounds().dim() != model.disturbance_dim)
    throw ConfigError("simulate: disturbance generator dimension mismatch");
  ZoneCostSpec actual_zone{cfg.zone_cost.c1, cfg.zone_cost.c2, cfg.actual_target};

  ClosedLoopRecord record;
  record.steps.reserve(size_t(opt.steps));
  Vector x = x0;
  std::optional<std::vector<Vector>> warm;
  int consecutive_infeasible = 0;
  for (int n = 0; n < opt.steps; ++n) {
    std::optional<OcpSolution> solved;
    try {
      solved = solve_zmpc(model, cfg, x, warm);
    } catch (const NonFiniteState&) {
      // Every candidate rollout left the integrator's envelope; there is no
      // input to apply, so the loop cannot advance from this state.
      record.aborted = true;
      record.abort_step = n;
      break;
    }
    const OcpSolution& sol = *solved;
    if (sol.status == SolveStatus::infeasible)
      ++consecutive_infeasible;
    else
      consecutive_infeasible = 0;
    if (consecutive_infeasible > opt.abort_budget) {
      record.aborted = true;
      record.abort_step = n;
      break;
    }

    StepRecord row;
    row.step = n;
    row.time = double(n) * model.sample_time;
    row.x = x;
    row.u = sol.inputs.front();
    row.w = gen.next();
    row.zone_cost_actual = zone_cost(x, actual_zone);
    row.zone_cost_modified = zone_cost(x, cfg.zone_cost);
    row.econ_cost = cfg.econ_coeff.dot(x);
    row.optimal_value = sol.objective_value;
    row.status = sol.status;
    row.predicted_next = sol.predicted_states[1];

    try {
      x = integrate_step(model, x, row.u, row.w);
    } catch (const NonFiniteState&) {
      // The disturbed plant diverged under the applied input. Keep the step
      // that triggered it and the last finite state so metrics stay computable.
      record.steps.push_back(std::move(row));
      record.aborted = true;
      record.abort_step = n;
      break;
    }
    record.steps.push_back(std::move(row));

    // Shift by one block and repeat the last input as the next warm start.
    std::vector<Vector> shifted(sol.inputs.begin() + 1, sol.inputs.end());
    shifted.push_back(sol.inputs.back());
    warm = std::move(shifted);
  }
  record.final_state = x;
  return record;
}

RunMetrics compute_metrics(const ClosedLoopRecord& record, const ZoneCostSpec& actual_zone,
                           const BoxSet& state_bounds, const Vector& econ_coeff) {
  RunMetrics m;
  const Index nx = record.final_state.size();
  m.max_abs_prediction_deviation = Vector::Zero(nx);

  std::vector<Vector> states;
  states.reserve(record.steps.size() + 1);
  for (const StepRecord& row : record.steps) states.push_back(row.x);
  states.push_back(record.final_state);

  for (const StepRecord& row : record.steps) {
    m.accumulated_zone_cost_actual += zone_cost(row.x, actual_zone);
    m.accumulated_economic_cost += econ_coeff.dot(row.x);
  }

  double violation_sum = 0.0;
  for (size_t n = 0; n < states.size(); ++n) {
    const Vector r_target = actual_zone.target.residual(states[n]);
    const bool inside = r_target.maxCoeff() == 0.0;
    if (inside && !m.first_entry_step) m.first_entry_step = int(n);
    if (m.first_entry_step && int(n) > *m.first_entry_step && !inside) {
      ++m.violations_after_entry;
      violation_sum += r_target.sum();
    }
    if (state_bounds.residual(states[n]).maxCoeff() > 0.0) ++m.state_constraint_violations;
  }
  if (m.violations_after_entry > 0)
    m.avg_violation_magnitude = violation_sum / double(m.violations_after_entry);

  for (size_t n = 0; n < record.steps.size(); ++n) {
    const Vector dev = (states[n + 1] - record.steps[n].predicted_next).cwiseAbs();
    m.max_abs_prediction_deviation = m.max_abs_prediction_deviation.cwiseMax(dev);
  }
  return m;
}

std::vector<GammaSweepRow> gamma_sweep(const SystemModel& model, const GammaSweepContext& ctx,
                                       const std::vector<double>& gammas) {
  std::vector<GammaSweepRow> rows;
  rows.reserve(gammas.size());
  const bool needs_terminal = ctx.controller.variant != Variant::no_terminal;
  for (double gamma : gammas) {
    GammaSweepRow row;
    row.gamma = gamma;
    try {
      const ShrinkageSpec shrink = make_shrinkage(gamma, ctx.tracked_mask, ctx.xd_max,
                                                  ctx.shrink_lower, ctx.shrink_upper);
      row.modified_target = shrink_target(ctx.actual_target, shrink);

      ZmpcConfig cfg = ctx.controller;
      cfg.actual_target = ctx.actual_target;
      cfg.zone_cost.target = row.modified_target;
      cfg.state_bounds = ctx.state_bounds;
      cfg.input_bounds = ctx.input_bounds;
      cfg.terminal_set.reset();
      if (needs_terminal) {
        const GriddedInvariantSet cis = compute_cis(model, row.modified_target, ctx.input_bounds,
                                                    ctx.cis_cells, ctx.cis_inputs);
        cfg.terminal_set = inner_box(cis, model, ctx.input_bounds, ctx.verify_samples);
      }
      row.setup_ok = true;

      const ZoneCostSpec actual_zone{cfg.zone_cost.c1, cfg.zone_cost.c2, ctx.actual_target};
      double sum_entry = 0.0, sum_avg_mag = 0.0;
      int runs_with_violations = 0, completed = 0;
      for (std::uint64_t seed : ctx.seeds) {
        DisturbanceGenerator gen(ctx.disturbance_bounds, seed);
        const ClosedLoopRecord rec =
            simulate(model, cfg, ctx.x0, gen, SimulateOptions{ctx.steps, ctx.abort_budget});
        ++row.runs;
        if (rec.aborted) {
          ++row.aborted;
          continue;
        }
        const RunMetrics m = compute_metrics(rec, actual_zone, ctx.state_bounds, cfg.econ_coeff);
        ++completed;
        row.mean_zone_cost_actual += m.accumulated_zone_cost_actual;
        row.mean_economic_cost += m.accumulated_economic_cost;
        row.mean_violations_after_entry += double(m.violations_after_entry);
        row.mean_state_violations += double(m.state_constraint_violations);
        sum_entry += m.first_entry_step ? double(*m.first_entry_step) : double(ctx.steps);
        if (m.avg_violation_magnitude) {
          sum_avg_mag += *m.avg_violation_magnitude;
          ++runs_with_violations;
        }
      }
      if (completed > 0) {
        row.mean_zone_cost_actual /= completed;
        row.mean_economic_cost /= completed;
        row.mean_violations_after_entry /= completed;
        row.mean_state_violations /= completed;
        row.mean_first_entry_step = sum_entry / completed;
      }
      if (runs_with_violations > 0)
        row.mean_avg_violation_magnitude = sum_avg_mag / runs_with_violations;
    } catch (const EmptyModifiedSet& e) {
      row.setup_ok = false;
      row.note = std::string("empty modified target: ") + e.what();
    } catch (const EmptyInvariantSet& e) {
      row.setup_ok = false;
      row.note = std::string("empty invariant set: ") + e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_trajectory_csv(const std::string& path, const ClosedLoopRecord& record) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  Index nx = 0, nu = 0, nw = 0;
  if (!record.steps.empty()) {
    nx = record.steps.front().x.size();
    nu = record.steps.front().u.size();
    nw = record.steps.front().w.size();
  }
  const bool cstr_shape = nx == 2 && nu == 1 && nw == 2;
  os << "step,time_min";
  if (cstr_shape) {
    os << ",C_A,T,T_c,w_CAf,w_Tf";
  } else {
    for (Index i = 0; i < nx; ++i) os << ",x_" << i;
    for (Index i = 0; i < nu; ++i) os << ",u_" << i;
    for (Index i = 0; i < nw; ++i) os << ",w_" << i;
  }
  os << ",zone_cost_actual,zone_cost_modified,econ_cost,V_N0,solver_status\n";
  for (const StepRecord& row : record.steps) {
    os << row.step << ",";
    write_double(os, row.time);
    for (Index i = 0; i < nx; ++i) {
      os << ",";
      write_double(os, row.x[i]);
    }
    for (Index i = 0; i < nu; ++i) {
      os << ",";
      write_double(os, row.u[i]);
    }
    for (Index i = 0; i < nw; ++i) {
      os << ",";
      write_double(os, row.w[i]);
    }
    os << ",";
    write_double(os, row.zone_cost_actual);
    os << ",";
    write_double(os, row.zone_cost_modified);
    os << ",";
    write_double(os, row.econ_cost);
    os << ",";
    write_double(os, row.optimal_value);
    os << "," << to_string(row.status) << "\n";
  }
}

void write_metrics_json(const std::string& path, const RunMetrics& metrics,
                        const ClosedLoopRecord& record) {
  nlohmann::ordered_json j;
  j["steps_executed"] = record.steps.size();
  j["aborted"] = record.aborted;
  if (record.aborted) j["abort_step"] = record.abort_step;
  j["final_state"] = std::vector<double>(record.final_state.begin(), record.final_state.end());
  j["accumulated_zone_cost_actual"] = metrics.accumulated_zone_cost_actual;
  j["accumulated_economic_cost"] = metrics.accumulated_economic_cost;
  if (metrics.first_entry_step)
    j["first_entry_step"] = *metrics.first_entry_step;
  else
    j["first_entry_step"] = nullptr;
  j["violations_after_entry"] = metrics.violations_after_entry;
  if (metrics.avg_violation_magnitude)
    j["avg_violation_magnitude"] = *metrics.avg_violation_magnitude;
  else
    j["avg_violation_magnitude"] = nullptr;
  j["state_constraint_violations"] = metrics.state_constraint_violations;
  j["max_abs_prediction_deviation"] = std::vector<double>(
      metrics.max_abs_prediction_deviation.begin(), metrics.max_abs_prediction_deviation.end());
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

void write_sweep_csv(const std::string& path, const std::vector<GammaSweepRow>& rows) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  Index nx = 0;
  for (const GammaSweepRow& row : rows)
    if (row.setup_ok) nx = row.modified_target.dim();
  os << "gamma,setup_ok,note";
  for (Index i = 0; i < nx; ++i) os << ",target_lb_" << i;
  for (Index i = 0; i < nx; ++i) os << ",target_ub_" << i;
  os << ",runs,aborted,mean_zone_cost_actual,mean_economic_cost,mean_violations_after_entry,"
        "mean_avg_violation_magnitude,mean_first_entry_step,mean_state_violations\n";
  for (const GammaSweepRow& row : rows) {
    write_double(os, row.gamma);
    os << "," << (row.setup_ok ? 1 : 0) << "," << row.note;
    for (Index i = 0; i < nx; ++i) {
      os << ",";
      if (row.setup_ok) write_double(os, row.modified_target.lb[i]);
    }
    for (Index i = 0; i < nx; ++i) {
      os << ",";
      if (row.setup_ok) write_double(os, row.modified_target.ub[i]);
    }
    os << "," << row.runs << "," << row.aborted << ",";
    write_double(os, row.mean_zone_cost_actual);
    os << ",";
    write_double(os, row.mean_economic_cost);
    os << ",";
    write_double(os, row.mean_violations_after_entry);
    os << ",";
    if (row.mean_avg_violation_magnitude) write_double(os, *row.mean_avg_violation_magnitude);
    os << ",";
    write_double(os, row.mean_first_entry_step);
    os << ",";
    write_double(os, row.mean_state_violations);
    os << "\n";
  }
}

}  // namespace zmpc
