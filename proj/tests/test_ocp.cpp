#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "zmpc/ocp.hpp"

using namespace zmpc;

namespace {

// x+ = a x + u, one state, one input.
SystemModel scalar_model(double a) {
  Matrix A(1, 1), B(1, 1), E(1, 1);
  A << a;
  B << 1.0;
  E << 0.0;
  return make_discrete_linear_model(A, B, E);
}

ZmpcConfig scalar_config(int horizon, const BoxSet& target, double c1, double c2) {
  ZmpcConfig cfg;
  cfg.variant = Variant::no_terminal;
  cfg.horizon = horizon;
  cfg.zone_cost = ZoneCostSpec{c1, c2, target};
  cfg.actual_target = target;
  cfg.economic_weight = 0.0;
  cfg.econ_coeff = Vector::Zero(1);
  cfg.state_bounds = BoxSet{Vector{{-100.0}}, Vector{{100.0}}};
  cfg.input_bounds = BoxSet{Vector{{-1.0}}, Vector{{1.0}}};
  return cfg;
}

const BoxSet kPointTarget{Vector{{0.0}}, Vector{{0.0}}};

}  // namespace

TEST_CASE("variant names round-trip") {
  for (Variant v : {Variant::nominal, Variant::proposed, Variant::original_zone_modified_terminal,
                    Variant::no_terminal}) {
    CHECK(variant_from_string(to_string(v)) == v);
  }
  CHECK_THROWS_AS(variant_from_string("bogus"), ConfigError);
}

TEST_CASE("stage cost composes zone and economic terms") {
  ZmpcConfig cfg = scalar_config(2, BoxSet{Vector{{348.0}}, Vector{{352.0}}}, 1e4, 1e4);
  cfg.economic_weight = 1.0;
  cfg.econ_coeff = Vector{{1.0}};
  const double got = stage_cost(Vector{{353.0}}, Vector{{0.0}}, cfg);
  CHECK(got == doctest::Approx(1e4 * 1.0 + 1e4 * 1.0 + 353.0).epsilon(1e-12));
  cfg.economic_weight = 0.0;
  CHECK(stage_cost(Vector{{350.0}}, Vector{{0.0}}, cfg) == 0.0);
}

TEST_CASE("two-step steering to a point target matches the enumeration oracle") {
  // Objective sums stage costs of the current and next predicted state, so the
  // first input absorbs the whole distance and the optimum value is l(x0).
  SystemModel m = scalar_model(1.0);
  ZmpcConfig cfg = scalar_config(2, kPointTarget, 1.0, 0.0);
  const Vector x0{{0.5}};
  // Independent check on a fine input grid.
  double best = 1e300, best_u = 0.0;
  for (int k = 0; k <= 40000; ++k) {
    const double u = -1.0 + 2.0 * k / 40000.0;
    const double val = std::abs(0.5) + std::abs(0.5 + u);
    if (val < best) {
      best = val;
      best_u = u;
    }
  }
  CHECK(best == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(best_u == doctest::Approx(-0.5).epsilon(1e-9));
  const OcpSolution sol = solve_zmpc(m, cfg, x0);
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.objective_value == doctest::Approx(0.5).epsilon(1e-4));
  CHECK(sol.inputs[0][0] == doctest::Approx(-0.5).epsilon(1e-3));
}

TEST_CASE("smooth quadratic problem is solved to high accuracy") {
  SystemModel m = scalar_model(0.8);
  ZmpcConfig cfg = scalar_config(3, kPointTarget, 0.0, 1.0);
  const OcpSolution sol = solve_zmpc(m, cfg, Vector{{0.9}});
  // Optimal play zeroes the state immediately: u0 = -0.72, then u = 0.
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.objective_value == doctest::Approx(0.81).epsilon(1e-8));
  CHECK(sol.inputs[0][0] == doctest::Approx(-0.72).epsilon(1e-5));
  CHECK(std::abs(sol.inputs[1][0]) < 1e-5);
  CHECK(std::abs(sol.predicted_states[1][0]) < 1e-5);
}

TEST_CASE("saturated approach uses the full input authority") {
  SystemModel m = scalar_model(1.0);
  ZmpcConfig cfg = scalar_config(3, kPointTarget, 0.0, 1.0);
  const OcpSolution sol = solve_zmpc(m, cfg, Vector{{10.0}});
  CHECK(sol.status == SolveStatus::optimal);
  // 10^2 + 9^2 + 8^2 with u = -1 on the stages that matter; the last input
  // only moves the unpenalized final state and stays free.
  CHECK(sol.objective_value == doctest::Approx(245.0).epsilon(1e-8));
  CHECK(sol.inputs[0][0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(sol.inputs[1][0] == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("predicted states replay the model exactly") {
  SystemModel m = scalar_model(0.9);
  ZmpcConfig cfg = scalar_config(4, kPointTarget, 1.0, 1.0);
  const OcpSolution sol = solve_zmpc(m, cfg, Vector{{0.7}});
  REQUIRE(sol.predicted_states.size() == 5);
  REQUIRE(sol.inputs.size() == 4);
  CHECK(sol.predicted_states[0][0] == 0.7);
  for (size_t i = 0; i < 4; ++i) {
    const Vector y =
        integrate_step(m, sol.predicted_states[i], sol.inputs[i], Vector::Zero(1));
    CHECK(y[0] == sol.predicted_states[i + 1][0]);
  }
}

TEST_CASE("inputs respect the hard bounds in every status") {
  SystemModel m = scalar_model(1.0);
  for (double x0 : {-40.0, -3.0, 0.0, 2.5, 60.0}) {
    ZmpcConfig cfg = scalar_config(3, kPointTarget, 1.0, 0.5);
    cfg.terminal_set = BoxSet{Vector{{-0.1}}, Vector{{0.1}}};
    cfg.variant = Variant::proposed;
    const OcpSolution sol = solve_zmpc(m, cfg, Vector{{x0}});
    for (const Vector& u : sol.inputs) {
      CHECK(u[0] >= -1.0);
      CHECK(u[0] <= 1.0);
    }
  }
}

TEST_CASE("terminal box center start stays put at zero objective") {
  SystemModel m = scalar_model(1.0);
  ZmpcConfig cfg = scalar_config(3, BoxSet{Vector{{-1.0}}, Vector{{1.0}}}, 1e4, 1e4);
  cfg.variant = Variant::proposed;
  cfg.terminal_set = BoxSet{Vector{{-0.5}}, Vector{{0.5}}};
  const OcpSolution sol = solve_zmpc(m, cfg, Vector{{0.0}});
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.objective_value <= 1e-8);
  for (const Vector& x : sol.predicted_states) {
    CHECK(x[0] >= -0.5 - 1e-6);
    CHECK(x[0] <= 0.5 + 1e-6);
  }
}

TEST_CASE("unreachable terminal set reports infeasible") {
  SystemModel m = scalar_model(1.0);
  ZmpcConfig cfg = scalar_config(1, kPointTarget, 1.0, 0.0);
  cfg.variant = Variant::proposed;
  cfg.terminal_set = BoxSet{Vector{{5.0}}, Vector{{5.5}}};
  const OcpSolution sol = solve_zmpc(m, cfg, Vector{{0.0}});
  CHECK(sol.status == SolveStatus::infeasible);
  // Best reach is x1 = 1, still 4 short of the box.
  CHECK(sol.max_constraint_violation >= 4.0 - 1e-6);
  CHECK(sol.inputs[0][0] >= -1.0);
  CHECK(sol.inputs[0][0] <= 1.0);
}

TEST_CASE("removing the terminal set makes the same problem solvable") {
  SystemModel m = scalar_model(1.0);
  ZmpcConfig cfg = scalar_config(1, kPointTarget, 1.0, 0.0);
  cfg.terminal_set = std::nullopt;
  const OcpSolution sol = solve_zmpc(m, cfg, Vector{{0.0}});
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.max_constraint_violation <= 1e-9);
}

TEST_CASE("interior state bounds shape the trajectory") {
  // Descend from 3 toward 0 but keep intermediate states above 1.8.
  SystemModel m = scalar_model(1.0);
  ZmpcConfig cfg = scalar_config(3, kPointTarget, 0.0, 1.0);
  cfg.state_bounds = BoxSet{Vector{{1.8}}, Vector{{100.0}}};
  const OcpSolution sol = solve_zmpc(m, cfg, Vector{{3.0}});
  CHECK(sol.status == SolveStatus::optimal);
  // Unconstrained optimum would hit 2.0 then 1.0; the floor binds at 1.8.
  CHECK(sol.predicted_states[1][0] >= 1.8 - 1e-5);
  CHECK(sol.predicted_states[2][0] >= 1.8 - 1e-5);
}

TEST_CASE("repeated solves are bit-identical") {
  SystemModel m = scalar_model(0.95);
  ZmpcConfig cfg = scalar_config(4, BoxSet{Vector{{-0.2}}, Vector{{0.2}}}, 10.0, 5.0);
  const OcpSolution a = solve_zmpc(m, cfg, Vector{{2.3}});
  const OcpSolution b = solve_zmpc(m, cfg, Vector{{2.3}});
  CHECK(a.objective_value == b.objective_value);
  for (size_t i = 0; i < a.inputs.size(); ++i) CHECK(a.inputs[i][0] == b.inputs[i][0]);
  CHECK(a.status == b.status);
}

TEST_CASE("warm starting with the optimum does not lose ground") {
  SystemModel m = scalar_model(0.9);
  ZmpcConfig cfg = scalar_config(4, BoxSet{Vector{{-0.1}}, Vector{{0.1}}}, 3.0, 2.0);
  const OcpSolution cold = solve_zmpc(m, cfg, Vector{{1.7}});
  const OcpSolution warm = solve_zmpc(m, cfg, Vector{{1.7}}, cold.inputs);
  CHECK(warm.status == SolveStatus::optimal);
  CHECK(warm.objective_value <= cold.objective_value + 1e-9);
}

TEST_CASE("value function wrapper agrees with the solver") {
  SystemModel m = scalar_model(0.9);
  ZmpcConfig cfg = scalar_config(3, BoxSet{Vector{{-0.5}}, Vector{{0.5}}}, 2.0, 1.0);
  const double V = evaluate_value_function(m, cfg, Vector{{1.3}});
  const OcpSolution sol = solve_zmpc(m, cfg, Vector{{1.3}});
  CHECK(V >= 0.0);
  CHECK(V <= sol.objective_value + 1e-9);
  CHECK(V >= sol.objective_value - 1e-6);
  CHECK(evaluate_value_function(m, cfg, Vector{{0.1}}) == 0.0);
}

TEST_CASE("objective never beats any feasible candidate it evaluated") {
  SystemModel m = scalar_model(1.0);
  ZmpcConfig cfg = scalar_config(3, BoxSet{Vector{{-0.2}}, Vector{{0.2}}}, 4.0, 4.0);
  const OcpSolution sol = solve_zmpc(m, cfg, Vector{{1.1}});
  REQUIRE(!sol.diagnostics.candidates.empty());
  for (const CandidateInfo& c : sol.diagnostics.candidates) {
    if (c.violation <= cfg.solver.constraint_tolerance)
      CHECK(sol.objective_value <= c.objective + 1e-12);
  }
}

TEST_CASE("candidates that ignite the reactor are discarded, not fatal") {
  // Near the ignition boundary some constant-input rollouts overflow the
  // integrator; the solver must drop them and still return a solution built
  // from the surviving starts.
  SystemModel m = make_cstr_model(CstrParameters{});
  ZmpcConfig cfg;
  cfg.variant = Variant::no_terminal;
  cfg.horizon = 5;
  cfg.zone_cost = ZoneCostSpec{1e4, 1e4, BoxSet{Vector{{0.0, 348.0}}, Vector{{1.0, 352.0}}}};
  cfg.actual_target = cfg.zone_cost.target;
  cfg.economic_weight = 1.0;
  cfg.econ_coeff = Vector{{1.0, 0.0}};
  cfg.state_bounds = BoxSet{Vector{{0.0, 345.0}}, Vector{{1.0, 355.0}}};
  cfg.input_bounds = BoxSet{Vector{{285.0}}, Vector{{315.0}}};

  Vector x0(2);
  x0 << 0.691020, 345.2376;
  OcpSolution sol;
  CHECK_NOTHROW(sol = solve_zmpc(m, cfg, x0));
  REQUIRE(int(sol.inputs.size()) == 5);
  CHECK(std::isfinite(sol.objective_value));
  for (const Vector& u : sol.inputs) CHECK(cfg.input_bounds.contains(u));
}

TEST_CASE("an empty candidate pool surfaces as state divergence") {
  // The field ignores the input, so every rollout from x0 = 3 overflows and
  // no start survives evaluation.
  SystemModel m = make_rhs_model(
      1, 1, 1,
      [](const Vector& x, const Vector&, const Vector&) {
        const double x2 = x[0] * x[0];
        return Vector{{x2 * x2}};
      },
      0.2, 4, "field-blowup");
  ZmpcConfig cfg = scalar_config(3, BoxSet{Vector{{-0.2}}, Vector{{0.2}}}, 1.0, 1.0);
  CHECK_THROWS_AS(solve_zmpc(m, cfg, Vector{{3.0}}), NonFiniteState);
}
