#include "zmpc/ocp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "zmpc/cis.hpp"

namespace zmpc {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::nominal: return "nominal";
    case Variant::proposed: return "proposed";
    case Variant::original_zone_modified_terminal: return "original-zone-modified-terminal";
    case Variant::no_terminal: return "no-terminal";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& name) {
  if (name == "nominal") return Variant::nominal;
  if (name == "proposed") return Variant::proposed;
  if (name == "original-zone-modified-terminal") return Variant::original_zone_modified_terminal;
  if (name == "no-terminal") return Variant::no_terminal;
  throw ConfigError("unknown controller variant: " + name);
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::feasible_suboptimal: return "feasible_suboptimal";
    case SolveStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

double stage_cost(const Vector& x, const Vector& u, const ZmpcConfig& cfg) {
  (void)u;  // the economic term of this plant family depends on the state only
  double c = zone_cost(x, cfg.zone_cost);
  if (cfg.economic_weight != 0.0 && cfg.econ_coeff.size() == x.size())
    c += cfg.economic_weight * cfg.econ_coeff.dot(x);
  return c;
}

namespace {

// Stacked-input penalty objective with a one-deep rollout cache: recomputing
// after a change to input block k reuses the states before k.
class PenaltyProblem {
 public:
  PenaltyProblem(const SystemModel& model, const ZmpcConfig& cfg, const Vector& x0)
      : model_(model), cfg_(cfg), x0_(x0), N_(cfg.horizon), nu_(model.input_dim) {
    zero_w_ = Vector::Zero(model.disturbance_dim);
    last_v_.resize(0);
  }

  struct Eval {
    bool ok = false;
    double objective = kInf;   // stage costs only
    double penalty = kInf;     // 1-norm plus squared residuals of violated bounds
    double violation = kInf;   // max residual component
  };

  Eval eval(const Vector& v) {
    ++evals_;
    std::vector<Vector> states(size_t(N_) + 1);
    states[0] = x0_;
    Index reuse = 0;
    if (last_ok_ && last_v_.size() == v.size()) {
      while (reuse < N_ && last_v_.segment(reuse * nu_, nu_) == v.segment(reuse * nu_, nu_))
        ++reuse;
      for (Index i = 0; i <= reuse; ++i) states[size_t(i)] = last_states_[size_t(i)];
    }
    Eval e;
    try {
      for (Index i = reuse; i < N_; ++i)
        states[size_t(i) + 1] =
            integrate_step(model_, states[size_t(i)], v.segment(i * nu_, nu_), zero_w_);
    } catch (const NonFiniteState&) {
      last_ok_ = false;
      return e;
    }
    e.ok = true;
    e.objective = 0.0;
    for (Index i = 0; i < N_; ++i)
      e.objective += stage_cost(states[size_t(i)], v.segment(i * nu_, nu_), cfg_);

    e.penalty = 0.0;
    e.violation = 0.0;
    for (Index i = 1; i < N_; ++i) accumulate(cfg_.state_bounds, states[size_t(i)], e);
    if (cfg_.terminal_set) accumulate(*cfg_.terminal_set, states[size_t(N_)], e);

    last_v_ = v;
    last_states_ = states;
    last_ok_ = true;
    return e;
  }

  double phi(const Vector& v, double rho) {
    const Eval e = eval(v);
    return e.ok ? e.objective + rho * e.penalty : kInf;
  }

  std::vector<Vector> rollout(const Vector& v) {
    const Eval e = eval(v);
    if (!e.ok) throw NonFiniteState("solve_zmpc: rollout of selected candidate diverged");
    return last_states_;
  }

  long evals() const { return evals_; }
  Index dim() const { return N_ * nu_; }

 private:
  static void accumulate(const BoxSet& box, const Vector& x, Eval& e) {
    const Vector r = box.residual(x);
    e.penalty += r.sum() + r.squaredNorm();
    e.violation = std::max(e.violation, r.maxCoeff());
  }

  const SystemModel& model_;
  const ZmpcConfig& cfg_;
  Vector x0_;
  Index N_, nu_;
  Vector zero_w_;
  Vector last_v_;
  std::vector<Vector> last_states_;
  bool last_ok_ = false;
  long evals_ = 0;
};

Vector fd_gradient(PenaltyProblem& prob, const Vector& v, double rho, const Vector& lo,
                   const Vector& hi, const Vector& h) {
  Vector g = Vector::Zero(v.size());
  Vector t = v;
  for (Index j = 0; j < v.size(); ++j) {
    const double up = std::min(v[j] + h[j], hi[j]);
    const double dn = std::max(v[j] - h[j], lo[j]);
    if (up <= dn) continue;
    t[j] = up;
    const double fp = prob.phi(t, rho);
    t[j] = dn;
    const double fm = prob.phi(t, rho);
    t[j] = v[j];
    if (std::isfinite(fp) && std::isfinite(fm)) g[j] = (fp - fm) / (up - dn);
  }
  return g;
}

// Projected gradient descent with a spectral (secant) step and Armijo backtracking.
Vector descend(PenaltyProblem& prob, Vector v, double rho, const Vector& lo, const Vector& hi,
               int max_iter, double step_tol) {
  const Index n = v.size();
  Vector h(n);
  for (Index j = 0; j < n; ++j) h[j] = std::max(1e-9, 1e-7 * (hi[j] - lo[j]));

  double fv = prob.phi(v, rho);
  if (!std::isfinite(fv)) return v;
  Vector g = fd_gradient(prob, v, rho, lo, hi, h);
  double lambda = (hi - lo).maxCoeff() / std::max(1.0, g.cwiseAbs().maxCoeff());
  lambda = std::clamp(lambda, 1e-12, 1e6);

  for (int iter = 0; iter < max_iter; ++iter) {
    const Vector d = (v - lambda * g).cwiseMax(lo).cwiseMin(hi) - v;
    if (d.cwiseAbs().maxCoeff() < step_tol) break;
    const double gd = g.dot(d);
    double alpha = 1.0;
    bool moved = false;
    for (int bt = 0; bt < 30; ++bt) {
      const Vector t = v + alpha * d;
      const double ft = prob.phi(t, rho);
      if (ft <= fv + 1e-4 * alpha * std::min(gd, 0.0) && ft < fv) {
        const Vector s = t - v;
        const Vector gn = fd_gradient(prob, t, rho, lo, hi, h);
        const Vector y = gn - g;
        const double sy = s.dot(y);
        lambda = sy > 1e-18 ? std::clamp(s.dot(s) / sy, 1e-12, 1e6)
                            : std::min(lambda * 2.0, 1e6);
        v = t;
        fv = ft;
        g = gn;
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) {
      lambda *= 0.25;  // kinked landscape; shorten the trial step
      if (lambda < 1e-12) break;
    }
  }
  return v;
}

// Coordinate pattern search, halving the step until stationarity resolution.
Vector polish(PenaltyProblem& prob, Vector v, double rho, const Vector& lo, const Vector& hi,
              double step0, double step_min, long eval_budget) {
  double fv = prob.phi(v, rho);
  if (!std::isfinite(fv)) return v;
  const long start_evals = prob.evals();
  double s = step0;
  while (s >= step_min && prob.evals() - start_evals < eval_budget) {
    bool improved = true;
    while (improved && prob.evals() - start_evals < eval_budget) {
      improved = false;
      for (Index j = 0; j < v.size(); ++j) {
        for (const double dir : {+1.0, -1.0}) {
          Vector t = v;
          t[j] = std::clamp(v[j] + dir * s, lo[j], hi[j]);
          if (t[j] == v[j]) continue;
          const double ft = prob.phi(t, rho);
          if (ft < fv) {
            v = t;
            fv = ft;
            improved = true;
          }
        }
      }
    }
    s *= 0.5;
  }
  return v;
}

}  // namespace

OcpSolution solve_zmpc(const SystemModel& model, const ZmpcConfig& cfg, const Vector& x0,
                       const std::optional<std::vector<Vector>>& warm_start) {
  if (!all_finite(x0) || x0.size() != model.state_dim)
    throw NonFiniteInput("solve_zmpc: bad initial state");
  if (cfg.horizon < 1) throw ConfigError("solve_zmpc: horizon must be >= 1");
  require_valid(cfg.zone_cost.target, "solve_zmpc zone target");
  require_valid(cfg.state_bounds, "solve_zmpc state bounds");
  require_valid(cfg.input_bounds, "solve_zmpc input bounds");
  if (cfg.terminal_set) require_valid(*cfg.terminal_set, "solve_zmpc terminal set");

  const Index N = cfg.horizon;
  const Index nu = model.input_dim;
  const Index dim = N * nu;
  const SolverSettings& st = cfg.solver;

  Vector lo(dim), hi(dim);
  for (Index i = 0; i < N; ++i) {
    lo.segment(i * nu, nu) = cfg.input_bounds.lb;
    hi.segment(i * nu, nu) = cfg.input_bounds.ub;
  }

  PenaltyProblem prob(model, cfg, x0);

  // Explicit return type: an expression template here would dangle on v.
  auto stack = [&](const std::vector<Vector>& seq) -> Vector {
    Vector v(dim);
    for (Index i = 0; i < N; ++i) v.segment(i * nu, nu) = seq[size_t(i)];
    return v.cwiseMax(lo).cwiseMin(hi);
  };

  std::vector<Vector> starts;
  if (warm_start && Index(warm_start->size()) == N) {
    starts.push_back(stack(*warm_start));
    if (cfg.terminal_set) {
      // Repair the appended input so the tail lands in the terminal set.
      try {
        Vector x = x0;
        const Vector zw = Vector::Zero(model.disturbance_dim);
        for (Index i = 0; i + 1 < N; ++i)
          x = integrate_step(model, x, starts[0].segment(i * nu, nu), zw);
        const InputSearchResult r =
            best_containing_input(model, x, cfg.input_bounds, *cfg.terminal_set);
        Vector repaired = starts[0];
        repaired.segment((N - 1) * nu, nu) = r.u;
        starts.push_back(repaired);
      } catch (const NonFiniteState&) {
      }
    }
  }

  {  // best constant sequence from a deterministic endpoint-inclusive scan
    Eigen::VectorXi pts = Eigen::VectorXi::Constant(nu, 21);
    Vector best_const = cfg.input_bounds.center();
    double best_phi = kInf;
    Eigen::VectorXi offs = Eigen::VectorXi::Zero(nu);
    while (true) {
      Vector u(nu);
      for (Index i = 0; i < nu; ++i) {
        const double t = double(offs[i]) / double(pts[i] - 1);
        u[i] = cfg.input_bounds.lb[i] + t * (cfg.input_bounds.ub[i] - cfg.input_bounds.lb[i]);
      }
      Vector v(dim);
      for (Index i = 0; i < N; ++i) v.segment(i * nu, nu) = u;
      const double f = prob.phi(v, st.penalty_initial);
      if (f < best_phi) {
        best_phi = f;
        best_const = u;
      }
      Index axis_i = 0;
      while (axis_i < nu) {
        if (++offs[axis_i] < pts[axis_i]) break;
        offs[axis_i] = 0;
        ++axis_i;
      }
      if (axis_i == nu) break;
    }
    Vector v(dim);
    for (Index i = 0; i < N; ++i) v.segment(i * nu, nu) = best_const;
    starts.push_back(v);
  }

  {
    std::mt19937_64 rng(st.seed ^ 0x9e3779b97f4a7c15ull);
    auto u01 = [&rng]() { return double(rng() >> 11) * 0x1.0p-53; };
    while (Index(starts.size()) < std::max(1, st.multistart_count)) {
      Vector v(dim);
      for (Index j = 0; j < dim; ++j) v[j] = lo[j] + u01() * (hi[j] - lo[j]);
      starts.push_back(v);
    }
  }

  struct PoolEntry {
    Vector v;
    double objective;
    double violation;
    bool polished;
  };
  std::vector<PoolEntry> pool;
  int max_rounds_used = 0;

  const double polish_step0 = (hi - lo).maxCoeff() / 16.0;
  for (const Vector& s0 : starts) {
    const PenaltyProblem::Eval raw = prob.eval(s0);
    if (raw.ok) pool.push_back({s0, raw.objective, raw.violation, false});

    Vector v = s0;
    double rho = st.penalty_initial;
    int rounds = 0;
    while (true) {
      ++rounds;
      v = descend(prob, v, rho, lo, hi, st.max_iterations, st.stationarity_tolerance * 0.1);
      const PenaltyProblem::Eval e = prob.eval(v);
      if (!e.ok) break;
      if (e.violation <= st.constraint_tolerance) break;
      if (rho >= st.penalty_max) break;
      rho = std::min(rho * st.penalty_growth, st.penalty_max);
    }
    max_rounds_used = std::max(max_rounds_used, rounds);
    v = polish(prob, v, rho, lo, hi, polish_step0, st.stationarity_tolerance, 4000);
    const PenaltyProblem::Eval e = prob.eval(v);
    if (e.ok) pool.push_back({v, e.objective, e.violation, true});
  }

  OcpSolution sol;
  sol.diagnostics.penalty_rounds = max_rounds_used;
  for (const PoolEntry& p : pool)
    sol.diagnostics.candidates.push_back({p.objective, p.violation, p.v.norm(), p.polished});

  if (pool.empty()) throw NonFiniteState("solve_zmpc: every start diverged");

  const PoolEntry* best = nullptr;
  bool best_feasible = false;
  for (const PoolEntry& p : pool) {
    const bool feas = p.violation <= st.constraint_tolerance;
    if (!best || (feas && !best_feasible)) {
      best = &p;
      best_feasible = feas;
      continue;
    }
    if (feas != best_feasible) continue;
    const double key_p = feas ? p.objective : p.violation;
    const double key_b = feas ? best->objective : best->violation;
    const double tie = 1e-12 * (1.0 + std::abs(key_b));
    if (key_p < key_b - tie) {
      best = &p;
    } else if (std::abs(key_p - key_b) <= tie) {
      // Raw and polished copies of the same point tie exactly; keep the
      // polished one so the stationarity certificate survives selection.
      const double np = p.v.norm(), nb = best->v.norm();
      if (np < nb || (np == nb && p.polished && !best->polished)) best = &p;
    }
  }
  const bool any_feasible = best_feasible;

  const std::vector<Vector> states = prob.rollout(best->v);
  sol.inputs.resize(size_t(N));
  for (Index i = 0; i < N; ++i) sol.inputs[size_t(i)] = best->v.segment(i * nu, nu);
  sol.predicted_states = states;
  sol.objective_value = best->objective;
  sol.max_constraint_violation = best->violation;
  sol.diagnostics.objective_evaluations = prob.evals();

  if (!any_feasible) {
    sol.status = SolveStatus::infeasible;
  } else if (best->polished && cfg.state_bounds.contains(x0)) {
    sol.status = SolveStatus::optimal;
  } else {
    sol.status = SolveStatus::feasible_suboptimal;
  }
  return sol;
}

double evaluate_value_function(const SystemModel& model, const ZmpcConfig& cfg, const Vector& x) {
  ZmpcConfig wide = cfg;
  wide.solver.multistart_count = std::max(8, cfg.solver.multistart_count * 3);
  wide.solver.max_iterations = std::max(cfg.solver.max_iterations, 80);
  return solve_zmpc(model, wide, x).objective_value;
}

}  // namespace zmpc
