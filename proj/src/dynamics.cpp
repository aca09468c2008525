#include "zmpc/dynamics.hpp"

#include <cmath>
#include <cstring>

namespace zmpc {

namespace {

void check_args(const SystemModel& model, const Vector& x, const Vector& u, const Vector& w,
                const char* where) {
  if (x.size() != model.state_dim || u.size() != model.input_dim ||
      w.size() != model.disturbance_dim)
    throw NonFiniteInput(std::string(where) + ": argument dimension mismatch");
  if (!all_finite(x) || !all_finite(u) || !all_finite(w))
    throw NonFiniteInput(std::string(where) + ": non-finite argument");
}

}  // namespace

Vector cstr_rhs(const Vector& x, const Vector& u, const Vector& w, const CstrParameters& p) {
  if (x.size() != 2 || u.size() != 1 || w.size() != 2)
    throw NonFiniteInput("cstr_rhs: expects x in R^2, u in R^1, w in R^2");
  if (!all_finite(x) || !all_finite(u) || !all_finite(w))
    throw NonFiniteInput("cstr_rhs: non-finite argument");

  const double CA = x[0];
  const double T = x[1];
  const double Tc = u[0];
  const double CAf = p.CAf_nominal + w[0];
  const double Tf = p.Tf_nominal + w[1];

  const double rate = p.k0 * std::exp(-p.E_over_R / T) * CA;
  Vector dx(2);
  dx[0] = p.q / p.V * (CAf - CA) - rate;
  dx[1] = p.q / p.V * (Tf - T) + p.UA / (p.V * p.rho * p.Cp) * (Tc - T) +
          (-p.dH) / (p.rho * p.Cp) * rate;
  return dx;
}

SystemModel make_cstr_model(const CstrParameters& p, double sample_time,
                            int integrator_substeps) {
  SystemModel m;
  m.state_dim = 2;
  m.input_dim = 1;
  m.disturbance_dim = 2;
  m.sample_time = sample_time;
  m.integrator_substeps = integrator_substeps;
  m.rhs = [p](const Vector& x, const Vector& u, const Vector& w) {
    return cstr_rhs(x, u, w, p);
  };
  m.name = "cstr";
  m.signature = {p.q,  p.V,  p.rho, p.Cp,          p.dH,        p.UA,
                 p.k0, p.E_over_R, p.CAf_nominal, p.Tf_nominal, sample_time,
                 double(integrator_substeps)};
  return m;
}

SystemModel make_discrete_linear_model(const Matrix& A, const Matrix& B, const Matrix& E) {
  SystemModel m;
  m.state_dim = A.rows();
  m.input_dim = B.cols();
  m.disturbance_dim = E.cols();
  m.sample_time = 1.0;
  m.integrator_substeps = 1;
  m.discrete_map = [A, B, E](const Vector& x, const Vector& u, const Vector& w) -> Vector {
    return A * x + B * u + E * w;
  };
  m.name = "linear";
  m.signature.reserve(A.size() + B.size() + E.size());
  for (Index j = 0; j < A.cols(); ++j)
    for (Index i = 0; i < A.rows(); ++i) m.signature.push_back(A(i, j));
  for (Index j = 0; j < B.cols(); ++j)
    for (Index i = 0; i < B.rows(); ++i) m.signature.push_back(B(i, j));
  for (Index j = 0; j < E.cols(); ++j)
    for (Index i = 0; i < E.rows(); ++i) m.signature.push_back(E(i, j));
  return m;
}

SystemModel make_rhs_model(Index nx, Index nu, Index nw,
                           std::function<Vector(const Vector&, const Vector&, const Vector&)> rhs,
                           double sample_time, int integrator_substeps,
                           const std::string& name) {
  SystemModel m;
  m.state_dim = nx;
  m.input_dim = nu;
  m.disturbance_dim = nw;
  m.sample_time = sample_time;
  m.integrator_substeps = integrator_substeps;
  m.rhs = std::move(rhs);
  m.name = name;
  m.signature = {double(nx), double(nu), double(nw), sample_time, double(integrator_substeps)};
  return m;
}

Vector integrate_step(const SystemModel& model, const Vector& x, const Vector& u,
                      const Vector& w) {
  check_args(model, x, u, w, "integrate_step");

  if (model.discrete_map) {
    Vector next = model.discrete_map(x, u, w);
    if (!all_finite(next)) throw NonFiniteState("integrate_step: discrete map diverged");
    return next;
  }
  if (!model.rhs) throw NonFiniteInput("integrate_step: model has no dynamics");

  const int n = model.integrator_substeps > 0 ? model.integrator_substeps : 1;
  const double h = model.sample_time / n;
  Vector y = x;
  Vector k1, k2, k3, k4;
  // Past its stability limit RK4 turns into a finite but meaningless chaotic
  // map (overshoots, sign flips, hundred-kelvin collapses) that downstream
  // code would happily treat as data. A substep whose stage states or update
  // move the state by more than half its own scale cannot be resolving the
  // flow, so classify it as divergence, same as an outright overflow. Stiff
  // systems that legitimately move faster need more integrator_substeps.
  double scale = 1.0 + y.cwiseAbs().maxCoeff();
  auto stage = [&](const Vector& ys) -> Vector {
    if (!all_finite(ys) || (ys - y).cwiseAbs().maxCoeff() > 0.5 * scale)
      throw NonFiniteState("integrate_step: state diverged");
    return model.rhs(ys, u, w);
  };
  for (int s = 0; s < n; ++s) {
    scale = 1.0 + y.cwiseAbs().maxCoeff();
    k1 = stage(y);
    k2 = stage(y + (0.5 * h) * k1);
    k3 = stage(y + (0.5 * h) * k2);
    k4 = stage(y + h * k3);
    const Vector dy = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!all_finite(dy) || dy.cwiseAbs().maxCoeff() > 0.5 * scale)
      throw NonFiniteState("integrate_step: state diverged");
    y += dy;
  }
  return y;
}

Matrix disturbance_sensitivity(const SystemModel& model, const Vector& x, const Vector& u,
                               const Vector& w, double step_scale, double step_floor) {
  check_args(model, x, u, w, "disturbance_sensitivity");
  Matrix S(model.state_dim, model.disturbance_dim);
  Vector wp = w, wm = w;
  for (Index j = 0; j < model.disturbance_dim; ++j) {
    const double h = std::max(step_floor, step_scale * std::abs(w[j]));
    wp[j] = w[j] + h;
    wm[j] = w[j] - h;
    S.col(j) = (integrate_step(model, x, u, wp) - integrate_step(model, x, u, wm)) / (2.0 * h);
    wp[j] = w[j];
    wm[j] = w[j];
  }
  return S;
}

std::uint64_t model_hash(const SystemModel& model) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  mix(model.name.data(), model.name.size());
  const std::int64_t dims[3] = {model.state_dim, model.input_dim, model.disturbance_dim};
  mix(dims, sizeof(dims));
  mix(&model.sample_time, sizeof(double));
  mix(&model.integrator_substeps, sizeof(int));
  if (!model.signature.empty())
    mix(model.signature.data(), model.signature.size() * sizeof(double));
  return h;
}

}  // namespace zmpc
