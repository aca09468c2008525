// Plant models, fixed-step integration and disturbance sensitivity.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "zmpc/types.hpp"

namespace zmpc {

// Exothermic CSTR with first-order reaction. States x = [C_A, T], input u = [T_c],
// disturbances w = [C_Af - CAf_nominal, T_f - Tf_nominal].
struct CstrParameters {
  double q = 100.0;           // feed flow rate [L/min]
  double V = 100.0;           // reactor volume [L]
  double rho = 1000.0;        // density [g/L]
  double Cp = 0.239;          // heat capacity [J/(g K)]
  double dH = -5.0e4;         // reaction enthalpy [J/mol]
  double UA = 5.0e4;          // heat transfer coefficient [J/(min K)]
  double k0 = 7.2e10;         // pre-exponential factor [1/min]
  double E_over_R = 8750.0;   // activation energy over gas constant [K]
  double CAf_nominal = 1.0;   // nominal feed concentration [mol/L]
  double Tf_nominal = 350.0;  // nominal feed temperature [K]
};

// Continuous- or discrete-time model. Exactly one of `rhs` (integrated with
// fixed-step RK4 over `sample_time` split into `integrator_substeps`) or
// `discrete_map` (applied directly) must be set.
struct SystemModel {
  Index state_dim = 0;
  Index input_dim = 0;
  Index disturbance_dim = 0;
  double sample_time = 0.1;    // [min]
  int integrator_substeps = 8;

  std::function<Vector(const Vector&, const Vector&, const Vector&)> rhs;
  std::function<Vector(const Vector&, const Vector&, const Vector&)> discrete_map;

  // Identity used for cache keys: name plus every numeric constant that shapes
  // the one-step map.
  std::string name;
  std::vector<double> signature;
};

Vector cstr_rhs(const Vector& x, const Vector& u, const Vector& w, const CstrParameters& p);

SystemModel make_cstr_model(const CstrParameters& p, double sample_time = 0.1,
                            int integrator_substeps = 8);

// Discrete linear map x+ = A x + B u + E w.
SystemModel make_discrete_linear_model(const Matrix& A, const Matrix& B, const Matrix& E);

// Continuous-time model from an arbitrary rhs (test scaffolding and extensions).
SystemModel make_rhs_model(Index nx, Index nu, Index nw,
                           std::function<Vector(const Vector&, const Vector&, const Vector&)> rhs,
                           double sample_time, int integrator_substeps,
                           const std::string& name = "custom");

// One sample step of the model. Throws NonFiniteInput on non-finite arguments and
// NonFiniteState if the state diverges during integration.
Vector integrate_step(const SystemModel& model, const Vector& x, const Vector& u,
                      const Vector& w);

// d integrate_step / dw by central differences, one column per disturbance.
// Per-axis step h_j = max(step_floor, step_scale * |w_j|).
Matrix disturbance_sensitivity(const SystemModel& model, const Vector& x, const Vector& u,
                               const Vector& w, double step_scale = 1e-5,
                               double step_floor = 1e-5);

// FNV-1a over the model identity; keys grid-file caches.
std::uint64_t model_hash(const SystemModel& model);

}  // namespace zmpc
