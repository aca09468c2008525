#include "zmpc/sets.hpp"

#include <cmath>

namespace zmpc {

double zone_cost(const Eigen::Ref<const Vector>& x, const ZoneCostSpec& spec) {
  require_valid(spec.target, "zone_cost target");
  if (x.size() != spec.target.dim()) throw NonFiniteInput("zone_cost: dimension mismatch");
  if (!all_finite(x)) throw NonFiniteInput("zone_cost: non-finite state");
  const Vector r = spec.target.residual(x);
  return spec.c1 * r.sum() + spec.c2 * r.squaredNorm();
}

ShrinkageSpec make_shrinkage(double gamma, const Vector& tracked_mask, const Vector& xd_max,
                             bool shrink_lower, bool shrink_upper) {
  if (tracked_mask.size() != xd_max.size())
    throw NonFiniteInput("make_shrinkage: mask and xd_max dimension mismatch");
  if (!(gamma >= 0.0) || !all_finite(xd_max))
    throw NonFiniteInput("make_shrinkage: gamma must be >= 0 and xd_max finite");
  ShrinkageSpec spec;
  spec.gamma = gamma;
  spec.tracked_mask = tracked_mask;
  spec.xd_max = xd_max;
  spec.s = gamma * xd_max.cwiseAbs().cwiseProduct(tracked_mask);
  spec.shrink_lower = shrink_lower;
  spec.shrink_upper = shrink_upper;
  return spec;
}

BoxSet shrink_target(const BoxSet& target, const ShrinkageSpec& spec) {
  require_valid(target, "shrink_target target");
  if (spec.s.size() != target.dim())
    throw NonFiniteInput("shrink_target: shrinkage dimension mismatch");
  BoxSet out = target;
  if (spec.shrink_lower) out.lb += spec.s;
  if (spec.shrink_upper) out.ub -= spec.s;
  if (!out.valid())
    throw EmptyModifiedSet("shrink_target: tightening empties the target set");
  return out;
}

Vector derive_tracked_mask(const BoxSet& state_bounds, const BoxSet& target) {
  require_valid(state_bounds, "derive_tracked_mask state bounds");
  require_valid(target, "derive_tracked_mask target");
  if (state_bounds.dim() != target.dim())
    throw NonFiniteInput("derive_tracked_mask: dimension mismatch");
  Vector mask = Vector::Zero(target.dim());
  for (Index i = 0; i < target.dim(); ++i)
    if (target.lb[i] > state_bounds.lb[i] || target.ub[i] < state_bounds.ub[i]) mask[i] = 1.0;
  return mask;
}

XdMaxResult estimate_xd_max(const SystemModel& model, const BoxSet& cis_box, const BoxSet& U,
                            const BoxSet& W, const Vector& tracked_mask) {
  require_valid(cis_box, "estimate_xd_max cis_box");
  require_valid(U, "estimate_xd_max input bounds");
  require_valid(W, "estimate_xd_max disturbance bounds");
  if (cis_box.dim() != model.state_dim || U.dim() != model.input_dim ||
      W.dim() != model.disturbance_dim || tracked_mask.size() != model.state_dim)
    throw NonFiniteInput("estimate_xd_max: dimension mismatch");

  const Index nx = model.state_dim, nu = model.input_dim, nw = model.disturbance_dim;
  const Index nz = nx + nu;

  auto corner = [](const BoxSet& b, unsigned bits) {
    Vector v(b.dim());
    for (Index i = 0; i < b.dim(); ++i) v[i] = (bits >> i) & 1u ? b.ub[i] : b.lb[i];
    return v;
  };

  XdMaxResult best;
  double best_norm = -1.0;
  // Corner index runs z-bits in the low positions, w-bits above; lexicographic
  // tie-break means the first corner attaining the max norm wins.
  for (unsigned cw = 0; cw < (1u << nw); ++cw) {
    const Vector w = corner(W, cw);
    for (unsigned cz = 0; cz < (1u << nz); ++cz) {
      Vector x(nx), u(nu);
      for (Index i = 0; i < nx; ++i) x[i] = (cz >> i) & 1u ? cis_box.ub[i] : cis_box.lb[i];
      for (Index i = 0; i < nu; ++i) u[i] = (cz >> (nx + i)) & 1u ? U.ub[i] : U.lb[i];
      const Matrix S = disturbance_sensitivity(model, x, u, w);
      const Vector d = (S * w).cwiseProduct(tracked_mask);
      const double nrm = d.norm();
      if (nrm > best_norm) {
        best_norm = nrm;
        best.xd_max = d;
        best.argmax_x = x;
        best.argmax_u = u;
        best.argmax_w = w;
      }
    }
  }
  return best;
}

}  // namespace zmpc
