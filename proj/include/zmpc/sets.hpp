// Zone-distance cost, target-set shrinkage and worst-case disturbance displacement.
#pragma once

#include "zmpc/dynamics.hpp"
#include "zmpc/types.hpp"

namespace zmpc {

// l_z(x) = c1 * ||r||_1 + c2 * ||r||_2^2 with r the element-wise box residual.
// Equals the exact minimum over points z in `target` of c1*||x-z||_1 + c2*||x-z||_2^2.
struct ZoneCostSpec {
  double c1 = 1.0;
  double c2 = 1.0;
  BoxSet target;
};

double zone_cost(const Eigen::Ref<const Vector>& x, const ZoneCostSpec& spec);

// Per-axis bound tightening s = gamma * |xd_max| applied on tracked axes only.
struct ShrinkageSpec {
  double gamma = 1.0;
  Vector tracked_mask;  // 1 on axes with an active zone objective, 0 elsewhere
  Vector xd_max;        // worst one-step disturbance displacement (state units)
  Vector s;             // resulting tightening, s = gamma * |xd_max| .* mask
  bool shrink_lower = true;
  bool shrink_upper = true;
};

ShrinkageSpec make_shrinkage(double gamma, const Vector& tracked_mask, const Vector& xd_max,
                             bool shrink_lower = true, bool shrink_upper = true);

// [lb + s, ub - s]; throws EmptyModifiedSet if any axis inverts.
BoxSet shrink_target(const BoxSet& target, const ShrinkageSpec& spec);

// Axis i is tracked when the target bounds it strictly tighter than the state bounds.
Vector derive_tracked_mask(const BoxSet& state_bounds, const BoxSet& target);

struct XdMaxResult {
  Vector xd_max;      // masked displacement of largest Euclidean norm
  Vector argmax_x;
  Vector argmax_u;
  Vector argmax_w;
};

// Enumerates every corner of cis_box x U (extremes of z = [x, u]) against every
// corner of W, evaluates the one-step disturbance sensitivity there and keeps the
// masked displacement S*w of largest norm. Ties resolve to the lexicographically
// smallest corner index.
XdMaxResult estimate_xd_max(const SystemModel& model, const BoxSet& cis_box, const BoxSet& U,
                            const BoxSet& W, const Vector& tracked_mask);

}  // namespace zmpc
