// Core dense types, axis-aligned boxes and the error conditions shared by all modules.
#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace zmpc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct NonFiniteInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteState : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptySet : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyModifiedSet : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyInvariantSet : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AbortedRun : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Eigen::Ref<const Vector>& v) { return v.allFinite(); }

// Axis-aligned box {lb <= x <= ub}. Zero-width axes are allowed; lb > ub on any
// axis marks the box invalid (callers that require a nonempty box raise EmptySet).
struct BoxSet {
  Vector lb;
  Vector ub;

  BoxSet() = default;
  BoxSet(Vector lo, Vector hi) : lb(std::move(lo)), ub(std::move(hi)) {}

  Index dim() const { return lb.size(); }
  bool valid() const { return lb.size() == ub.size() && (lb.array() <= ub.array()).all(); }
  Vector center() const { return 0.5 * (lb + ub); }
  Vector widths() const { return ub - lb; }
  double volume() const { return (ub - lb).prod(); }

  bool contains(const Eigen::Ref<const Vector>& x) const {
    return (x.array() >= lb.array()).all() && (x.array() <= ub.array()).all();
  }

  Vector project(const Eigen::Ref<const Vector>& x) const {
    return x.cwiseMax(lb).cwiseMin(ub);
  }

  // Element-wise distance to the box: max(0, x - ub) + max(0, lb - x).
  // Exactly zero in every component iff x is inside.
  Vector residual(const Eigen::Ref<const Vector>& x) const {
    return (x - ub).cwiseMax(0.0) + (lb - x).cwiseMax(0.0);
  }

  // min_i min(x_i - lb_i, ub_i - x_i); negative outside the box.
  double signed_distance_inside(const Eigen::Ref<const Vector>& x) const {
    return std::min((x - lb).minCoeff(), (ub - x).minCoeff());
  }
};

inline void require_valid(const BoxSet& b, const std::string& what) {
  if (!b.valid()) throw EmptySet(what + ": lower bound exceeds upper bound");
}

}  // namespace zmpc
