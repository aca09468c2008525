// Gridded control invariant sets: viability-kernel computation, certified inner
// boxes and sampling-based invariance checks.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zmpc/dynamics.hpp"
#include "zmpc/types.hpp"

namespace zmpc {

// Uniform grid over `region` with a membership bit and a witness input per cell.
// Witnesses index the input lattice (axis 0 fastest); -1 marks non-members.
struct GriddedInvariantSet {
  BoxSet region;
  Eigen::VectorXi cells_per_axis;
  BoxSet input_bounds;
  Eigen::VectorXi inputs_per_axis;
  std::uint64_t model_id = 0;
  std::vector<std::uint8_t> membership;
  std::vector<std::int32_t> witness;

  Index cell_count() const;
  Index input_count() const;
  Index member_count() const;
  Vector cell_widths() const;
  // Half the cell diagonal; the containment margin used throughout.
  double margin() const;

  Index flat_index(const Eigen::VectorXi& idx) const;
  Eigen::VectorXi multi_index(Index flat) const;
  Vector cell_center(Index flat) const;
  Vector input_point(Index flat) const;

  // Cell containing x (boundary points clamp inward); empty if x outside region.
  std::optional<Index> cell_of(const Vector& x) const;
  bool is_member(Index flat) const { return membership[size_t(flat)] != 0; }
  bool contains_point(const Vector& x) const;
  Vector witness_input(Index flat) const;

  // Outer edges of the member cells; throws EmptyInvariantSet when no members.
  BoxSet bounding_box() const;
};

// Largest-volume viability kernel approximation on the grid: repeatedly removes
// cells whose center no lattice input steers (w = 0) into the surviving set with
// margin >= half cell diagonal. Sweeps read the previous iteration's membership.
// Throws EmptyInvariantSet if every cell is removed.
GriddedInvariantSet compute_cis(const SystemModel& model, const BoxSet& region, const BoxSet& U,
                                const Eigen::VectorXi& cells_per_axis,
                                const Eigen::VectorXi& inputs_per_axis);

struct InvarianceReport {
  bool pass = false;
  double worst_margin = 0.0;  // min over samples of successor signed distance inside
  Vector counterexample_x;    // sample attaining worst_margin
  Vector best_u;
  Vector worst_successor;
  int samples = 0;
};

// Low-discrepancy sample of `candidate`; at each point searches the input grid
// (with local refinement) for a u keeping the w = 0 successor inside `candidate`.
InvarianceReport verify_invariance(const SystemModel& model, const BoxSet& candidate,
                                   const BoxSet& U, int samples = 500, std::uint64_t seed = 0,
                                   int coarse_points = 17, int refine_rounds = 8,
                                   double pass_tolerance = 1e-9);

// Best lattice-refined input for keeping the successor of x inside `box`;
// margin is the successor's signed distance inside.
struct InputSearchResult {
  Vector u;
  double margin;
  Vector successor;
};
InputSearchResult best_containing_input(const SystemModel& model, const Vector& x,
                                        const BoxSet& U, const BoxSet& box,
                                        int coarse_points = 17, int refine_rounds = 8);

// Maximal-volume all-member axis-aligned box grown from the member cell nearest
// the region center, then re-verified with verify_invariance; faces violated by
// the worst counterexample successor shrink one cell at a time until the check
// passes. Throws EmptyInvariantSet if the box empties first.
BoxSet inner_box(const GriddedInvariantSet& set, const SystemModel& model, const BoxSet& U,
                 int verify_samples = 500, std::uint64_t seed = 0);

void save_grid_set(const std::string& path, const GriddedInvariantSet& set);
GriddedInvariantSet load_grid_set(const std::string& path);

}  // namespace zmpc
