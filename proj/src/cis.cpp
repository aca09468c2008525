#include "zmpc/cis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "zmpc/detail/codec.hpp"

namespace zmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Deterministic low-discrepancy sequence (Halton, one prime base per axis).
double halton(std::uint64_t index, int base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * double(index % base);
    index /= base;
  }
  return r;
}

int nth_prime(int n) {
  static const int primes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29,
                               31, 37, 41, 43, 47, 53, 59, 61, 67, 71};
  return primes[n % 20];
}

std::vector<Vector> build_input_lattice(const BoxSet& U, const Eigen::VectorXi& points_per_axis) {
  const Index nu = U.dim();
  std::vector<std::vector<double>> axes(nu);
  for (Index i = 0; i < nu; ++i) {
    const int k = std::max(1, points_per_axis[i]);
    axes[i].resize(k);
    if (k == 1) {
      axes[i][0] = 0.5 * (U.lb[i] + U.ub[i]);
    } else {
      for (int j = 0; j < k; ++j)
        axes[i][j] = U.lb[i] + (U.ub[i] - U.lb[i]) * double(j) / double(k - 1);
    }
  }
  Index total = 1;
  for (Index i = 0; i < nu; ++i) total *= Index(axes[i].size());
  std::vector<Vector> lattice(total, Vector(nu));
  for (Index flat = 0; flat < total; ++flat) {
    Index rem = flat;
    for (Index i = 0; i < nu; ++i) {
      const Index k = Index(axes[i].size());
      lattice[size_t(flat)][i] = axes[i][size_t(rem % k)];
      rem /= k;
    }
  }
  return lattice;
}

}  // namespace

Index GriddedInvariantSet::cell_count() const {
  Index n = 1;
  for (Index i = 0; i < cells_per_axis.size(); ++i) n *= cells_per_axis[i];
  return n;
}

Index GriddedInvariantSet::input_count() const {
  Index n = 1;
  for (Index i = 0; i < inputs_per_axis.size(); ++i) n *= std::max(1, inputs_per_axis[i]);
  return n;
}

Index GriddedInvariantSet::member_count() const {
  Index n = 0;
  for (auto m : membership) n += m != 0;
  return n;
}

Vector GriddedInvariantSet::cell_widths() const {
  Vector w(region.dim());
  for (Index i = 0; i < region.dim(); ++i)
    w[i] = (region.ub[i] - region.lb[i]) / double(cells_per_axis[i]);
  return w;
}

double GriddedInvariantSet::margin() const { return 0.5 * cell_widths().norm(); }

Index GriddedInvariantSet::flat_index(const Eigen::VectorXi& idx) const {
  Index flat = 0, stride = 1;
  for (Index i = 0; i < idx.size(); ++i) {
    flat += Index(idx[i]) * stride;
    stride *= cells_per_axis[i];
  }
  return flat;
}

Eigen::VectorXi GriddedInvariantSet::multi_index(Index flat) const {
  Eigen::VectorXi idx(cells_per_axis.size());
  for (Index i = 0; i < cells_per_axis.size(); ++i) {
    idx[i] = int(flat % cells_per_axis[i]);
    flat /= cells_per_axis[i];
  }
  return idx;
}

Vector GriddedInvariantSet::cell_center(Index flat) const {
  const Eigen::VectorXi idx = multi_index(flat);
  const Vector w = cell_widths();
  Vector c(region.dim());
  for (Index i = 0; i < region.dim(); ++i) c[i] = region.lb[i] + (double(idx[i]) + 0.5) * w[i];
  return c;
}

Vector GriddedInvariantSet::input_point(Index flat) const {
  const auto lattice = build_input_lattice(input_bounds, inputs_per_axis);
  return lattice[size_t(flat)];
}

std::optional<Index> GriddedInvariantSet::cell_of(const Vector& x) const {
  if (!region.contains(x)) return std::nullopt;
  const Vector w = cell_widths();
  Eigen::VectorXi idx(region.dim());
  for (Index i = 0; i < region.dim(); ++i) {
    int k = int(std::floor((x[i] - region.lb[i]) / w[i]));
    k = std::clamp(k, 0, cells_per_axis[i] - 1);
    idx[i] = k;
  }
  return flat_index(idx);
}

bool GriddedInvariantSet::contains_point(const Vector& x) const {
  const auto c = cell_of(x);
  return c.has_value() && is_member(*c);
}

Vector GriddedInvariantSet::witness_input(Index flat) const {
  const std::int32_t j = witness[size_t(flat)];
  if (j < 0) throw EmptyInvariantSet("witness_input: cell is not a member");
  return input_point(Index(j));
}

BoxSet GriddedInvariantSet::bounding_box() const {
  const Index d = region.dim();
  Eigen::VectorXi lo = cells_per_axis, hi = Eigen::VectorXi::Constant(d, -1);
  const Index n = cell_count();
  for (Index c = 0; c < n; ++c) {
    if (!is_member(c)) continue;
    const Eigen::VectorXi idx = multi_index(c);
    for (Index i = 0; i < d; ++i) {
      lo[i] = std::min(lo[i], idx[i]);
      hi[i] = std::max(hi[i], idx[i]);
    }
  }
  if (hi[0] < 0) throw EmptyInvariantSet("bounding_box: set has no member cells");
  const Vector w = cell_widths();
  BoxSet box;
  box.lb.resize(d);
  box.ub.resize(d);
  for (Index i = 0; i < d; ++i) {
    box.lb[i] = region.lb[i] + double(lo[i]) * w[i];
    box.ub[i] = region.lb[i] + double(hi[i] + 1) * w[i];
  }
  return box;
}

GriddedInvariantSet compute_cis(const SystemModel& model, const BoxSet& region, const BoxSet& U,
                                const Eigen::VectorXi& cells_per_axis,
                                const Eigen::VectorXi& inputs_per_axis) {
  require_valid(region, "compute_cis region");
  require_valid(U, "compute_cis input bounds");
  if (region.dim() != model.state_dim || U.dim() != model.input_dim)
    throw NonFiniteInput("compute_cis: dimension mismatch");
  if (cells_per_axis.size() != region.dim() || (cells_per_axis.array() < 1).any())
    throw NonFiniteInput("compute_cis: cells_per_axis must be positive per state axis");
  if (inputs_per_axis.size() != U.dim())
    throw NonFiniteInput("compute_cis: inputs_per_axis must match input dimension");

  GriddedInvariantSet set;
  set.region = region;
  set.cells_per_axis = cells_per_axis;
  set.input_bounds = U;
  set.inputs_per_axis = inputs_per_axis;
  set.model_id = model_hash(model);

  const Index d = region.dim();
  const Index n_cells = set.cell_count();
  const auto lattice = build_input_lattice(U, inputs_per_axis);
  const Index n_inputs = Index(lattice.size());
  const Vector w = set.cell_widths();
  const double m = set.margin();
  const Vector zero_w = Vector::Zero(model.disturbance_dim);

  // Successors are membership-independent; compute them once.
  std::vector<double> succ(size_t(n_cells * n_inputs * d));
  std::vector<std::uint8_t> succ_ok_flag(size_t(n_cells * n_inputs), 1);
  for (Index c = 0; c < n_cells; ++c) {
    const Vector xc = set.cell_center(c);
    for (Index j = 0; j < n_inputs; ++j) {
      double* out = &succ[size_t((c * n_inputs + j) * d)];
      try {
        const Vector y = integrate_step(model, xc, lattice[size_t(j)], zero_w);
        for (Index i = 0; i < d; ++i) out[i] = y[i];
      } catch (const NonFiniteState&) {
        succ_ok_flag[size_t(c * n_inputs + j)] = 0;
      }
    }
  }

  Vector eps(d);
  for (Index i = 0; i < d; ++i)
    eps[i] = 1e-9 * std::max({1.0, std::abs(region.lb[i]), std::abs(region.ub[i])});

  std::vector<std::uint8_t> cur(size_t(n_cells), 1), next;
  std::vector<std::int32_t> wit(size_t(n_cells), -1);

  // True iff the margin box around y lies inside the region and every cell it
  // touches is a member of `mem`.
  auto lands_in = [&](const double* y, const std::vector<std::uint8_t>& mem) {
    Eigen::VectorXi ilo(d), ihi(d);
    for (Index i = 0; i < d; ++i) {
      const double lo = y[i] - m, hi = y[i] + m;
      if (lo < region.lb[i] - eps[i] || hi > region.ub[i] + eps[i]) return false;
      ilo[i] = std::clamp(int(std::floor((lo - region.lb[i]) / w[i])), 0, cells_per_axis[i] - 1);
      ihi[i] = std::clamp(int(std::floor((hi - region.lb[i]) / w[i])), 0, cells_per_axis[i] - 1);
    }
    Eigen::VectorXi idx = ilo;
    while (true) {
      if (!mem[size_t(set.flat_index(idx))]) return false;
      Index axis = 0;
      while (axis < d) {
        if (++idx[axis] <= ihi[axis]) break;
        idx[axis] = ilo[axis];
        ++axis;
      }
      if (axis == d) return true;
    }
  };

  auto try_input = [&](Index c, Index j, const std::vector<std::uint8_t>& mem) {
    if (!succ_ok_flag[size_t(c * n_inputs + j)]) return false;
    return lands_in(&succ[size_t((c * n_inputs + j) * d)], mem);
  };

  bool changed = true;
  while (changed) {
    changed = false;
    next = cur;
    for (Index c = 0; c < n_cells; ++c) {
      if (!cur[size_t(c)]) continue;
      bool ok = wit[size_t(c)] >= 0 && try_input(c, Index(wit[size_t(c)]), cur);
      if (!ok) {
        for (Index j = 0; j < n_inputs; ++j) {
          if (try_input(c, j, cur)) {
            wit[size_t(c)] = std::int32_t(j);
            ok = true;
            break;
          }
        }
      }
      if (!ok) {
        next[size_t(c)] = 0;
        wit[size_t(c)] = -1;
        changed = true;
      }
    }
    cur.swap(next);
  }

  set.membership = std::move(cur);
  set.witness = std::move(wit);
  if (set.member_count() == 0)
    throw EmptyInvariantSet("compute_cis: no cell survives the removal fixed point");
  return set;
}

InputSearchResult best_containing_input(const SystemModel& model, const Vector& x,
                                        const BoxSet& U, const BoxSet& box, int coarse_points,
                                        int refine_rounds) {
  const Index nu = U.dim();
  const Vector zero_w = Vector::Zero(model.disturbance_dim);

  InputSearchResult best;
  best.margin = -kInf;
  auto consider = [&](const Vector& u) {
    try {
      const Vector y = integrate_step(model, x, u, zero_w);
      const double mg = box.signed_distance_inside(y);
      if (mg > best.margin) {
        best.margin = mg;
        best.u = u;
        best.successor = y;
      }
    } catch (const NonFiniteState&) {
    }
  };

  Eigen::VectorXi pts = Eigen::VectorXi::Constant(nu, std::max(1, coarse_points));
  for (Index i = 0; i < nu; ++i)
    if (U.ub[i] - U.lb[i] <= 0.0) pts[i] = 1;
  for (const Vector& u : build_input_lattice(U, pts)) consider(u);
  if (!best.u.size()) {
    best.u = U.center();
    best.successor = Vector::Constant(box.dim(), std::numeric_limits<double>::quiet_NaN());
    return best;
  }

  Vector h(nu);
  for (Index i = 0; i < nu; ++i)
    h[i] = pts[i] > 1 ? (U.ub[i] - U.lb[i]) / double(pts[i] - 1) : 0.0;
  for (int round = 0; round < refine_rounds; ++round) {
    h *= 0.5;
    const Vector anchor = best.u;
    Eigen::VectorXi offs = Eigen::VectorXi::Zero(nu);
    while (true) {
      Vector u = anchor;
      for (Index i = 0; i < nu; ++i) u[i] += double(offs[i] - 1) * h[i];
      u = U.project(u);
      consider(u);
      Index axis = 0;
      while (axis < nu) {
        if (++offs[axis] <= 2) break;
        offs[axis] = 0;
        ++axis;
      }
      if (axis == nu) break;
    }
  }
  return best;
}

InvarianceReport verify_invariance(const SystemModel& model, const BoxSet& candidate,
                                   const BoxSet& U, int samples, std::uint64_t seed,
                                   int coarse_points, int refine_rounds, double pass_tolerance) {
  require_valid(candidate, "verify_invariance candidate");
  require_valid(U, "verify_invariance input bounds");
  InvarianceReport rep;
  rep.samples = samples;
  rep.worst_margin = kInf;
  const Index d = candidate.dim();
  for (int k = 0; k < samples; ++k) {
    Vector x(d);
    for (Index i = 0; i < d; ++i) {
      const double t = halton(seed + 1 + std::uint64_t(k), nth_prime(int(i)));
      x[i] = candidate.lb[i] + t * (candidate.ub[i] - candidate.lb[i]);
    }
    const InputSearchResult r =
        best_containing_input(model, x, U, candidate, coarse_points, refine_rounds);
    if (r.margin < rep.worst_margin) {
      rep.worst_margin = r.margin;
      rep.counterexample_x = x;
      rep.best_u = r.u;
      rep.worst_successor = r.successor;
    }
  }
  rep.pass = rep.worst_margin >= -pass_tolerance;
  return rep;
}

namespace {

struct CellRect {
  Eigen::VectorXi lo, hi;  // inclusive cell index ranges
  Index cells() const {
    Index n = 1;
    for (Index i = 0; i < lo.size(); ++i) n *= Index(hi[i] - lo[i] + 1);
    return n;
  }
};

bool all_member(const GriddedInvariantSet& set, const CellRect& r) {
  Eigen::VectorXi idx = r.lo;
  while (true) {
    if (!set.is_member(set.flat_index(idx))) return false;
    Index axis = 0;
    while (axis < idx.size()) {
      if (++idx[axis] <= r.hi[axis]) break;
      idx[axis] = r.lo[axis];
      ++axis;
    }
    if (axis == idx.size()) return true;
  }
}

// Largest all-member rectangle (cell count) containing the seed cell.
// Exhaustive for one and two dimensions, greedy face growth above that.
CellRect max_member_rect(const GriddedInvariantSet& set, const Eigen::VectorXi& seed) {
  const Index d = set.cells_per_axis.size();
  CellRect best{seed, seed};

  if (d == 1) {
    int lo = seed[0], hi = seed[0];
    while (lo > 0 && set.is_member(lo - 1)) --lo;
    while (hi + 1 < set.cells_per_axis[0] && set.is_member(hi + 1)) ++hi;
    best.lo[0] = lo;
    best.hi[0] = hi;
    return best;
  }

  if (d == 2) {
    const int n0 = set.cells_per_axis[0], n1 = set.cells_per_axis[1];
    const int s0 = seed[0], s1 = seed[1];
    // Maximal member run through column s1 for each row; empty marked a > b.
    std::vector<std::pair<int, int>> runs(size_t(n0), {1, 0});
    Eigen::VectorXi idx(2);
    for (int r = 0; r < n0; ++r) {
      idx << r, s1;
      if (!set.is_member(set.flat_index(idx))) continue;
      int a = s1, b = s1;
      while (a > 0) {
        idx << r, a - 1;
        if (!set.is_member(set.flat_index(idx))) break;
        --a;
      }
      while (b + 1 < n1) {
        idx << r, b + 1;
        if (!set.is_member(set.flat_index(idx))) break;
        ++b;
      }
      runs[size_t(r)] = {a, b};
    }
    Index best_cells = 1;
    int pa = runs[size_t(s0)].first, pb = runs[size_t(s0)].second;
    for (int lo0 = s0; lo0 >= 0; --lo0) {
      if (runs[size_t(lo0)].first > runs[size_t(lo0)].second) break;
      pa = std::max(pa, runs[size_t(lo0)].first);
      pb = std::min(pb, runs[size_t(lo0)].second);
      if (pa > pb) break;
      int a = pa, b = pb;
      for (int hi0 = s0; hi0 < n0; ++hi0) {
        if (hi0 > s0) {
          if (runs[size_t(hi0)].first > runs[size_t(hi0)].second) break;
          a = std::max(a, runs[size_t(hi0)].first);
          b = std::min(b, runs[size_t(hi0)].second);
          if (a > b) break;
        }
        const Index cells = Index(hi0 - lo0 + 1) * Index(b - a + 1);
        if (cells > best_cells) {
          best_cells = cells;
          best.lo << lo0, a;
          best.hi << hi0, b;
        }
      }
    }
    return best;
  }

  bool grew = true;
  while (grew) {
    grew = false;
    for (Index axis = 0; axis < d; ++axis) {
      for (int dir : {-1, +1}) {
        CellRect slab = best;
        if (dir < 0) {
          if (best.lo[axis] == 0) continue;
          slab.lo[axis] = slab.hi[axis] = best.lo[axis] - 1;
        } else {
          if (best.hi[axis] + 1 >= set.cells_per_axis[axis]) continue;
          slab.lo[axis] = slab.hi[axis] = best.hi[axis] + 1;
        }
        if (all_member(set, slab)) {
          if (dir < 0)
            best.lo[axis] -= 1;
          else
            best.hi[axis] += 1;
          grew = true;
        }
      }
    }
  }
  return best;
}

}  // namespace

BoxSet inner_box(const GriddedInvariantSet& set, const SystemModel& model, const BoxSet& U,
                 int verify_samples, std::uint64_t seed) {
  const Index n = set.cell_count();
  const Vector target = set.region.center();
  Index seed_cell = -1;
  double best_dist = kInf;
  for (Index c = 0; c < n; ++c) {
    if (!set.is_member(c)) continue;
    const double dist = (set.cell_center(c) - target).norm();
    if (dist < best_dist) {
      best_dist = dist;
      seed_cell = c;
    }
  }
  if (seed_cell < 0) throw EmptyInvariantSet("inner_box: set has no member cells");

  CellRect rect = max_member_rect(set, set.multi_index(seed_cell));
  const Vector w = set.cell_widths();
  const Index d = set.region.dim();
  auto to_box = [&](const CellRect& r) {
    BoxSet b;
    b.lb.resize(d);
    b.ub.resize(d);
    for (Index i = 0; i < d; ++i) {
      b.lb[i] = set.region.lb[i] + double(r.lo[i]) * w[i];
      b.ub[i] = set.region.lb[i] + double(r.hi[i] + 1) * w[i];
    }
    return b;
  };

  while (true) {
    const BoxSet box = to_box(rect);
    const InvarianceReport rep = verify_invariance(model, box, U, verify_samples, seed);
    if (rep.pass) return box;
    bool shrunk = false;
    if (rep.worst_successor.size() == d && all_finite(rep.worst_successor)) {
      for (Index i = 0; i < d; ++i) {
        if (rep.worst_successor[i] < box.lb[i] && rect.lo[i] < rect.hi[i]) {
          rect.lo[i] += 1;
          shrunk = true;
        } else if (rep.worst_successor[i] > box.ub[i] && rect.lo[i] < rect.hi[i]) {
          rect.hi[i] -= 1;
          shrunk = true;
        }
      }
    }
    if (!shrunk) {
      // No face to attribute or the box is a single cell; shrink every axis
      // that still can before giving up.
      for (Index i = 0; i < d; ++i) {
        if (rect.lo[i] < rect.hi[i]) {
          rect.lo[i] += 1;
          shrunk = true;
        }
      }
      if (!shrunk)
        throw EmptyInvariantSet("inner_box: no verifiable box remains");
    }
  }
}

void save_grid_set(const std::string& path, const GriddedInvariantSet& set) {
  nlohmann::ordered_json j;
  j["format"] = "grid-invariant-set";
  j["version"] = 1;
  j["region"] = {{"lb", std::vector<double>(set.region.lb.begin(), set.region.lb.end())},
                 {"ub", std::vector<double>(set.region.ub.begin(), set.region.ub.end())}};
  j["cells_per_axis"] =
      std::vector<int>(set.cells_per_axis.begin(), set.cells_per_axis.end());
  j["model_hash"] = detail::hex64(set.model_id);
  j["input_grid"] = {
      {"lb", std::vector<double>(set.input_bounds.lb.begin(), set.input_bounds.lb.end())},
      {"ub", std::vector<double>(set.input_bounds.ub.begin(), set.input_bounds.ub.end())},
      {"points_per_axis",
       std::vector<int>(set.inputs_per_axis.begin(), set.inputs_per_axis.end())}};

  const Index n = set.cell_count();
  std::vector<std::uint8_t> bitmap(size_t((n + 7) / 8), 0);
  for (Index c = 0; c < n; ++c)
    if (set.is_member(c)) bitmap[size_t(c >> 3)] |= std::uint8_t(1u << (c & 7));
  j["membership_base64"] = detail::base64_encode(bitmap);
  j["witness_inputs"] = set.witness;

  std::ofstream out(path);
  if (!out) throw ConfigError("save_grid_set: cannot open " + path);
  out << j.dump(2) << "\n";
}

GriddedInvariantSet load_grid_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_grid_set: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("load_grid_set: parse failure: ") + e.what());
  }
  try {
    if (j.at("format") != "grid-invariant-set")
      throw ConfigError("load_grid_set: unrecognized format tag");
    GriddedInvariantSet set;
    const auto lb = j.at("region").at("lb").get<std::vector<double>>();
    const auto ub = j.at("region").at("ub").get<std::vector<double>>();
    set.region.lb = Eigen::Map<const Vector>(lb.data(), Index(lb.size()));
    set.region.ub = Eigen::Map<const Vector>(ub.data(), Index(ub.size()));
    const auto cells = j.at("cells_per_axis").get<std::vector<int>>();
    set.cells_per_axis = Eigen::Map<const Eigen::VectorXi>(cells.data(), Index(cells.size()));
    const auto ulb = j.at("input_grid").at("lb").get<std::vector<double>>();
    const auto uub = j.at("input_grid").at("ub").get<std::vector<double>>();
    set.input_bounds.lb = Eigen::Map<const Vector>(ulb.data(), Index(ulb.size()));
    set.input_bounds.ub = Eigen::Map<const Vector>(uub.data(), Index(uub.size()));
    const auto ppa = j.at("input_grid").at("points_per_axis").get<std::vector<int>>();
    set.inputs_per_axis = Eigen::Map<const Eigen::VectorXi>(ppa.data(), Index(ppa.size()));
    set.model_id = std::stoull(j.at("model_hash").get<std::string>(), nullptr, 16);

    if (!set.region.valid() || set.region.dim() != set.cells_per_axis.size() ||
        (set.cells_per_axis.array() < 1).any())
      throw ConfigError("load_grid_set: malformed region or cell counts");

    const Index n = set.cell_count();
    const auto bitmap = detail::base64_decode(j.at("membership_base64").get<std::string>());
    if (Index(bitmap.size()) != (n + 7) / 8)
      throw ConfigError("load_grid_set: membership bitmap length mismatch");
    set.membership.assign(size_t(n), 0);
    for (Index c = 0; c < n; ++c)
      set.membership[size_t(c)] = (bitmap[size_t(c >> 3)] >> (c & 7)) & 1u;
    set.witness = j.at("witness_inputs").get<std::vector<std::int32_t>>();
    if (Index(set.witness.size()) != n)
      throw ConfigError("load_grid_set: witness array length mismatch");
    const Index n_inputs = set.input_count();
    for (Index c = 0; c < n; ++c) {
      const bool member = set.membership[size_t(c)] != 0;
      const std::int32_t wv = set.witness[size_t(c)];
      if (member && (wv < 0 || Index(wv) >= n_inputs))
        throw ConfigError("load_grid_set: member cell without valid witness");
    }
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("load_grid_set: missing or malformed field: ") + e.what());
  }
}

}  // namespace zmpc
