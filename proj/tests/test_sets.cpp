#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "zmpc/sets.hpp"

using namespace zmpc;

namespace {

Vector vec2(double a, double b) { return Vector{{a, b}}; }

// Independent reference: loop arithmetic with no Eigen in sight.
double zone_cost_reference(const Vector& x, const ZoneCostSpec& spec) {
  double l1 = 0.0, l2 = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    double r = 0.0;
    if (x[i] > spec.target.ub[i]) r = x[i] - spec.target.ub[i];
    if (x[i] < spec.target.lb[i]) r = spec.target.lb[i] - x[i];
    l1 += r;
    l2 += r * r;
  }
  return spec.c1 * l1 + spec.c2 * l2;
}

ZoneCostSpec bench_zone() {
  ZoneCostSpec spec;
  spec.c1 = 1e4;
  spec.c2 = 1e4;
  spec.target = BoxSet{vec2(0.0, 348.0), vec2(1.0, 352.0)};
  return spec;
}

}  // namespace

TEST_CASE("zone cost matches the reference on a state grid") {
  const ZoneCostSpec spec = bench_zone();
  for (int i = 0; i <= 20; ++i) {
    for (int j = 0; j <= 20; ++j) {
      const Vector x = vec2(-0.5 + 2.0 * i / 20.0, 344.0 + 12.0 * j / 20.0);
      CHECK(zone_cost(x, spec) == doctest::Approx(zone_cost_reference(x, spec)).epsilon(1e-14));
    }
  }
}

TEST_CASE("zone cost hand example") {
  ZoneCostSpec spec;
  spec.c1 = 1.0;
  spec.c2 = 1.0;
  spec.target = BoxSet{Vector{{348.0}}, Vector{{352.0}}};
  // One unit outside: distance 1, cost 1*1 + 1*1^2 = 2.
  CHECK(zone_cost(Vector{{353.0}}, spec) == doctest::Approx(2.0).epsilon(1e-15));
  spec.c1 = 3.0;
  spec.c2 = 0.5;
  CHECK(zone_cost(Vector{{346.0}}, spec) == doctest::Approx(3.0 * 2.0 + 0.5 * 4.0).epsilon(1e-15));
}

TEST_CASE("zone cost vanishes exactly on the target and only there") {
  const ZoneCostSpec spec = bench_zone();
  CHECK(zone_cost(vec2(0.0, 348.0), spec) == 0.0);
  CHECK(zone_cost(vec2(1.0, 352.0), spec) == 0.0);
  CHECK(zone_cost(vec2(0.5, 350.0), spec) == 0.0);
  CHECK(zone_cost(vec2(0.5, 352.0 + 1e-9), spec) > 0.0);
  CHECK(zone_cost(vec2(-1e-9, 350.0), spec) > 0.0);
}

TEST_CASE("zone cost is convex along random segments") {
  const ZoneCostSpec spec = bench_zone();
  std::mt19937_64 rng(7);
  auto unit = [&rng] { return double(rng() >> 11) * 0x1.0p-53; };
  for (int k = 0; k < 200; ++k) {
    const Vector a = vec2(-1.0 + 3.0 * unit(), 340.0 + 20.0 * unit());
    const Vector b = vec2(-1.0 + 3.0 * unit(), 340.0 + 20.0 * unit());
    const double t = unit();
    const double lhs = zone_cost(t * a + (1.0 - t) * b, spec);
    const double rhs = t * zone_cost(a, spec) + (1.0 - t) * zone_cost(b, spec);
    CHECK(lhs <= rhs + 1e-9 * (1.0 + std::abs(rhs)));
  }
}

TEST_CASE("shrinkage with zero displacement is the identity") {
  const BoxSet target{vec2(0.0, 348.0), vec2(1.0, 352.0)};
  const ShrinkageSpec s = make_shrinkage(1.0, vec2(0.0, 1.0), vec2(0.0, 0.0));
  const BoxSet out = shrink_target(target, s);
  CHECK(out.lb == target.lb);
  CHECK(out.ub == target.ub);
}

TEST_CASE("shrinkage tightens only tracked axes") {
  const BoxSet target{vec2(0.0, 348.0), vec2(1.0, 352.0)};
  const ShrinkageSpec s = make_shrinkage(1.0, vec2(0.0, 1.0), vec2(0.25, 0.511));
  CHECK(s.s[0] == 0.0);
  CHECK(s.s[1] == doctest::Approx(0.511).epsilon(1e-15));
  const BoxSet out = shrink_target(target, s);
  CHECK(out.lb[0] == 0.0);
  CHECK(out.ub[0] == 1.0);
  CHECK(out.lb[1] == doctest::Approx(348.511).epsilon(1e-15));
  CHECK(out.ub[1] == doctest::Approx(351.489).epsilon(1e-15));
}

TEST_CASE("one-sided shrinkage leaves the other face alone") {
  const BoxSet target{Vector{{348.0}}, Vector{{352.0}}};
  ShrinkageSpec s = make_shrinkage(1.0, Vector{{1.0}}, Vector{{0.5}}, true, false);
  BoxSet out = shrink_target(target, s);
  CHECK(out.lb[0] == 348.5);
  CHECK(out.ub[0] == 352.0);
  s = make_shrinkage(1.0, Vector{{1.0}}, Vector{{0.5}}, false, true);
  out = shrink_target(target, s);
  CHECK(out.lb[0] == 348.0);
  CHECK(out.ub[0] == 351.5);
}

TEST_CASE("over-shrinking raises EmptyModifiedSet") {
  const BoxSet target{Vector{{0.0}}, Vector{{1.0}}};
  const ShrinkageSpec s = make_shrinkage(1.0, Vector{{1.0}}, Vector{{0.6}});
  CHECK_THROWS_AS(shrink_target(target, s), EmptyModifiedSet);
}

TEST_CASE("tightening scales linearly with gamma and sets are nested") {
  const BoxSet target{vec2(0.0, 348.0), vec2(1.0, 352.0)};
  const Vector mask = vec2(0.0, 1.0), xd = vec2(0.3, 1.1);
  const ShrinkageSpec half = make_shrinkage(0.5, mask, xd);
  const ShrinkageSpec full = make_shrinkage(1.0, mask, xd);
  CHECK(half.s[1] == doctest::Approx(0.5 * full.s[1]).epsilon(1e-15));
  const BoxSet big = shrink_target(target, half);
  const BoxSet small = shrink_target(target, full);
  CHECK(small.lb[1] >= big.lb[1]);
  CHECK(small.ub[1] <= big.ub[1]);
  CHECK(big.contains(small.center()));
}

TEST_CASE("negative displacement entries tighten by magnitude") {
  const BoxSet target{Vector{{348.0}}, Vector{{352.0}}};
  const ShrinkageSpec s = make_shrinkage(1.0, Vector{{1.0}}, Vector{{-0.7}});
  CHECK(s.s[0] == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("tracked mask marks axes where the target binds") {
  const BoxSet X{vec2(0.0, 345.0), vec2(1.0, 355.0)};
  const BoxSet target{vec2(0.0, 348.0), vec2(1.0, 352.0)};
  const Vector mask = derive_tracked_mask(X, target);
  CHECK(mask[0] == 0.0);
  CHECK(mask[1] == 1.0);
}

TEST_CASE("worst displacement is zero when W is a point at the origin") {
  Matrix A(2, 2), B(2, 1), E(2, 2);
  A << 0.9, 0.0, 0.0, 0.9;
  B << 1.0, 1.0;
  E << 1.0, 0.0, 0.0, 1.0;
  SystemModel m = make_discrete_linear_model(A, B, E);
  const BoxSet Z{vec2(-1.0, -1.0), vec2(1.0, 1.0)};
  const BoxSet U{Vector{{-1.0}}, Vector{{1.0}}};
  const BoxSet W{vec2(0.0, 0.0), vec2(0.0, 0.0)};
  const XdMaxResult r = estimate_xd_max(m, Z, U, W, vec2(1.0, 1.0));
  CHECK(r.xd_max.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("worst displacement of a linear map picks the right corner") {
  Matrix A(2, 2), B(2, 1), E(2, 2);
  A << 0.5, 0.1, 0.0, 0.7;
  B << 0.3, 0.6;
  E << 2.0, -1.0, 0.5, 1.5;
  SystemModel m = make_discrete_linear_model(A, B, E);
  const BoxSet Z{vec2(-1.0, -1.0), vec2(1.0, 1.0)};
  const BoxSet U{Vector{{-1.0}}, Vector{{1.0}}};
  const BoxSet W{vec2(-0.1, -0.2), vec2(0.1, 0.2)};
  const Vector mask = vec2(1.0, 1.0);
  // For a linear map S == E everywhere, so the optimum is over the 4 corners of W.
  double best = -1.0;
  Vector best_d;
  for (int c = 0; c < 4; ++c) {
    Vector w = vec2(c & 1 ? 0.1 : -0.1, c & 2 ? 0.2 : -0.2);
    Vector d = E * w;
    if (d.norm() > best) {
      best = d.norm();
      best_d = d.cwiseAbs();
    }
  }
  const XdMaxResult r = estimate_xd_max(m, Z, U, W, mask);
  CHECK(r.xd_max.cwiseAbs().norm() == doctest::Approx(best).epsilon(1e-9));
  CHECK(r.xd_max.cwiseAbs()[0] == doctest::Approx(best_d[0]).epsilon(1e-9));
  CHECK(r.xd_max.cwiseAbs()[1] == doctest::Approx(best_d[1]).epsilon(1e-9));
  CHECK(W.contains(r.argmax_w));
  CHECK(U.contains(r.argmax_u));
  CHECK(Z.contains(r.argmax_x));
}

TEST_CASE("masking an axis removes it from the displacement") {
  Matrix A = Matrix::Identity(2, 2) * 0.5, B(2, 1), E = Matrix::Identity(2, 2);
  B << 0.0, 0.0;
  SystemModel m = make_discrete_linear_model(A, B, E);
  const BoxSet Z{vec2(-1.0, -1.0), vec2(1.0, 1.0)};
  const BoxSet U{Vector{{0.0}}, Vector{{0.0}}};
  const BoxSet W{vec2(-0.3, -0.4), vec2(0.3, 0.4)};
  const XdMaxResult r = estimate_xd_max(m, Z, U, W, vec2(0.0, 1.0));
  CHECK(r.xd_max[0] == 0.0);
  CHECK(std::abs(r.xd_max[1]) == doctest::Approx(0.4).epsilon(1e-9));
}

TEST_CASE("a wider disturbance set cannot shrink the worst displacement") {
  SystemModel m = make_cstr_model(CstrParameters{});
  const BoxSet Z{vec2(0.275, 348.0), vec2(0.75, 352.0)};
  const BoxSet U{Vector{{285.0}}, Vector{{315.0}}};
  const Vector mask = vec2(0.0, 1.0);
  const BoxSet Wsmall{vec2(-0.05, -1.0), vec2(0.05, 1.0)};
  const BoxSet Wbig{vec2(-0.1, -2.0), vec2(0.1, 2.0)};
  const XdMaxResult a = estimate_xd_max(m, Z, U, Wsmall, mask);
  const XdMaxResult b = estimate_xd_max(m, Z, U, Wbig, mask);
  CHECK(b.xd_max.norm() >= a.xd_max.norm());
  CHECK(b.xd_max[0] == 0.0);
  CHECK(b.xd_max.cwiseAbs()[1] > 0.0);
}
