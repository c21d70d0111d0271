#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "l2occg/errors.hpp"
#include "l2occg/serialize.hpp"
#include "l2occg/uncertainty_sets.hpp"
#include "oracles.hpp"

using namespace l2occg;

namespace {

Vec v5(double a, double b = 0, double c = 0, double d = 0, double e = 0) {
  Vec v(5);
  v << a, b, c, d, e;
  return v;
}

bool member(const UncertaintySet& s, const Vec& xi) {
  if (s.kind() == SetKind::gmm) {
    const auto& g = s.as<GmmSet>();
    return g.density(xi) >= g.rho() * (1.0 - 1e-6);
  }
  return contains(s, xi, 1e-8);
}

}  // namespace

TEST_SUITE("uncertainty_sets") {

TEST_CASE("membership examples") {
  const UncertaintySet box = fixture::box(5);
  CHECK(contains(box, Vec::Zero(5)));
  CHECK_FALSE(contains(box, Vec::Constant(5, 0.3)));
  const UncertaintySet ball = EllipSet(Mat::Identity(5, 5), 1.0, Vec::Zero(5));
  CHECK(contains(ball, v5(0.6, 0.8)));
  CHECK_THROWS_AS(contains(box, Vec::Zero(4)), DimensionError);
}

TEST_CASE("construction contracts") {
  CHECK_THROWS_AS(BoxSet(Vec::Constant(3, -1.0), 1.0), ContractError);
  CHECK_THROWS_AS(BoxSet(Vec::Constant(3, 1.0), 0.0), ContractError);
  Mat H = Mat::Identity(1, 3);
  CHECK_THROWS_AS(PolySet(H, Vec::Constant(1, -0.1), Vec::Ones(3), 1.0), ContractError);
  Mat bad = Mat::Identity(3, 3);
  bad(0, 0) = -1.0;
  CHECK_THROWS(EllipSet(bad, 1.0, Vec::Zero(3)));
}

TEST_CASE("l1 projection examples and support-enumeration oracle") {
  Vec a(2), b(2);
  a << 0.5, -0.3;
  b << 0.8, -0.6;
  CHECK((project_l1_ball(a, 1.0) - a).norm() == 0.0);
  Vec expect(2);
  expect << 0.6, -0.4;
  CHECK((project_l1_ball(b, 1.0) - expect).norm() < 1e-12);
  CHECK(project_l1_ball(Vec::Ones(3), 0.0).norm() == 0.0);

  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const Vec v = fixture::gaussian(5, rng);
    const double g = 0.2 + 0.3 * (i % 3);
    CHECK((project_l1_ball(v, g) - oracle::l1_projection_by_supports(v, g)).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("prox_box examples") {
  const BoxSet s = fixture::box(5);
  CHECK((prox_box(s, v5(0.5, -0.1)) - v5(0.3, -0.1)).norm() < 1e-15);
  const Vec in = v5(0.1, -0.2, 0.05);
  CHECK(prox_box(s, in) == in);
}

TEST_CASE("prox_poly examples") {
  Rng rng(1);
  const PolySet empty(Mat(0, 5), Vec(0), Vec::Constant(5, 0.3), 1.0);
  for (int i = 0; i < 50; ++i) {
    const Vec v = fixture::gaussian(5, rng);
    CHECK(prox_poly(empty, v).xi == prox_box(empty.box(), v));
  }
  Mat H = Mat::Zero(1, 5);
  H(0, 0) = 1.0;
  const PolySet half(H, Vec::Constant(1, 0.1), Vec::Constant(5, 10.0), 100.0);
  const auto r = prox_poly(half, v5(0.2));
  CHECK(r.converged);
  CHECK((r.xi - v5(0.1)).norm() < 1e-10);
}

TEST_CASE("prox_ellip examples") {
  const EllipSet ball(Mat::Identity(5, 5), 1.0, Vec::Zero(5));
  CHECK((prox_ellip(ball, v5(3, 4)) - v5(0.6, 0.8)).norm() < 1e-15);
  CHECK(prox_ellip(ball, v5(0.1, 0.2)) == v5(0.1, 0.2));
  Vec d = Vec::Ones(5);
  d[0] = 4.0;
  const EllipSet stretched(d.asDiagonal(), 1.0, Vec::Zero(5));
  CHECK((prox_ellip(stretched, v5(4)) - v5(2)).norm() < 1e-12);
}

TEST_CASE("prox_gmm examples") {
  const Mat I = Mat::Identity(5, 5);
  const GmmSet single({{1.0, Vec::Zero(5), I}}, fixture::rho_at_radius(1.0, I, 1.0));
  CHECK(single.component_radius(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((prox_gmm(single, v5(2)) - v5(1)).norm() < 1e-12);

  Rng rng(8);
  const GmmSet g = fixture::gmm(5, rng);
  for (const auto& c : g.components()) CHECK(prox_gmm(g, c.mean) == c.mean);

  // Means at (+-0.5, 0, ...) and a point on the bisecting axis: component 0.
  const Mat S = 0.01 * I;
  const GmmSet two({{0.5, v5(0.5), S}, {0.5, v5(-0.5), S}}, fixture::rho_at_radius(0.5, S, 2.0));
  const Vec far = v5(0, 5);
  CHECK(g.nearest_component(far) <= 2);
  CHECK(two.nearest_component(far) == 0);
  const Vec d = far - v5(0.5);
  const Vec expect = v5(0.5) + d * (two.component_radius(0) / std::sqrt(two.mahalanobis_sq(0, far)));
  CHECK((prox_gmm(two, far) - expect).norm() < 1e-12);
}

TEST_CASE("prox properties on 1000 random points per geometry") {
  Rng rng(21);
  for (const auto& s : fixture::all_sets(5, 77)) {
    INFO(to_string(s.kind()));
    const Mat Linv = s.kind() == SetKind::ellip
                         ? Mat(s.as<EllipSet>().chol().triangularView<Eigen::Lower>().solve(Mat::Identity(5, 5)))
                         : Mat::Identity(5, 5);
    double worst_idem = 0.0, worst_exp = -1.0;
    int not_member = 0;
    for (int i = 0; i < 1000; ++i) {
      const Vec u = fixture::gaussian(5, rng, 0.4), v = fixture::gaussian(5, rng, 0.4);
      const Vec pu = prox(s, u).xi, pv = prox(s, v).xi;
      worst_idem = std::max(worst_idem, (prox(s, pu).xi - pu).lpNorm<Eigen::Infinity>());
      if (!member(s, pu)) ++not_member;
      if (s.kind() != SetKind::gmm)
        worst_exp = std::max(worst_exp, (Linv * (pu - pv)).norm() - (Linv * (u - v)).norm());
    }
    CHECK(worst_idem <= 1e-10);
    CHECK(not_member == 0);
    if (s.kind() != SetKind::gmm) CHECK(worst_exp <= 1e-9);
  }
}

TEST_CASE("prox is the identity on members") {
  Rng rng(5);
  for (const auto& s : fixture::all_sets(5, 3)) {
    for (int i = 0; i < 200; ++i) {
      const Vec xi = sample(s, rng);
      if (!contains(s, xi, 1e-12)) continue;
      const Vec p = prox(s, xi).xi;
      // Dykstra on the polytope stops within its tolerance.
      CHECK((p - xi).lpNorm<Eigen::Infinity>() <= (s.kind() == SetKind::poly ? 1e-8 : 0.0));
    }
  }
}

TEST_CASE("sampling") {
  Rng rng(42);
  const UncertaintySet box = fixture::box(5);
  for (int i = 0; i < 10000; ++i) REQUIRE(contains(box, sample(box, rng)));

  const UncertaintySet ball = EllipSet(Mat::Identity(5, 5), 1.0, Vec::Zero(5));
  Vec mean = Vec::Zero(5);
  const int n = 100000;
  for (int i = 0; i < n; ++i) mean += sample(ball, rng);
  mean /= n;
  CHECK(mean.lpNorm<Eigen::Infinity>() < 0.02);

  const Mat S = 0.04 * Mat::Identity(5, 5);
  const UncertaintySet one = GmmSet({{1.0, v5(0.1), S}}, fixture::rho_at_radius(1.0, S, 1.5));
  for (int i = 0; i < 2000; ++i) {
    const Vec xi = sample(one, rng);
    CHECK((xi - v5(0.1)).squaredNorm() / 0.04 <= 1.5 * 1.5 + 1e-9);
  }
  for (const auto& s : fixture::all_sets(5, 9))
    for (int i = 0; i < 500; ++i) CHECK(contains(s, sample(s, rng)));
}

TEST_CASE("budget statistic") {
  CHECK(budget_statistic(UncertaintySet(fixture::box(5)), v5(0.3)) == doctest::Approx(1.0));
  const UncertaintySet ball = EllipSet(Mat::Identity(5, 5), 1.0, Vec::Zero(5));
  CHECK(budget_statistic(ball, v5(0.6, 0.8)) == doctest::Approx(1.0));
  Rng rng(2);
  const GmmSet g = fixture::gmm(5, rng);
  CHECK(budget_statistic(UncertaintySet(g), g.components()[0].mean) < 0.0);
}

TEST_CASE("penalty is exactly zero inside") {
  Rng rng(12);
  const PenaltySpec spec;
  for (const auto& s : fixture::all_sets(5, 12)) {
    for (int i = 0; i < 200; ++i) {
      const Vec xi = sample(s, rng);
      if (!strictly_interior(s, xi)) continue;
      const auto p = penalty_and_subgradient(s, spec, xi);
      CHECK(p.value == 0.0);
      CHECK(p.grad.isZero(0.0));
    }
  }
}

TEST_CASE("penalty subgradient matches central differences outside the kink band") {
  Rng rng(13);
  PenaltySpec spec;
  spec.alpha = 2.0;
  for (const auto& s : fixture::all_sets(5, 13)) {
    INFO(to_string(s.kind()));
    int checked = 0;
    for (int i = 0; i < 400 && checked < 50; ++i) {
      // Mixture components are narrow; wider draws land where the density
      // gradient is below what differences of an O(1) penalty can resolve.
      const Vec xi = fixture::gaussian(5, rng, s.kind() == SetKind::gmm ? 0.12 : 0.4);
      bool near_kink = false;
      // The stencil must not cross a hinge breakpoint; the mixture density
      // moves t by |grad t| * h per step, which is large for narrow components.
      for (const auto& term : hinge_terms(s, xi)) {
        const double band = 1e-4 + 10.0 * 1e-7 * term.grad_t.lpNorm<1>();
        near_kink |= std::abs(term.t) < band || std::abs(term.t - spec.smoothing) < band;
      }
      for (double x : xi) near_kink |= std::abs(x) < 1e-4;
      if (near_kink) continue;
      const auto p = penalty_and_subgradient(s, spec, xi);
      if (p.value == 0.0 || p.grad.lpNorm<Eigen::Infinity>() < 1e-2) continue;
      const Vec fd = oracle::central_diff([&](const Vec& x) { return penalty_and_subgradient(s, spec, x).value; },
                                          xi, 1e-7);
      CHECK(oracle::rel_err(p.grad, fd, 1e-6) < 1e-5);
      ++checked;
    }
    CHECK(checked > 10);
  }
}

TEST_CASE("budget changes only shift the hinge argument") {
  const Vec xi = v5(2);
  const UncertaintySet a = EllipSet(Mat::Identity(5, 5), 1.0, Vec::Zero(5));
  const UncertaintySet b = EllipSet(Mat::Identity(5, 5), 1.2, Vec::Zero(5));
  const Vec ga = penalty_and_subgradient(a, {}, xi).grad, gb = penalty_and_subgradient(b, {}, xi).grad;
  CHECK(ga.normalized().dot(gb.normalized()) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(ga.normalized().dot(xi.normalized()) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("smoothed hinge") {
  CHECK(smoothed_hinge(-1.0, 1e-3) == 0.0);
  CHECK(smoothed_hinge(5e-4, 1e-3) == doctest::Approx(1.25e-4));
  CHECK(smoothed_hinge(1.0, 1e-3) == doctest::Approx(1.0 - 5e-4));
  CHECK(smoothed_hinge_slope(1e-3, 1e-3) == doctest::Approx(1.0));
}

TEST_CASE("set JSON round trip is lossless") {
  for (const auto& s : fixture::all_sets(5, 31)) {
    const Json j = to_json(s);
    const UncertaintySet back = set_from_json(j);
    CHECK(to_json(back).dump() == j.dump());
    CHECK(set_spec_hash(back) == set_spec_hash(s));
  }
}

TEST_CASE("prox_vjp matches finite differences of prox") {
  Rng rng(17);
  for (const auto& s : fixture::all_sets(5, 17)) {
    if (s.kind() == SetKind::poly) continue;  // linearised on the active face only
    INFO(to_string(s.kind()));
    for (int i = 0; i < 20; ++i) {
      const Vec v = fixture::gaussian(5, rng, 0.4);
      const Vec w = fixture::gaussian(5, rng);
      const Vec y = prox(s, v).xi;
      const Vec fd = oracle::central_diff([&](const Vec& x) { return w.dot(prox(s, x).xi); }, v, 1e-7);
      CHECK(oracle::rel_err(prox_vjp(s, v, y, w), fd, 1e-6) < 1e-5);
    }
  }
}

}  // TEST_SUITE
