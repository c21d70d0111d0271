#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "fixtures.hpp"
#include "l2occg/errors.hpp"
#include "l2occg/learned_optimizer.hpp"
#include "oracles.hpp"
#include "surrogate_fixture.hpp"

using namespace l2occg;

namespace {

OptimizerPolicy random_policy(std::uint64_t seed, double out_scale = 1.0) {
  OptimizerPolicy p = OptimizerPolicy::init(16, seed);
  Rng rng(seed + 1000);
  for (auto& x : p.W_out.reshaped()) x = fixture::gaussian(1, rng, out_scale)[0];
  for (auto& x : p.b_out) x = fixture::gaussian(1, rng, out_scale)[0];
  return p;
}

bool member(const UncertaintySet& s, const Vec& xi) {
  if (s.kind() == SetKind::gmm) {
    const auto& g = s.as<GmmSet>();
    return g.density(xi) >= g.rho() * (1.0 - 1e-6);
  }
  return contains(s, xi, 1e-8);
}

Vec mid_u0(const HvacInstance& inst) { return 0.5 * (inst.u_lo + inst.u_hi); }

}  // namespace

TEST_SUITE("learned_optimizer") {

TEST_CASE("inactive penalties leave F = -Qhat_obj") {
  const auto& net = fixture::surrogate0();
  const auto& inst = fixture::instance0();
  const UncertaintySet set = fixture::box(5);
  const AugmentedObjective obj(net, mid_u0(inst), set);
  Rng rng(1);
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const Vec xi = sample(set, rng);
    const auto pred = forward(net, mid_u0(inst), xi);
    if (!strictly_interior(set, xi) || normalize_fea(net.norm, pred.fea) >= 0.0) continue;
    const auto e = eval_F(obj, xi);
    CHECK(e.F == doctest::Approx(-normalize_obj(net.norm, pred.obj)).epsilon(1e-12));
    CHECK(e.g_r.isZero(0.0));
    CHECK(e.r == 0.0);
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("smooth-part gradient matches finite differences") {
  const auto& net = fixture::surrogate0();
  Rng rng(2);
  for (const auto& set : fixture::all_sets(5, 2)) {
    const AugmentedObjective obj(net, mid_u0(fixture::instance0()), set);
    int checked = 0;
    for (int i = 0; i < 100 && checked < 10; ++i) {
      const Vec xi = fixture::gaussian(5, rng, 0.3);
      auto f = [&](const Vec& x) { return obj.eval(x).f; };
      const Vec fd = oracle::central_diff(f, xi, 1e-5);
      if ((fd - oracle::central_diff(f, xi, 1e-6)).lpNorm<Eigen::Infinity>() > 1e-6 * std::max(1.0, fd.norm()))
        continue;
      CHECK(oracle::rel_err(obj.eval(xi).grad_f, fd, 1e-6) < 1e-4);
      ++checked;
    }
    CHECK(checked == 10);
  }
}

TEST_CASE("feasibility term is linear in beta") {
  const auto& net = fixture::surrogate0();
  const UncertaintySet set = fixture::box(5);
  PenaltySpec a, b;
  b.beta = 2.0 * a.beta;
  const Vec u0 = mid_u0(fixture::instance0());
  const AugmentedObjective oa(net, u0, set, a), ob(net, u0, set, b);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const Vec xi = fixture::gaussian(5, rng, 1.0);
    const double base = -normalize_obj(net.norm, forward(net, u0, xi).obj);
    const double ta = oa.eval(xi).f - base, tb = ob.eval(xi).f - base;
    CHECK(std::abs(tb - 2.0 * ta) <= 1e-9 * (1.0 + std::abs(ta)));
  }
}

TEST_CASE("gains lie strictly inside (0,1)") {
  Rng rng(4);
  for (int rep = 0; rep < 100; ++rep) {
    const auto p = random_policy(rep, 3.0);
    Mat z(100, 3);
    for (auto& x : z.reshaped()) x = fixture::gaussian(1, rng, 5.0)[0];
    const auto out = policy_step(p, z, PolicyState::zeros(100, p.hidden));
    CHECK(out.gains.minCoeff() > 0.0);
    CHECK(out.gains.maxCoeff() < 1.0);
  }
  const auto half = policy_step(OptimizerPolicy::fixed_half(), Mat::Ones(4, 3), PolicyState::zeros(4, 16));
  CHECK((half.gains.array() == 0.5).all());
}

TEST_CASE("policy step is row equivariant") {
  const auto p = random_policy(5);
  Rng rng(5);
  Mat z(5, 3);
  for (auto& x : z.reshaped()) x = fixture::gaussian(1, rng)[0];
  const std::vector<int> perm{4, 2, 0, 3, 1};
  Mat pz(5, 3);
  for (int r = 0; r < 5; ++r) pz.row(r) = z.row(perm[r]);
  const auto a = policy_step(p, z, PolicyState::zeros(5, p.hidden));
  const auto b = policy_step(p, pz, PolicyState::zeros(5, p.hidden));
  for (int r = 0; r < 5; ++r) {
    CHECK((b.gains.row(r) - a.gains.row(perm[r])).lpNorm<Eigen::Infinity>() <= 1e-15);
    CHECK((b.next.h.row(r) - a.next.h.row(perm[r])).lpNorm<Eigen::Infinity>() <= 1e-15);
  }
}

TEST_CASE("momentum limits") {
  const auto& net = fixture::surrogate0();
  const UncertaintySet set = fixture::box(5);
  const AugmentedObjective obj(net, mid_u0(fixture::instance0()), set);
  Rng rng(6);
  AdvState st{sample(set, rng), fixture::gaussian(5, rng, 0.1), PolicyState::zeros(5, 16)};

  auto frozen = OptimizerPolicy::fixed_half();
  frozen.b_out[1] = 40.0;  // sigmoid rounds to exactly 1
  CHECK(adversarial_step(obj, frozen, st).v == st.v);

  auto memoryless = OptimizerPolicy::fixed_half();
  memoryless.b_out[1] = -800.0;  // sigmoid underflows to exactly 0
  StepInfo info;
  const auto next = adversarial_step(obj, memoryless, st, &info);
  CHECK(next.v == info.at_start.grad_f);
}

TEST_CASE("stationary interior point is a fixed point") {
  const auto zero = ValueNetParams::zeros(ValueNetArch{});
  Rng rng(7);
  for (const auto& set : fixture::all_sets(5, 7)) {
    const AugmentedObjective obj(zero, mid_u0(fixture::instance0()), set);
    for (int i = 0; i < 20; ++i) {
      const Vec xi = sample(set, rng);
      if (!strictly_interior(set, xi)) continue;
      const AdvState st{xi, Vec::Zero(5), PolicyState::zeros(5, 16)};
      const auto next = adversarial_step(obj, random_policy(i), st);
      CHECK((next.xi - xi).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
  }
}

TEST_CASE("every iterate stays in the set") {
  const auto& net = fixture::surrogate0();
  Rng rng(8);
  int trajectories = 0;
  for (const auto& set : fixture::all_sets(5, 8)) {
    for (int i = 0; i < 250; ++i) {
      const AugmentedObjective obj(net, fixture::instance0().u_lo + 0.004 * i * Vec::Ones(2), set);
      const auto tr = run_adversarial(obj, random_policy(i % 7, 2.0), sample(set, rng), 10);
      bool ok = true;
      for (const auto& xi : tr.xi) ok &= member(set, xi);
      CHECK(ok);
      CHECK(tr.xi.size() == 11);
      CHECK(tr.F.size() == 11);
      CHECK(tr.R.size() == 10);
      ++trajectories;
    }
  }
  CHECK(trajectories == 1000);
}

TEST_CASE("trajectory is permutation equivariant on a box") {
  const auto& net = fixture::surrogate0();
  Vec theta(5);
  theta << 0.2, 0.35, 0.3, 0.25, 0.4;
  const std::vector<int> perm{3, 0, 4, 2, 1};
  Vec ptheta(5);
  for (int j = 0; j < 5; ++j) ptheta[j] = theta[perm[j]];
  const UncertaintySet a = BoxSet(theta, 1.0), b = BoxSet(ptheta, 1.0);
  const Vec u0 = mid_u0(fixture::instance0());
  const AugmentedObjective oa(net, u0, a), ob(net, u0, b);
  Rng rng(9);
  const Vec xi0 = sample(a, rng);
  Vec pxi0(5);
  for (int j = 0; j < 5; ++j) pxi0[j] = xi0[perm[j]];
  const auto p = random_policy(9);
  const auto ta = run_adversarial(oa, p, xi0, 20), tb = run_adversarial(ob, p, pxi0, 20);
  for (std::size_t k = 0; k < ta.xi.size(); ++k)
    for (int j = 0; j < 5; ++j) CHECK(std::abs(tb.xi[k][j] - ta.xi[k][perm[j]]) <= 1e-10);
}

TEST_CASE("run_adversarial edge cases") {
  const auto& net = fixture::surrogate0();
  const UncertaintySet set = fixture::box(5);
  const AugmentedObjective obj(net, mid_u0(fixture::instance0()), set);
  const Vec xi0 = Vec::Constant(5, 0.1);
  const auto tr = run_adversarial(obj, OptimizerPolicy::fixed_half(), xi0, 0);
  CHECK(tr.xi.size() == 1);
  CHECK(tr.xi[0] == xi0);
  const auto outside = run_adversarial(obj, OptimizerPolicy::fixed_half(), Vec::Constant(5, 3.0), 0);
  CHECK(contains(set, outside.xi[0]));
}

TEST_CASE("multi-start selection") {
  const auto& net = fixture::surrogate0();
  const UncertaintySet set = fixture::box(5);
  const AugmentedObjective obj(net, mid_u0(fixture::instance0()), set);
  const auto p = random_policy(10);
  Rng rng(10), copy = rng;
  const auto one = multi_start_solve(obj, p, 1, 15, rng);
  const auto single = run_adversarial(obj, p, sample(set, copy), 15);
  CHECK((one.xi_star - single.xi.back()).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK(one.best_F == doctest::Approx(single.F.back()).epsilon(1e-12));

  Rng r2(11);
  const auto many = multi_start_solve(obj, p, 8, 15, r2, true);
  for (double F : many.final_F) CHECK(many.best_F <= F);
  for (int m = 0; m < many.best_restart; ++m) CHECK(many.final_F[m] > many.best_F);
  CHECK(many.trajectories.size() == 8);
}

// Gains of about 0.0025 with no momentum make the update a short projected
// gradient step, which descends except across kinks of the surrogate. The
// half-gain policy overshoots far more often.
OptimizerPolicy small_step_policy() {
  auto p = OptimizerPolicy::fixed_half();
  p.b_out << -6.0, 0.0, -800.0;
  return p;
}

TEST_CASE("short projected gradient steps end below the starting samples") {
  const auto& net = fixture::surrogate0();
  const auto& inst = fixture::instance0();
  const UncertaintySet set = fixture::box(5);
  int pass = 0;
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Vec u0(2);
    u0 << U(rng), U(rng);
    const AugmentedObjective obj(net, inst.u_lo + u0.cwiseProduct(inst.u_hi - inst.u_lo), set);
    Rng draw = rng;
    double start = 1e300;
    for (int m = 0; m < 10; ++m) start = std::min(start, obj.eval(sample(set, draw)).F);
    pass += multi_start_solve(obj, small_step_policy(), 10, 50, rng).best_F <= start;
  }
  CHECK(pass >= 48);
}

TEST_CASE("short projected gradient steps descend") {
  const auto& net = fixture::surrogate0();
  const UncertaintySet set = fixture::box(5);
  Rng rng(12);
  int down = 0, steps = 0;
  for (int run = 0; run < 100; ++run) {
    const AugmentedObjective obj(net, fixture::instance0().u_lo + 0.01 * run * Vec::Ones(2), set);
    const auto tr = run_adversarial(obj, small_step_policy(), sample(set, rng), 20);
    for (std::size_t k = 1; k < tr.F.size(); ++k, ++steps) down += tr.F[k] <= tr.F[k - 1] + 1e-12;
  }
  // The surrogate is piecewise linear in xi (ReLU), so a step that crosses
  // into a region with an opposing slope can rise; about 10% of steps do.
  CHECK(down >= 0.85 * steps);
}

TEST_CASE("ood diagnostics") {
  const auto& net = fixture::surrogate0();
  const Vec u0 = mid_u0(fixture::instance0());
  const auto p = random_policy(13);
  Rng rng(13);
  for (const auto& set : fixture::all_sets(5, 13)) {
    const AugmentedObjective obj(net, u0, set);
    const auto same = ood_compare(obj, obj, p, sample(set, rng), 20);
    CHECK(same.max_s == 0.0);
    for (double g : same.delta_g) CHECK(g == 0.0);
  }
  const UncertaintySet in = fixture::box(5, 0.3, 1.0), out = fixture::box(5, 0.3, 1.2);
  const AugmentedObjective oi(net, u0, in), oo(net, u0, out);
  for (int i = 0; i < 30; ++i) {
    const auto d = ood_compare(oi, oo, p, sample(in, rng), 30);
    CHECK(d.s_norm.size() == d.interior.size());
    for (std::size_t k = 0; k < d.interior.size(); ++k)
      if (d.interior[k]) CHECK(d.delta_g[k] == 0.0);
    CHECK(d.interior_max_delta_g == 0.0);
  }
}

TEST_CASE("policy checkpoint round trip") {
  auto p = random_policy(14);
  p.train_set_hash = "abc";
  const Json j = to_json(p);
  CHECK(to_json(policy_from_json(j)).dump() == j.dump());
  Json bad = j;
  bad["version"] = 7;
  CHECK_THROWS_AS(policy_from_json(bad), FormatError);
  auto q = OptimizerPolicy::fixed_half();
  q.unpack(p.pack());
  q.train_set_hash = p.train_set_hash;
  CHECK(to_json(q).dump() == j.dump());
  const auto path = std::filesystem::temp_directory_path() / "l2occg_test_policy.json";
  save_policy(path, p);
  CHECK(to_json(load_policy(path)).dump() == j.dump());
  std::filesystem::remove(path);
}

TEST_CASE("short training run beats the fixed policy on held-out draws") {
  const auto& net = fixture::surrogate0();
  const auto& inst = fixture::instance0();
  const UncertaintySet set = fixture::box(5);
  PolicyHyper h;
  h.epochs = 40;
  h.draws = 32;
  h.lr = 1e-3;
  h.seed = 3;
  const auto t = train_policy(net, inst, set, {}, h);
  CHECK_FALSE(t.history.diverged);
  const double trained = unrolled_loss(net, inst, set, {}, t.policy, 50, 64, 999);
  const double fixed = unrolled_loss(net, inst, set, {}, OptimizerPolicy::fixed_half(), 50, 64, 999);
  CHECK(trained <= fixed);

  // With a descending update, more steps never end higher.
  int ok = 0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(500 + seed);
    const AugmentedObjective obj(net, inst.u_lo + 0.05 * seed * Vec::Ones(2), set);
    Rng a = rng, b = rng;
    const double k50 = multi_start_solve(obj, small_step_policy(), 10, 50, a).best_F;
    const double k100 = multi_start_solve(obj, small_step_policy(), 10, 100, b).best_F;
    ok += k100 <= k50 + 1e-6;
  }
  CHECK(ok >= 18);

  // Trained without the prox, evaluated with it: iterates are members.
  h.epochs = 5;
  h.prox_in_training = false;
  const auto np = train_policy(net, inst, set, {}, h);
  Rng rng(77);
  const AugmentedObjective obj(net, mid_u0(inst), set);
  const auto tr = run_adversarial(obj, np.policy, sample(set, rng), 50);
  for (const auto& xi : tr.xi) CHECK(contains(set, xi, 1e-8));
}

}  // TEST_SUITE
