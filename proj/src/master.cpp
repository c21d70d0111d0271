#include "l2occg/master.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "l2occg/errors.hpp"

namespace l2occg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ModelSolution {
  Vec u0;
  double value = 0.0;
  bool ok = false;
};

// min c'v  s.t.  G v <= h, from a feasible v. Inequality-form active-set
// simplex with Bland's rule; the problems here have n_u + 1 variables and
// many rows, so everything is dense and tiny per iteration.
bool solve_lp(const Vec& c, const Mat& G, const Vec& h, Vec& v) {
  const auto d = c.size();
  const auto m = G.rows();
  const double scale = std::max(1.0, c.lpNorm<Eigen::Infinity>());
  std::vector<Eigen::Index> work;
  const int max_iter = static_cast<int>(50 * (m + d));
  for (int it = 0; it < max_iter; ++it) {
    const auto k = static_cast<Eigen::Index>(work.size());
    Mat GW(k, d);
    for (Eigen::Index r = 0; r < k; ++r) GW.row(r) = G.row(work[static_cast<std::size_t>(r)]);

    Vec p = -c;
    if (k > 0) {
      const Vec lam = GW.transpose().colPivHouseholderQr().solve(c);
      p = -(c - GW.transpose() * lam);
    }
    if (k == d || p.norm() <= 1e-12 * scale) {
      // c lies in the span of the working rows: check multipliers.
      const Vec lam = GW.transpose().colPivHouseholderQr().solve(-c);
      Eigen::Index drop = -1;
      for (Eigen::Index r = 0; r < k; ++r) {
        if (lam[r] < -1e-12 * scale && (drop < 0 || work[static_cast<std::size_t>(r)] < work[static_cast<std::size_t>(drop)]))
          drop = r;
      }
      if (drop < 0) return true;
      Vec target = Vec::Zero(k);
      target[drop] = -1.0;
      p = GW.completeOrthogonalDecomposition().solve(target);
      work.erase(work.begin() + drop);
    }

    Eigen::Index enter = -1;
    double step = std::numeric_limits<double>::infinity();
    const Vec gp = G * p;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (gp[i] <= 1e-12 * std::max(1.0, p.lpNorm<Eigen::Infinity>())) continue;
      if (std::find(work.begin(), work.end(), i) != work.end()) continue;
      const double a = std::max(0.0, h[i] - G.row(i).dot(v)) / gp[i];
      if (enter < 0 || a < step - 1e-14 * std::max(1.0, step)) {
        step = a;
        enter = i;
      }
    }
    if (enter < 0) return false;  // unbounded
    v += step * p;
    work.push_back(enter);
  }
  return false;
}

// min theta  s.t.  theta >= value + slope'(u0 - point) for every cut and
// u0 in the input box. Cuts are taken on h1 + Q, so theta models the total.
ModelSolution solve_model(const HvacInstance& inst, const std::vector<std::vector<Cut>>& cuts, std::size_t pool,
                          const Vec& start) {
  const int n_u = inst.dims.n_u;
  std::size_t n_cuts = 0;
  for (std::size_t i = 0; i < pool; ++i) n_cuts += cuts[i].size();

  const int nv = n_u + 1;
  const auto rows = static_cast<Eigen::Index>(n_cuts) + 2 * n_u;
  Mat G = Mat::Zero(rows, nv);
  Vec h(rows);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < pool; ++i) {
    for (const auto& c : cuts[i]) {
      G.block(r, 0, 1, n_u) = c.slope.transpose();
      G(r, n_u) = -1.0;
      h[r] = c.slope.dot(c.point) - c.value;
      ++r;
    }
  }
  for (int j = 0; j < n_u; ++j) {
    G(r, j) = 1.0;
    h[r++] = inst.u_hi[j];
    G(r, j) = -1.0;
    h[r++] = -inst.u_lo[j];
  }

  Vec cost = Vec::Zero(nv);
  cost[n_u] = 1.0;
  Vec v(nv);
  v.head(n_u) = start.cwiseMax(inst.u_lo).cwiseMin(inst.u_hi);
  const auto cut_rows = static_cast<Eigen::Index>(n_cuts);
  v[n_u] = (G.topLeftCorner(cut_rows, n_u) * v.head(n_u) - h.head(cut_rows)).maxCoeff();

  ModelSolution out;
  if (!solve_lp(cost, G, h, v)) return out;
  out.u0 = v.head(n_u).cwiseMax(inst.u_lo).cwiseMin(inst.u_hi);
  out.value = cost.dot(v);
  out.ok = true;
  return out;
}

}  // namespace

MasterResult solve_master(const HvacInstance& inst, const std::vector<Vec>& scenarios, const MasterSettings& settings,
                          MasterCache* cache) {
  if (scenarios.empty()) throw ContractError("solve_master: empty scenario pool");
  if (settings.max_rounds < 1 || !(settings.tol > 0.0)) throw ContractError("solve_master: bad settings");
  const int n_u = inst.dims.n_u;

  MasterCache local;
  MasterCache& mc = cache ? *cache : local;
  if (mc.cuts.size() > scenarios.size()) throw ContractError("solve_master: cache holds more scenarios than the pool");
  mc.cuts.resize(scenarios.size());

  Vec u = mc.incumbent.size() == n_u ? mc.incumbent : Vec(0.5 * (inst.u_lo + inst.u_hi));
  MasterResult best;
  best.theta = kInf;
  double best_total = kInf;
  double lower = -kInf;

  for (int round = 1; round <= settings.max_rounds; ++round) {
    best.rounds = round;
    std::vector<double> scores(scenarios.size());
    double worst = -kInf;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
      const RecourseResult r = eval_value_function(inst, u, scenarios[i], settings.qp);
      if (r.status == RecourseStatus::solver_limit)
        std::cerr << "warning: master recourse solve hit the iteration limit\n";
      scores[i] = recourse_score(inst, r);
      worst = std::max(worst, scores[i]);
      mc.cuts[i].push_back({u, inst.first_stage_cost(u) + scores[i], inst.first_stage_grad(u) + r.grad_u0});
    }
    const double total = inst.first_stage_cost(u) + worst;
    if (total < best_total) {
      best_total = total;
      best.u0 = u;
      best.theta = worst;
      best.scenario_scores = scores;
    }

    const ModelSolution model = solve_model(inst, mc.cuts, scenarios.size(), u);
    if (!model.ok) {
      std::cerr << "warning: master cutting-plane model failed to solve; keeping incumbent\n";
      break;
    }
    lower = std::max(lower, model.value);
    if (best_total - lower <= settings.tol * std::max(1.0, std::abs(best_total))) {
      best.converged = true;
      break;
    }
    u = model.u0;
  }
  if (!best.converged) std::cerr << "warning: master cutting planes stopped at the round cap\n";
  best.lower_bound = lower;
  mc.incumbent = best.u0;
  return best;
}

}  // namespace l2occg
