#include "l2occg/ccg.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

#include "l2occg/errors.hpp"

namespace l2occg {

namespace {

constexpr double kDuplicateTol = 1e-10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool in_pool(const std::vector<Vec>& pool, const Vec& xi) {
  for (const Vec& p : pool)
    if ((p - xi).lpNorm<Eigen::Infinity>() <= kDuplicateTol) return true;
  return false;
}

double exact_score(const HvacInstance& inst, const Vec& u0, const Vec& xi, const QpSettings& qp) {
  const RecourseResult r = eval_value_function(inst, u0, xi, qp);
  if (r.status == RecourseStatus::solver_limit) std::cerr << "warning: verification QP hit the iteration limit\n";
  return recourse_score(inst, r);
}

}  // namespace

std::string_view to_string(AdversaryMode mode) {
  return mode == AdversaryMode::learned ? "learned" : "random_multistart";
}

AdversaryMode adversary_mode_from_string(std::string_view name) {
  if (name == "learned") return AdversaryMode::learned;
  if (name == "random_multistart" || name == "random") return AdversaryMode::random_multistart;
  throw ContractError("unknown adversary mode '" + std::string(name) + "'");
}

std::string_view to_string(CcgStatus status) { return status == CcgStatus::converged ? "converged" : "iter_limit"; }

void CcgConfig::validate() const {
  if (!(epsilon > 0.0)) throw ContractError("CcgConfig: epsilon must be positive");
  if (max_iters < 1) throw ContractError("CcgConfig: max_iters must be at least 1");
  if (n_candidates < 1) throw ContractError("CcgConfig: n_candidates must be at least 1");
  if (restarts < 1 || steps < 0) throw ContractError("CcgConfig: bad restarts/steps");
  if (verify_candidates < 1) throw ContractError("CcgConfig: verify_candidates must be at least 1");
  penalty.validate();
}

double gap(double q_true, double theta, double epsilon) { return (q_true - theta) / (std::abs(theta) + epsilon); }

AdversaryResult adversarial_random(const HvacInstance& inst, const UncertaintySet& set, const Vec& u0, int n_candidates,
                                   Rng& rng, Exec exec, const QpSettings& qp) {
  if (n_candidates < 1) throw ContractError("adversarial_random: n_candidates must be at least 1");
  std::vector<Vec> xs;
  xs.reserve(static_cast<std::size_t>(n_candidates));
  for (int i = 0; i < n_candidates; ++i) xs.push_back(sample(set, rng));
  const std::vector<double> s = score_batch(inst, u0, xs, exec, qp);
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] > s[best]) best = i;
  return {xs[best], s[best]};
}

std::vector<Vec> oracle_candidates(const UncertaintySet& set, int size, std::uint64_t seed) {
  if (size < 1) throw ContractError("oracle_candidates: size must be at least 1");
  std::vector<Vec> xs;
  const Vec origin = Vec::Zero(set.dim());
  if (contains(set, origin)) xs.push_back(origin);
  Rng rng(seed);
  for (int i = 0; i < size; ++i) xs.push_back(sample(set, rng));
  return xs;
}

double verify_solution(const HvacInstance& inst, const UncertaintySet& set, const Vec& u0, int size, std::uint64_t seed,
                       Exec exec, const QpSettings& qp) {
  const std::vector<Vec> xs = oracle_candidates(set, size, seed);
  const std::vector<double> s = score_batch(inst, u0, xs, exec, qp);
  double worst = s.front();
  for (double v : s) worst = std::max(worst, v);
  return inst.first_stage_cost(u0) + worst;
}

CcgResult ccg_solve(const HvacInstance& inst, const UncertaintySet& set, const ValueNetParams* surrogate,
                    const OptimizerPolicy* policy, const CcgConfig& cfg) {
  cfg.validate();
  if (set.dim() != inst.dims.n_xi) throw DimensionError("ccg_solve: set and instance disagree on n_xi");
  const bool learned = cfg.mode == AdversaryMode::learned;
  if (learned && (!surrogate || !policy)) throw ContractError("ccg_solve: learned mode needs a surrogate and a policy");

  CcgResult res;
  CcgTrace& trace = res.trace;
  trace.pool.push_back(Vec::Zero(inst.dims.n_xi));
  MasterCache cache;

  // One adversary call; `attempt` selects an independent stream.
  auto adversary = [&](const Vec& u0, int t, int attempt, double& t_adv, double& t_ver) {
    Rng rng(mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(t)), static_cast<std::uint64_t>(attempt)));
    AdversaryResult a;
    auto t0 = Clock::now();
    if (learned) {
      const AugmentedObjective obj(*surrogate, u0, set, cfg.penalty);
      const MultiStartResult ms = multi_start_solve(obj, *policy, cfg.restarts, cfg.steps, rng);
      if (ms.prox_failures > 0) std::cerr << "warning: " << ms.prox_failures << " prox calls did not converge\n";
      t_adv = seconds_since(t0);
      t0 = Clock::now();
      a.xi = ms.xi_star;
      a.score = exact_score(inst, u0, a.xi, cfg.master.qp);
      t_ver = seconds_since(t0);
    } else {
      a = adversarial_random(inst, set, u0, cfg.n_candidates, rng, cfg.exec, cfg.master.qp);
      t_adv = seconds_since(t0);
      t_ver = 0.0;
    }
    return a;
  };

  for (int t = 1; t <= cfg.max_iters; ++t) {
    CcgIteration it;
    it.t = t;
    auto t0 = Clock::now();
    const MasterResult m = solve_master(inst, trace.pool, cfg.master, &cache);
    it.time_master = seconds_since(t0);
    it.u0 = m.u0;
    it.theta = m.theta;
    it.lower_bound = m.lower_bound;
    res.u0 = m.u0;
    res.theta = m.theta;

    AdversaryResult a = adversary(m.u0, t, 0, it.time_adversarial, it.time_verify);
    it.gap = gap(a.score, m.theta, cfg.epsilon);
    if (it.gap > cfg.epsilon && in_pool(trace.pool, a.xi)) {
      double ta = 0.0, tv = 0.0;
      a = adversary(m.u0, t, 1, ta, tv);
      it.time_adversarial += ta;
      it.time_verify += tv;
      it.retries = 1;
      it.gap = gap(a.score, m.theta, cfg.epsilon);
    }
    it.xi = a.xi;
    it.q_exact = a.score;

    if (it.gap <= cfg.epsilon) {
      trace.iterations.push_back(std::move(it));
      trace.status = CcgStatus::converged;
      return res;
    }
    if (in_pool(trace.pool, a.xi)) {
      // Only reachable through QP tolerance: a pooled scenario scoring above theta.
      std::cerr << "warning: adversary repeated a pooled scenario; stopping\n";
      trace.iterations.push_back(std::move(it));
      break;
    }
    it.appended = true;
    trace.pool.push_back(a.xi);
    trace.iterations.push_back(std::move(it));
  }
  trace.status = CcgStatus::iter_limit;
  return res;
}

bool theta_monotone(const CcgTrace& trace, double tol) {
  for (std::size_t i = 1; i < trace.iterations.size(); ++i) {
    const double prev = trace.iterations[i - 1].theta, cur = trace.iterations[i].theta;
    if (cur < prev - tol * std::max(1.0, std::abs(prev))) return false;
  }
  return true;
}

Json to_json(const CcgIteration& it) {
  return {{"t", it.t},
          {"u0", vector_to_json(it.u0)},
          {"theta", it.theta},
          {"lower_bound", it.lower_bound},
          {"xi", vector_to_json(it.xi)},
          {"q_exact", it.q_exact},
          {"gap", it.gap},
          {"appended", it.appended},
          {"retries", it.retries},
          {"time_master", it.time_master},
          {"time_adversarial", it.time_adversarial},
          {"time_verify", it.time_verify}};
}

std::string trace_to_jsonl(const CcgTrace& trace) {
  std::ostringstream os;
  for (const auto& it : trace.iterations) os << to_json(it).dump() << '\n';
  const Json status{{"status", std::string(to_string(trace.status))},
                    {"iterations", trace.iterations.size()},
                    {"pool_size", trace.pool.size()}};
  os << status.dump() << '\n';
  return os.str();
}

}  // namespace l2occg
