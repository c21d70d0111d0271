#include "l2occg/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>

#include "l2occg/errors.hpp"
#include "l2occg/serialize.hpp"

namespace l2occg {

namespace {

using Clock = std::chrono::steady_clock;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
const std::vector<std::string> kKinds{"box", "poly", "ellip", "gmm"};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad number '" + s + "' in results file");
  return v;
}

long long parse_int(const std::string& s) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad integer '" + s + "' in results file");
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad integer '" + s + "' in results file");
  return v;
}

std::size_t kind_index(const std::string& kind) {
  const auto it = std::find(kKinds.begin(), kKinds.end(), kind);
  if (it == kKinds.end()) throw ContractError("unknown set kind '" + kind + "'");
  return static_cast<std::size_t>(it - kKinds.begin());
}

Vec uniform_u0(const HvacInstance& inst, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec u0(inst.dims.n_u);
  for (int j = 0; j < inst.dims.n_u; ++j) u0[j] = inst.u_lo[j] + (inst.u_hi[j] - inst.u_lo[j]) * unit(rng);
  return u0;
}

const UncertaintySet& set_of(const std::map<std::string, UncertaintySet>& sets, const std::string& kind) {
  const auto it = sets.find(kind);
  if (it == sets.end()) throw ContractError("no nominal set of kind '" + kind + "'");
  return it->second;
}

struct OodStats {
  double max_s = kNaN, interior_max_dg = kNaN;
  int interior_steps = 0;
};

OodStats ood_stats(const Provisioned& prov, const SuiteConfig& cfg, const std::string& kind, const UncertaintySet& out,
                   std::uint64_t seed) {
  const UncertaintySet& in = set_of(prov.sets, kind);
  Rng rng(mix_seed(mix_seed(cfg.master_seed, 200), seed));
  const Vec u0 = uniform_u0(prov.inst, rng);
  const Vec xi0 = sample(in, rng);
  const AugmentedObjective obj_in(prov.surrogate, u0, in, cfg.ccg.penalty);
  const AugmentedObjective obj_out(prov.surrogate, u0, out, cfg.ccg.penalty);
  const OodDiagnostics d = ood_compare(obj_in, obj_out, prov.policies.at(kind), xi0, cfg.ood_steps);
  OodStats s;
  s.max_s = d.max_s;
  s.interior_max_dg = d.interior_max_delta_g;
  s.interior_steps = static_cast<int>(std::count(d.interior.begin(), d.interior.end(), true));
  return s;
}

// Both methods on one (set, perturbation, seed) cell; gap_ref filled against ccg_random.
void run_cell(const Provisioned& prov, const SuiteConfig& cfg, const std::string& kind, const std::string& pert,
              const UncertaintySet& set, std::uint64_t seed, bool ood, SuiteOutput& out) {
  const std::size_t first = out.rows.size();
  for (const std::string& method : cfg.methods) {
    CcgConfig c = cfg.ccg;
    c.seed = mix_seed(mix_seed(cfg.master_seed, 100), seed);
    c.mode = method == "l2o_ccg" ? AdversaryMode::learned : AdversaryMode::random_multistart;
    const OptimizerPolicy& policy = prov.policies.at(kind);

    ResultRow row;
    row.method = method;
    row.set_kind = kind;
    row.perturbation = pert;
    row.seed = seed;
    row.ood_max_s = row.ood_interior_max_dg = kNaN;
    try {
      const auto t0 = Clock::now();
      const CcgResult r = ccg_solve(prov.inst, set, &prov.surrogate, &policy, c);
      row.time_total = seconds_since(t0);
      const auto t1 = Clock::now();
      row.verified = verify_solution(prov.inst, set, r.u0, c.verify_candidates, c.verify_seed, c.exec, c.master.qp);
      row.time_verify = seconds_since(t1);
      row.status = std::string(to_string(r.trace.status));
      row.iterations = static_cast<int>(r.trace.iterations.size());
      row.scenarios = static_cast<int>(r.trace.pool.size()) - 1;
      double adv = 0.0;
      for (const auto& it : r.trace.iterations) {
        adv += it.time_adversarial;
        row.time_master += it.time_master;
      }
      row.time_adv_per_iter = adv / std::max(1, row.iterations);
      if (c.mode == AdversaryMode::learned) {
        row.policy_hash = policy_hash(policy);
        if (ood) {
          const OodStats s = ood_stats(prov, cfg, kind, set, seed);
          row.ood_max_s = s.max_s;
          row.ood_interior_max_dg = s.interior_max_dg;
          row.ood_interior_steps = s.interior_steps;
        }
      }
      out.traces.emplace_back(method + "_" + kind + "_" + pert + "_s" + std::to_string(seed), r.trace);
    } catch (const std::exception& e) {
      std::cerr << "cell " << method << "/" << kind << "/" << pert << "/" << seed << " failed: " << e.what() << "\n";
      row.status = "failed";
      row.verified = kNaN;
    }
    out.rows.push_back(std::move(row));
  }
  const ResultRow* ref = nullptr;
  for (std::size_t i = first; i < out.rows.size(); ++i)
    if (out.rows[i].method == "ccg_random") ref = &out.rows[i];
  for (std::size_t i = first; i < out.rows.size(); ++i)
    out.rows[i].gap_ref = ref ? (out.rows[i].verified - ref->verified) / std::abs(ref->verified) : kNaN;
  if (cfg.verbose)
    for (std::size_t i = first; i < out.rows.size(); ++i)
      std::cerr << out.rows[i].method << " " << kind << " " << pert << " s" << seed << " " << out.rows[i].status << " it "
                << out.rows[i].iterations << " verified " << out.rows[i].verified << " gap " << out.rows[i].gap_ref
                << "\n";
}

Json gmm_to_spec_json(const std::vector<GmmComponent>& comps, double rho) {
  Json j = Json::array();
  for (const auto& c : comps) j.push_back({{"weight", c.weight}, {"mean", vector_to_json(c.mean)}});
  return {{"components", j}, {"rho", rho}};
}

}  // namespace

// ---- sets ----------------------------------------------------------------------

double gmm_rho_for_radius(const std::vector<GmmComponent>& comps, double radius) {
  if (comps.empty() || !(radius > 0.0)) throw ContractError("gmm_rho_for_radius: bad arguments");
  const auto lightest = std::min_element(comps.begin(), comps.end(),
                                         [](const GmmComponent& a, const GmmComponent& b) { return a.weight < b.weight; });
  const auto n = static_cast<double>(lightest->mean.size());
  const Eigen::LLT<Mat> llt(lightest->cov);
  if (llt.info() != Eigen::Success) throw NumericError("gmm_rho_for_radius: covariance is not positive definite");
  const double logdet = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
  const double log_norm = 0.5 * n * std::log(2.0 * std::numbers::pi) + 0.5 * logdet;
  return std::exp(std::log(lightest->weight) - log_norm - 0.5 * radius * radius);
}

std::map<std::string, UncertaintySet> nominal_sets(int n_xi, const NominalSetSpec& spec, std::uint64_t seed) {
  if (n_xi < 2) throw ContractError("nominal_sets: need at least two coordinates");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto direction = [&]() {
    Vec d(n_xi);
    for (int j = 0; j < n_xi; ++j) d[j] = normal(rng);
    return Vec(d.normalized());
  };
  const Vec theta = Vec::Constant(n_xi, spec.box_theta);

  std::map<std::string, UncertaintySet> out;
  out.emplace("box", BoxSet(theta, spec.box_gamma));

  Mat H(spec.poly_rows, n_xi);
  for (int i = 0; i < spec.poly_rows; ++i) H.row(i) = direction().transpose();
  out.emplace("poly", PolySet(H, Vec::Constant(spec.poly_rows, spec.poly_h), theta, spec.box_gamma));

  Vec sig(n_xi);
  for (int j = 0; j < n_xi; ++j) sig[j] = j % 2 == 0 ? spec.ellip_sigma_a : spec.ellip_sigma_b;
  out.emplace("ellip", EllipSet(Mat(sig.cwiseAbs2().asDiagonal()), spec.ellip_gamma, Vec::Zero(n_xi)));

  std::vector<GmmComponent> comps;
  for (double w : spec.gmm_weights)
    comps.push_back({w, spec.gmm_mean_radius * direction(), spec.gmm_cov * Mat::Identity(n_xi, n_xi)});
  const double rho = gmm_rho_for_radius(comps, spec.gmm_min_radius);
  out.emplace("gmm", GmmSet(comps, rho));
  return out;
}

Mat rotate_first_plane(const Mat& sigma, double degrees) {
  if (sigma.rows() < 2 || sigma.rows() != sigma.cols()) throw DimensionError("rotate_first_plane: need a square matrix of size >= 2");
  const double a = degrees * std::numbers::pi / 180.0;
  Mat G = Mat::Identity(sigma.rows(), sigma.cols());
  G(0, 0) = std::cos(a);
  G(0, 1) = -std::sin(a);
  G(1, 0) = std::sin(a);
  G(1, 1) = std::cos(a);
  const Mat r = G * sigma * G.transpose();
  return 0.5 * (r + r.transpose());
}

std::vector<OodCell> ood_cells(const std::map<std::string, UncertaintySet>& nominal, const OodGrid& grid) {
  std::vector<OodCell> cells;
  const auto& box = set_of(nominal, "box").as<BoxSet>();
  const auto n = box.dim();
  for (double t : grid.box_theta) cells.push_back({"box", "theta=" + fmt(t), BoxSet(Vec::Constant(n, t), box.gamma())});
  for (double g : grid.box_gamma) cells.push_back({"box", "gamma=" + fmt(g), BoxSet(box.theta(), g)});

  const auto& poly = set_of(nominal, "poly").as<PolySet>();
  for (double s : grid.poly_h_scale)
    cells.push_back({"poly", "h_scale=" + fmt(s), PolySet(poly.H(), s * poly.h(), poly.box().theta(), poly.box().gamma())});

  const auto& el = set_of(nominal, "ellip").as<EllipSet>();
  for (double s : grid.ellip_scale)
    cells.push_back({"ellip", "gamma_scale=" + fmt(s), EllipSet(el.sigma(), s * el.gamma(), el.center())});
  cells.push_back({"ellip", "rotated=" + fmt(grid.ellip_rotation_deg),
                   EllipSet(rotate_first_plane(el.sigma(), grid.ellip_rotation_deg), el.gamma(), el.center())});

  const auto& gmm = set_of(nominal, "gmm").as<GmmSet>();
  const Vec ones = Vec::Ones(n).normalized();
  for (double d : grid.gmm_shift) {
    auto comps = gmm.components();
    for (auto& c : comps) c.mean += d * ones;
    cells.push_back({"gmm", "shift=" + fmt(d), GmmSet(comps, gmm.rho())});
  }
  for (double s : grid.gmm_rho_scale)
    cells.push_back({"gmm", "rho_scale=" + fmt(s), GmmSet(gmm.components(), s * gmm.rho())});
  return cells;
}

// ---- config -------------------------------------------------------------------

void SuiteConfig::validate() const {
  if (seeds.empty()) throw ContractError("suite: seeds list is empty");
  if (methods.empty()) throw ContractError("suite: methods list is empty");
  for (const auto& m : methods)
    if (m != "ccg_random" && m != "l2o_ccg") throw ContractError("suite: unknown method '" + m + "'");
  if (samples_per_set < 1) throw ContractError("suite: samples_per_set must be positive");
  if (ood_steps < 1) throw ContractError("suite: ood_steps must be positive");
  ccg.validate();
  arch.validate();
}

SuiteConfig suite_config_from_json(const Json& j) {
  SuiteConfig c;
  try {
    c.instance_seed = j.value("instance_seed", c.instance_seed);
    c.master_seed = j.value("master_seed", c.master_seed);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
    c.samples_per_set = j.value("samples_per_set", c.samples_per_set);
    c.ood_steps = j.value("ood_steps", c.ood_steps);
    c.verbose = j.value("verbose", c.verbose);
    if (j.contains("box_gamma_sweep")) c.box_gamma_sweep = j.at("box_gamma_sweep").get<std::vector<double>>();
    if (j.contains("value_net")) {
      const Json& v = j.at("value_net");
      c.value_hyper.epochs = v.value("epochs", c.value_hyper.epochs);
      c.value_hyper.lr = v.value("lr", c.value_hyper.lr);
      c.value_hyper.batch = v.value("batch", c.value_hyper.batch);
      c.value_hyper.patience = v.value("patience", c.value_hyper.patience);
      c.value_hyper.val_frac = v.value("val_frac", c.value_hyper.val_frac);
    }
    if (j.contains("policy")) {
      const Json& p = j.at("policy");
      c.policy_hyper.epochs = p.value("epochs", c.policy_hyper.epochs);
      c.policy_hyper.draws = p.value("draws", c.policy_hyper.draws);
      c.policy_hyper.K = p.value("K", c.policy_hyper.K);
      c.policy_hyper.tbptt = p.value("tbptt", c.policy_hyper.tbptt);
      c.policy_hyper.lr = p.value("lr", c.policy_hyper.lr);
      c.policy_hyper.val_draws = p.value("val_draws", c.policy_hyper.val_draws);
      c.policy_hyper.val_every = p.value("val_every", c.policy_hyper.val_every);
    }
    if (j.contains("ccg")) {
      const Json& g = j.at("ccg");
      c.ccg.epsilon = g.value("epsilon", c.ccg.epsilon);
      c.ccg.max_iters = g.value("max_iters", c.ccg.max_iters);
      c.ccg.restarts = g.value("restarts", c.ccg.restarts);
      c.ccg.steps = g.value("steps", c.ccg.steps);
      c.ccg.n_candidates = g.value("n_candidates", c.ccg.n_candidates);
      c.ccg.verify_candidates = g.value("verify_candidates", c.ccg.verify_candidates);
      c.ccg.verify_seed = g.value("verify_seed", c.ccg.verify_seed);
      c.ccg.penalty.alpha = g.value("alpha", c.ccg.penalty.alpha);
      c.ccg.penalty.beta = g.value("beta", c.ccg.penalty.beta);
    }
    if (j.contains("grid")) {
      const Json& g = j.at("grid");
      auto list = [&](const char* key, std::vector<double>& dst) {
        if (g.contains(key)) dst = g.at(key).get<std::vector<double>>();
      };
      list("box_theta", c.grid.box_theta);
      list("box_gamma", c.grid.box_gamma);
      list("poly_h_scale", c.grid.poly_h_scale);
      list("ellip_scale", c.grid.ellip_scale);
      list("gmm_shift", c.grid.gmm_shift);
      list("gmm_rho_scale", c.grid.gmm_rho_scale);
      c.grid.ellip_rotation_deg = g.value("ellip_rotation_deg", c.grid.ellip_rotation_deg);
    }
    if (j.contains("surrogate_checkpoint")) c.surrogate_checkpoint = j.at("surrogate_checkpoint").get<std::string>();
    if (j.contains("policy_checkpoints"))
      for (const auto& [k, v] : j.at("policy_checkpoints").items()) c.policy_checkpoints[k] = v.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("suite config: ") + e.what());
  }
  c.validate();
  return c;
}

Json to_json(const SuiteConfig& c) {
  Json j{{"instance_seed", c.instance_seed},
         {"master_seed", c.master_seed},
         {"seeds", c.seeds},
         {"methods", c.methods},
         {"samples_per_set", c.samples_per_set},
         {"ood_steps", c.ood_steps},
         {"box_gamma_sweep", c.box_gamma_sweep},
         {"value_net",
          {{"epochs", c.value_hyper.epochs},
           {"lr", c.value_hyper.lr},
           {"batch", c.value_hyper.batch},
           {"patience", c.value_hyper.patience},
           {"val_frac", c.value_hyper.val_frac}}},
         {"policy",
          {{"epochs", c.policy_hyper.epochs},
           {"draws", c.policy_hyper.draws},
           {"K", c.policy_hyper.K},
           {"tbptt", c.policy_hyper.tbptt},
           {"lr", c.policy_hyper.lr},
           {"val_draws", c.policy_hyper.val_draws},
           {"val_every", c.policy_hyper.val_every}}},
         {"ccg",
          {{"epsilon", c.ccg.epsilon},
           {"max_iters", c.ccg.max_iters},
           {"restarts", c.ccg.restarts},
           {"steps", c.ccg.steps},
           {"n_candidates", c.ccg.n_candidates},
           {"verify_candidates", c.ccg.verify_candidates},
           {"verify_seed", c.ccg.verify_seed},
           {"alpha", c.ccg.penalty.alpha},
           {"beta", c.ccg.penalty.beta}}},
         {"grid",
          {{"box_theta", c.grid.box_theta},
           {"box_gamma", c.grid.box_gamma},
           {"poly_h_scale", c.grid.poly_h_scale},
           {"ellip_scale", c.grid.ellip_scale},
           {"ellip_rotation_deg", c.grid.ellip_rotation_deg},
           {"gmm_shift", c.grid.gmm_shift},
           {"gmm_rho_scale", c.grid.gmm_rho_scale}}}};
  if (c.surrogate_checkpoint) j["surrogate_checkpoint"] = c.surrogate_checkpoint->string();
  for (const auto& [k, v] : c.policy_checkpoints) j["policy_checkpoints"][k] = v.string();
  return j;
}

// ---- provisioning ---------------------------------------------------------------

std::string policy_hash(const OptimizerPolicy& p) { return hex64(fnv1a(to_json(p).dump())); }

Provisioned provision(const SuiteConfig& cfg) {
  cfg.validate();
  Provisioned prov;
  prov.inst = generate_instance(cfg.instance_seed);
  prov.sets = nominal_sets(prov.inst.dims.n_xi, cfg.nominal, mix_seed(cfg.master_seed, 1));
  Json& rep = prov.report;
  rep["instance_seed"] = cfg.instance_seed;
  Json sets = Json::object();
  for (const auto& [k, s] : prov.sets) sets[k] = to_json(s);
  rep["sets"] = sets;
  const auto& g = set_of(prov.sets, "gmm").as<GmmSet>();
  rep["gmm_spec"] = gmm_to_spec_json(g.components(), g.rho());

  if (cfg.surrogate_checkpoint) {
    prov.surrogate = load_value_net(*cfg.surrogate_checkpoint);
    rep["surrogate"] = {{"checkpoint", cfg.surrogate_checkpoint->string()}};
  } else {
    auto t0 = Clock::now();
    std::vector<RecourseDataset> parts;
    for (const auto& kind : kKinds)
      parts.push_back(generate_dataset(prov.inst, set_of(prov.sets, kind), cfg.samples_per_set,
                                       mix_seed(cfg.master_seed, 10 + kind_index(kind)), cfg.dataset));
    const RecourseDataset data = pool_datasets(parts);
    const double t_data = seconds_since(t0);
    t0 = Clock::now();
    TrainHyper h = cfg.value_hyper;
    h.seed = mix_seed(cfg.master_seed, 2);
    h.verbose = cfg.verbose;
    const TrainedValueNet tv = train_value_net(data, cfg.arch, h);
    prov.surrogate = tv.params;
    rep["surrogate"] = {{"records", data.records.size()},
                        {"dropped", data.dropped},
                        {"best_epoch", tv.history.best_epoch},
                        {"best_val_nmse", tv.history.best_val},
                        {"diverged", tv.history.diverged},
                        {"time_dataset", t_data},
                        {"time_train", seconds_since(t0)}};
  }

  for (const auto& kind : kKinds) {
    const UncertaintySet& set = set_of(prov.sets, kind);
    const auto ck = cfg.policy_checkpoints.find(kind);
    if (ck != cfg.policy_checkpoints.end()) {
      prov.policies[kind] = load_policy(ck->second);
      rep["policies"][kind] = {{"checkpoint", ck->second.string()}, {"hash", policy_hash(prov.policies[kind])}};
      continue;
    }
    const auto t0 = Clock::now();
    PolicyHyper h = cfg.policy_hyper;
    h.seed = mix_seed(cfg.master_seed, 20 + kind_index(kind));
    h.verbose = cfg.verbose;
    const TrainedPolicy tp = train_policy(prov.surrogate, prov.inst, set, cfg.ccg.penalty, h);
    prov.policies[kind] = tp.policy;
    rep["policies"][kind] = {{"initial_val", tp.history.val_loss.front()},
                             {"best_val", tp.history.best_val},
                             {"best_epoch", tp.history.best_epoch},
                             {"diverged", tp.history.diverged},
                             {"hash", policy_hash(tp.policy)},
                             {"time_train", seconds_since(t0)}};
  }
  return prov;
}

// ---- suites ---------------------------------------------------------------------

SuiteOutput run_ind_suite(const Provisioned& prov, const SuiteConfig& cfg) {
  SuiteOutput out;
  for (const auto& kind : kKinds)
    for (std::uint64_t seed : cfg.seeds) run_cell(prov, cfg, kind, "nominal", set_of(prov.sets, kind), seed, false, out);
  return out;
}

SuiteOutput run_ood_suite(const Provisioned& prov, const SuiteConfig& cfg) {
  SuiteOutput out;
  for (const OodCell& cell : ood_cells(prov.sets, cfg.grid))
    for (std::uint64_t seed : cfg.seeds) run_cell(prov, cfg, cell.set_kind, cell.perturbation, cell.set, seed, true, out);
  return out;
}

std::vector<SweepPoint> box_gamma_sweep(const Provisioned& prov, const SuiteConfig& cfg) {
  const auto& box = set_of(prov.sets, "box").as<BoxSet>();
  std::vector<SweepPoint> pts;
  for (double d : cfg.box_gamma_sweep) {
    SweepPoint p;
    p.delta_gamma = d;
    const UncertaintySet out = BoxSet(box.theta(), box.gamma() + d);
    for (std::uint64_t seed : cfg.seeds) p.max_s.push_back(ood_stats(prov, cfg, "box", out, seed).max_s);
    p.median_max_s = median(p.max_s);
    pts.push_back(std::move(p));
  }
  return pts;
}

AdversaryComparison compare_adversaries(const HvacInstance& inst, const UncertaintySet& set,
                                        const ValueNetParams& surrogate, const OptimizerPolicy& trained,
                                        const CcgConfig& ccg, int draws, std::uint64_t seed) {
  if (draws < 1) throw ContractError("compare_adversaries: draws must be positive");
  const OptimizerPolicy fixed = OptimizerPolicy::fixed_half(trained.hidden);
  const std::vector<Vec> oracle = oracle_candidates(set, ccg.verify_candidates, ccg.verify_seed);
  Rng rng(seed);
  AdversaryComparison c;
  for (int d = 0; d < draws; ++d) {
    const Vec u0 = uniform_u0(inst, rng);
    const AugmentedObjective obj(surrogate, u0, set, ccg.penalty);
    Rng ra(mix_seed(seed, static_cast<std::uint64_t>(d) + 1));
    Rng rb = ra;
    const MultiStartResult mt = multi_start_solve(obj, trained, ccg.restarts, ccg.steps, ra);
    const MultiStartResult mf = multi_start_solve(obj, fixed, ccg.restarts, ccg.steps, rb);
    c.mean_best_F_trained += mt.best_F / draws;
    c.mean_best_F_fixed += mf.best_F / draws;
    const double learned = recourse_score(inst, eval_value_function(inst, u0, mt.xi_star, ccg.master.qp));
    const std::vector<double> s = score_batch(inst, u0, oracle, ccg.exec, ccg.master.qp);
    const double best = *std::max_element(s.begin(), s.end());
    c.shortfall.push_back((best - learned) / std::abs(best));
  }
  c.median_shortfall = median(c.shortfall);
  return c;
}

// ---- statistics and files ----------------------------------------------------------

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double iqr(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return q(0.75) - q(0.25);
}

namespace {

const char* kRowHeader =
    "method,set_kind,perturbation,seed,status,iterations,scenarios,verified,gap_ref,policy_hash,ood_max_s,"
    "ood_interior_max_dg,ood_interior_steps,time_total,time_adv_per_iter,time_master,time_verify";

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::string rows_to_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << kRowHeader << '\n';
  for (const auto& r : rows)
    os << r.method << ',' << r.set_kind << ',' << r.perturbation << ',' << r.seed << ',' << r.status << ','
       << r.iterations << ',' << r.scenarios << ',' << fmt(r.verified) << ',' << fmt(r.gap_ref) << ','
       << r.policy_hash << ',' << fmt(r.ood_max_s) << ',' << fmt(r.ood_interior_max_dg) << ','
       << r.ood_interior_steps << ',' << fmt(r.time_total) << ',' << fmt(r.time_adv_per_iter) << ','
       << fmt(r.time_master) << ',' << fmt(r.time_verify) << '\n';
  return os.str();
}

std::vector<ResultRow> rows_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kRowHeader) throw FormatError("results file: unexpected header");
  std::vector<ResultRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 17) throw FormatError("results file: expected 17 fields, got " + std::to_string(f.size()));
    ResultRow r;
    r.method = f[0];
    r.set_kind = f[1];
    r.perturbation = f[2];
    r.seed = parse_u64(f[3]);
    r.status = f[4];
    r.iterations = static_cast<int>(parse_int(f[5]));
    r.scenarios = static_cast<int>(parse_int(f[6]));
    r.verified = parse_double(f[7]);
    r.gap_ref = parse_double(f[8]);
    r.policy_hash = f[9];
    r.ood_max_s = parse_double(f[10]);
    r.ood_interior_max_dg = parse_double(f[11]);
    r.ood_interior_steps = static_cast<int>(parse_int(f[12]));
    r.time_total = parse_double(f[13]);
    r.time_adv_per_iter = parse_double(f[14]);
    r.time_master = parse_double(f[15]);
    r.time_verify = parse_double(f[16]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  std::vector<SummaryRow> out;
  std::vector<std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow& s) {
      return s.method == r.method && s.set_kind == r.set_kind && s.perturbation == r.perturbation;
    });
    if (it == out.end()) {
      out.push_back({r.method, r.set_kind, r.perturbation});
      groups.emplace_back();
      it = out.end() - 1;
    }
    groups[static_cast<std::size_t>(it - out.begin())].push_back(&r);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    std::vector<double> v, gap, iters, adv;
    for (const ResultRow* r : groups[g]) {
      v.push_back(r->verified);
      gap.push_back(std::abs(r->gap_ref));
      iters.push_back(r->iterations);
      adv.push_back(r->time_adv_per_iter);
    }
    SummaryRow& s = out[g];
    s.n = static_cast<int>(groups[g].size());
    s.median_verified = median(v);
    s.iqr_verified = iqr(v);
    s.median_abs_gap = median(gap);
    s.iqr_abs_gap = iqr(gap);
    s.median_iterations = median(iters);
    s.time_median_adv_per_iter = median(adv);
  }
  return out;
}

std::string summary_to_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "method,set_kind,perturbation,n,median_verified,iqr_verified,median_abs_gap,iqr_abs_gap,median_iterations,"
        "time_median_adv_per_iter\n";
  for (const auto& s : rows)
    os << s.method << ',' << s.set_kind << ',' << s.perturbation << ',' << s.n << ',' << fmt(s.median_verified) << ','
       << fmt(s.iqr_verified) << ',' << fmt(s.median_abs_gap) << ',' << fmt(s.iqr_abs_gap) << ','
       << fmt(s.median_iterations) << ',' << fmt(s.time_median_adv_per_iter) << '\n';
  return os.str();
}

void emit_results(const std::filesystem::path& dir, const std::string& prefix, const SuiteOutput& out) {
  if (out.rows.empty()) throw ContractError("emit_results: no rows");
  std::filesystem::create_directories(dir / "traces");
  write_text(dir / (prefix + "_rows.csv"), rows_to_csv(out.rows));
  write_text(dir / (prefix + "_summary.csv"), summary_to_csv(summarize(out.rows)));
  for (const auto& [id, trace] : out.traces) write_text(dir / "traces" / (prefix + "_" + id + ".jsonl"), trace_to_jsonl(trace));
}

std::vector<ResultRow> strip_timing(std::vector<ResultRow> rows) {
  for (auto& r : rows) r.time_total = r.time_adv_per_iter = r.time_master = r.time_verify = 0.0;
  return rows;
}

}  // namespace l2occg
