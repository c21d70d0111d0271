// Command-line driver: instance and dataset generation, offline training,
// online solves and the benchmark suites.
//
// Exit codes: 0 success (or converged), 2 iteration limit, 1 usage or IO error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "l2occg/bench.hpp"
#include "l2occg/ccg.hpp"
#include "l2occg/errors.hpp"
#include "l2occg/kernels.hpp"
#include "l2occg/learned_optimizer.hpp"
#include "l2occg/recourse.hpp"
#include "l2occg/serialize.hpp"
#include "l2occg/value_net.hpp"

namespace fs = std::filesystem;
using namespace l2occg;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  int jobs = 1;
  bool verbose = false;
};

Json load_config(const Common& c) { return c.config.empty() ? Json::object() : read_json(c.config); }

// Command-line seed wins over the config file's.
std::uint64_t pick_seed(const Common& c, const Json& cfg) {
  return c.seed_given ? c.seed : cfg.value("seed", std::uint64_t{0});
}

void require_parent(const fs::path& p) {
  const fs::path parent = p.parent_path();
  if (!parent.empty() && !fs::is_directory(parent))
    throw FormatError("output directory '" + parent.string() + "' does not exist");
}

void require_dir(const fs::path& p) {
  if (p.empty()) throw ContractError("--out is required");
  fs::create_directories(p);
}

HvacInstance load_instance(const std::string& path) { return instance_from_json(read_json(path)); }
UncertaintySet load_set(const std::string& path) { return set_from_json(read_json(path)); }

TrainHyper value_hyper(const Json& cfg, std::uint64_t seed, bool verbose) {
  TrainHyper h;
  h.epochs = cfg.value("epochs", h.epochs);
  h.lr = cfg.value("lr", h.lr);
  h.batch = cfg.value("batch", h.batch);
  h.patience = cfg.value("patience", h.patience);
  h.val_frac = cfg.value("val_frac", h.val_frac);
  h.seed = seed;
  h.verbose = verbose;
  return h;
}

PolicyHyper policy_hyper(const Json& cfg, std::uint64_t seed, bool verbose) {
  PolicyHyper h;
  h.epochs = cfg.value("epochs", h.epochs);
  h.K = cfg.value("K", h.K);
  h.tbptt = cfg.value("tbptt", h.tbptt);
  h.lr = cfg.value("lr", h.lr);
  h.draws = cfg.value("draws", h.draws);
  h.clip = cfg.value("clip", h.clip);
  h.val_draws = cfg.value("val_draws", h.val_draws);
  h.val_every = cfg.value("val_every", h.val_every);
  h.seed = seed;
  h.verbose = verbose;
  return h;
}

PenaltySpec penalty_from(const Json& cfg) {
  PenaltySpec p;
  p.alpha = cfg.value("alpha", p.alpha);
  p.beta = cfg.value("beta", p.beta);
  return p;
}

std::string sweep_to_csv(const std::vector<SweepPoint>& pts) {
  std::ostringstream os;
  os << "delta_gamma,seed_index,max_s\n";
  for (const auto& p : pts)
    for (std::size_t i = 0; i < p.max_s.size(); ++i) os << p.delta_gamma << ',' << i << ',' << p.max_s[i] << '\n';
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Column-and-constraint generation with a learned adversary"};
  app.require_subcommand(1);
  Common c;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { c.seed = s; c.seed_given = true; },
                                            "Random seed");
    sub->add_option("--out", c.out, "Output path");
    sub->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--verbose", c.verbose, "Progress on stderr");
  };

  auto* gen_instance = app.add_subcommand("gen-instance", "Generate a benchmark instance");
  common(gen_instance);
  std::optional<int> n_x, n_u, horizon, n_xi;
  bool time_varying = false;
  gen_instance->add_option("--n-x", n_x);
  gen_instance->add_option("--n-u", n_u);
  gen_instance->add_option("--horizon", horizon);
  gen_instance->add_option("--n-xi", n_xi);
  gen_instance->add_flag("--time-varying", time_varying);

  std::string instance_path, set_path, dataset_path, value_path, policy_path;
  int samples = 0;

  auto* gen_dataset = app.add_subcommand("gen-dataset", "Label (u0, xi) samples with exact recourse values");
  common(gen_dataset);
  gen_dataset->add_option("--instance", instance_path)->required()->check(CLI::ExistingFile);
  gen_dataset->add_option("--set", set_path)->required()->check(CLI::ExistingFile);
  gen_dataset->add_option("--samples", samples, "Number of records")->check(CLI::PositiveNumber);

  auto* train_value = app.add_subcommand("train-value", "Train the value network");
  common(train_value);
  train_value->add_option("--dataset", dataset_path, "Existing dataset CSV")->check(CLI::ExistingFile);
  train_value->add_option("--instance", instance_path)->check(CLI::ExistingFile);
  train_value->add_option("--set", set_path)->check(CLI::ExistingFile);
  train_value->add_option("--samples", samples)->check(CLI::PositiveNumber);

  auto* train_l2o = app.add_subcommand("train-l2o", "Train the learned optimizer");
  common(train_l2o);
  train_l2o->add_option("--value", value_path)->required()->check(CLI::ExistingFile);
  train_l2o->add_option("--instance", instance_path)->required()->check(CLI::ExistingFile);
  train_l2o->add_option("--set", set_path)->required()->check(CLI::ExistingFile);

  std::string mode = "learned";
  auto* solve = app.add_subcommand("solve", "Run column-and-constraint generation");
  common(solve);
  solve->add_option("--instance", instance_path)->required()->check(CLI::ExistingFile);
  solve->add_option("--set", set_path)->required()->check(CLI::ExistingFile);
  solve->add_option("--value", value_path)->check(CLI::ExistingFile);
  solve->add_option("--policy", policy_path)->check(CLI::ExistingFile);
  solve->add_option("--mode", mode)->check(CLI::IsMember({"learned", "random_multistart"}));

  auto* benchmark = app.add_subcommand("benchmark", "Run the in-distribution and out-of-distribution suites");
  common(benchmark);

  std::string solution_path;
  auto* verify = app.add_subcommand("verify", "Score a first-stage decision with the exact oracle");
  common(verify);
  verify->add_option("--instance", instance_path)->required()->check(CLI::ExistingFile);
  verify->add_option("--set", set_path)->required()->check(CLI::ExistingFile);
  verify->add_option("--solution", solution_path, "solution.json from solve")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    set_jobs(c.jobs);
    const Json cfg = load_config(c);
    const std::uint64_t seed = pick_seed(c, cfg);

    if (*gen_instance) {
      if (c.out.empty()) throw ContractError("--out is required");
      require_parent(c.out);
      GenerateOptions opt;
      HvacDims dims;
      if (cfg.contains("dims")) {
        const Json& d = cfg.at("dims");
        dims.n_x = d.value("n_x", dims.n_x);
        dims.n_u = d.value("n_u", dims.n_u);
        dims.horizon = d.value("horizon", dims.horizon);
        dims.n_xi = d.value("n_xi", dims.n_xi);
      }
      if (n_x) dims.n_x = *n_x;
      if (n_u) dims.n_u = *n_u;
      if (horizon) dims.horizon = *horizon;
      if (n_xi) dims.n_xi = *n_xi;
      opt.dims = dims;
      opt.time_varying = time_varying || cfg.value("time_varying", false);
      write_json(c.out, to_json(generate_instance(seed, opt)));
      return 0;
    }

    if (*gen_dataset) {
      if (c.out.empty()) throw ContractError("--out is required");
      require_parent(c.out);
      const int n = samples > 0 ? samples : cfg.value("samples", 5000);
      DatasetOptions opt;
      opt.out_of_set_fraction = cfg.value("out_of_set_fraction", opt.out_of_set_fraction);
      const RecourseDataset d = generate_dataset(load_instance(instance_path), load_set(set_path), n, seed, opt);
      write_dataset_csv(c.out, d);
      std::cout << "records " << d.records.size() << " resampled " << d.dropped << "\n";
      return 0;
    }

    if (*train_value) {
      require_dir(c.out);
      RecourseDataset d;
      if (!dataset_path.empty()) {
        d = read_dataset_csv(dataset_path);
      } else {
        if (instance_path.empty() || set_path.empty()) throw ContractError("train-value needs --dataset or --instance and --set");
        const int n = samples > 0 ? samples : cfg.value("samples", 5000);
        d = generate_dataset(load_instance(instance_path), load_set(set_path), n, mix_seed(seed, 0));
        write_dataset_csv(fs::path(c.out) / "dataset.csv", d);
      }
      ValueNetArch arch;
      const TrainedValueNet tv = train_value_net(d, arch, value_hyper(cfg, mix_seed(seed, 1), c.verbose));
      save_value_net(fs::path(c.out) / "value_net.json", tv.params);
      std::cout << "best epoch " << tv.history.best_epoch << " val nmse " << tv.history.best_val << "\n";
      return tv.history.diverged ? 1 : 0;
    }

    if (*train_l2o) {
      if (c.out.empty()) throw ContractError("--out is required");
      require_parent(c.out);
      const ValueNetParams vn = load_value_net(value_path);
      const TrainedPolicy tp = train_policy(vn, load_instance(instance_path), load_set(set_path), penalty_from(cfg),
                                            policy_hyper(cfg, seed, c.verbose));
      save_policy(c.out, tp.policy);
      std::cout << "baseline loss " << tp.history.val_loss.front() << " best loss " << tp.history.best_val
                << " at epoch " << tp.history.best_epoch << "\n";
      return tp.history.diverged ? 1 : 0;
    }

    if (*solve) {
      require_dir(c.out);
      const HvacInstance inst = load_instance(instance_path);
      const UncertaintySet set = load_set(set_path);
      CcgConfig cc;
      cc.mode = adversary_mode_from_string(cfg.value("mode", mode));
      cc.epsilon = cfg.value("epsilon", cc.epsilon);
      cc.max_iters = cfg.value("max_iters", cc.max_iters);
      cc.restarts = cfg.value("restarts", cc.restarts);
      cc.steps = cfg.value("steps", cc.steps);
      cc.n_candidates = cfg.value("n_candidates", cc.n_candidates);
      cc.verify_candidates = cfg.value("verify_candidates", cc.verify_candidates);
      cc.penalty = penalty_from(cfg);
      cc.seed = seed;
      cc.exec = c.jobs > 1 ? Exec::parallel : Exec::serial;
      std::optional<ValueNetParams> vn;
      std::optional<OptimizerPolicy> pol;
      if (cc.mode == AdversaryMode::learned) {
        if (value_path.empty() || policy_path.empty()) throw ContractError("learned mode needs --value and --policy");
        vn = load_value_net(value_path);
        pol = load_policy(policy_path);
      }
      const CcgResult r = ccg_solve(inst, set, vn ? &*vn : nullptr, pol ? &*pol : nullptr, cc);
      write_text(fs::path(c.out) / "trace.jsonl", trace_to_jsonl(r.trace));
      Json sol{{"u0", vector_to_json(r.u0)},
               {"theta", r.theta},
               {"status", std::string(to_string(r.trace.status))},
               {"iterations", r.trace.iterations.size()},
               {"scenarios", r.trace.pool.size() - 1}};
      write_json(fs::path(c.out) / "solution.json", sol);
      std::cout << to_string(r.trace.status) << " after " << r.trace.iterations.size() << " iterations, theta "
                << r.theta << "\n";
      return r.trace.status == CcgStatus::converged ? 0 : 2;
    }

    if (*benchmark) {
      require_dir(c.out);
      SuiteConfig sc = suite_config_from_json(cfg);
      if (c.seed_given) sc.master_seed = c.seed;
      sc.verbose = sc.verbose || c.verbose;
      if (c.jobs > 1) {
        sc.ccg.exec = Exec::parallel;
        sc.dataset.exec = Exec::parallel;
      }
      const fs::path out = c.out;
      write_json(out / "config.json", to_json(sc));
      const Provisioned prov = provision(sc);
      write_json(out / "provision.json", prov.report);
      save_value_net(out / "value_net.json", prov.surrogate);
      for (const auto& [kind, p] : prov.policies) save_policy(out / ("policy_" + kind + ".json"), p);
      emit_results(out, "ind", run_ind_suite(prov, sc));
      emit_results(out, "ood", run_ood_suite(prov, sc));
      write_text(out / "box_gamma_sweep.csv", sweep_to_csv(box_gamma_sweep(prov, sc)));
      std::cout << "results in " << out.string() << "\n";
      return 0;
    }

    if (*verify) {
      const Json sol = read_json(solution_path);
      const double v = verify_solution(load_instance(instance_path), load_set(set_path), vector_from_json(sol.at("u0")),
                                       cfg.value("verify_candidates", 500), cfg.value("verify_seed", kVerifySeed),
                                       c.jobs > 1 ? Exec::parallel : Exec::serial);
      std::cout.precision(17);
      std::cout << v << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
