#pragma once

// Benchmark suites: provisioning (instance, pooled dataset, surrogate, one
// policy per geometry), the in-distribution comparison, the out-of-
// distribution grid with the nominal policies, and result files.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "l2occg/ccg.hpp"
#include "l2occg/learned_optimizer.hpp"
#include "l2occg/recourse.hpp"
#include "l2occg/uncertainty_sets.hpp"
#include "l2occg/value_net.hpp"

namespace l2occg {

struct NominalSetSpec {
  double box_theta = 0.3;
  double box_gamma = 1.0;
  int poly_rows = 4;
  double poly_h = 0.25;
  double ellip_sigma_a = 0.3;  // even coordinates
  double ellip_sigma_b = 0.2;  // odd coordinates
  double ellip_gamma = 1.0;
  std::vector<double> gmm_weights{0.5, 0.3, 0.2};
  double gmm_mean_radius = 0.15;
  double gmm_cov = 0.01;
  /// Mahalanobis radius of the lightest component's own level set.
  double gmm_min_radius = 2.0;
};

/// The four nominal sets, keyed by set kind name. Random parts (polytope
/// rows, mixture means) come from `seed`.
std::map<std::string, UncertaintySet> nominal_sets(int n_xi, const NominalSetSpec& spec, std::uint64_t seed);

/// rho at which the lightest component's own level set has the given radius.
double gmm_rho_for_radius(const std::vector<GmmComponent>& comps, double radius);

struct OodGrid {
  std::vector<double> box_theta{0.2, 0.4, 0.5};
  std::vector<double> box_gamma{0.8, 1.2, 1.5};
  std::vector<double> poly_h_scale{0.8, 1.2};
  std::vector<double> ellip_scale{0.7, 1.3, 1.5};
  double ellip_rotation_deg = 15.0;
  std::vector<double> gmm_shift{0.05, 0.1};
  std::vector<double> gmm_rho_scale{0.5, 2.0};
};

struct OodCell {
  std::string set_kind;
  std::string perturbation;
  UncertaintySet set;
};

/// Every grid cell built from the nominal sets.
std::vector<OodCell> ood_cells(const std::map<std::string, UncertaintySet>& nominal, const OodGrid& grid);

/// Conjugates a covariance by a Givens rotation in coordinates (0, 1).
Mat rotate_first_plane(const Mat& sigma, double degrees);

struct SuiteConfig {
  std::uint64_t instance_seed = 0;
  std::uint64_t master_seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::string> methods{"ccg_random", "l2o_ccg"};
  NominalSetSpec nominal;
  OodGrid grid;
  int samples_per_set = 1250;
  DatasetOptions dataset;
  TrainHyper value_hyper;
  ValueNetArch arch;
  PolicyHyper policy_hyper;
  CcgConfig ccg;
  int ood_steps = 50;
  std::vector<double> box_gamma_sweep{0.1, 0.2, 0.4};
  /// Reuse checkpoints instead of training when set.
  std::optional<std::filesystem::path> surrogate_checkpoint;
  std::map<std::string, std::filesystem::path> policy_checkpoints;
  bool verbose = false;

  void validate() const;
};

SuiteConfig suite_config_from_json(const Json& j);
Json to_json(const SuiteConfig& c);

struct Provisioned {
  HvacInstance inst;
  std::map<std::string, UncertaintySet> sets;
  ValueNetParams surrogate;
  std::map<std::string, OptimizerPolicy> policies;
  /// Deterministic training facts (validation losses, dataset size, hashes)
  /// plus time_ fields.
  Json report;
};

Provisioned provision(const SuiteConfig& cfg);

/// Stable hash of a policy's weights.
std::string policy_hash(const OptimizerPolicy& p);

struct ResultRow {
  std::string method;
  std::string set_kind;
  std::string perturbation;
  std::uint64_t seed = 0;
  std::string status;
  int iterations = 0;
  int scenarios = 0;  // appended to the pool beyond the origin
  double verified = 0.0;
  double gap_ref = 0.0;  // (verified - reference) / |reference| within the cell
  std::string policy_hash;
  // ood_compare against the nominal set; NaN where not applicable.
  double ood_max_s = 0.0;
  double ood_interior_max_dg = 0.0;
  int ood_interior_steps = 0;
  double time_total = 0.0;
  double time_adv_per_iter = 0.0;
  double time_master = 0.0;
  double time_verify = 0.0;
};

struct SuiteOutput {
  std::vector<ResultRow> rows;
  std::vector<std::pair<std::string, CcgTrace>> traces;  // keyed by cell id
};

SuiteOutput run_ind_suite(const Provisioned& prov, const SuiteConfig& cfg);
SuiteOutput run_ood_suite(const Provisioned& prov, const SuiteConfig& cfg);

struct SweepPoint {
  double delta_gamma = 0.0;
  std::vector<double> max_s;  // one per seed
  double median_max_s = 0.0;
};

/// Box set, policy trained at the nominal budget, out-of-distribution budget
/// nominal + delta for each delta in the sweep.
std::vector<SweepPoint> box_gamma_sweep(const Provisioned& prov, const SuiteConfig& cfg);

struct AdversaryComparison {
  double mean_best_F_trained = 0.0;
  double mean_best_F_fixed = 0.0;
  /// Median over draws of (oracle - learned) / |oracle| on exact scores.
  double median_shortfall = 0.0;
  std::vector<double> shortfall;
};

/// Held-out u0 draws; the oracle is the shared verification candidate list.
AdversaryComparison compare_adversaries(const HvacInstance& inst, const UncertaintySet& set,
                                        const ValueNetParams& surrogate, const OptimizerPolicy& trained,
                                        const CcgConfig& ccg, int draws, std::uint64_t seed);

double median(std::vector<double> v);
/// Interquartile range by linear interpolation.
double iqr(std::vector<double> v);

std::string rows_to_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> rows_from_csv(const std::string& text);

struct SummaryRow {
  std::string method, set_kind, perturbation;
  int n = 0;
  double median_verified = 0.0, iqr_verified = 0.0;
  double median_abs_gap = 0.0, iqr_abs_gap = 0.0;
  double median_iterations = 0.0;
  double time_median_adv_per_iter = 0.0;
};

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows);
std::string summary_to_csv(const std::vector<SummaryRow>& rows);

/// Writes <prefix>_rows.csv, <prefix>_summary.csv and traces/<prefix>_<cell>.jsonl.
void emit_results(const std::filesystem::path& dir, const std::string& prefix, const SuiteOutput& out);

/// Copy with every time_ field zeroed, for determinism comparisons.
std::vector<ResultRow> strip_timing(std::vector<ResultRow> rows);

}  // namespace l2occg
