#pragma once

// Column-and-constraint generation. Each iteration solves the master over the
// scenario pool, asks an adversary for a new scenario at the master's u0,
// scores it with the exact recourse QP and stops once
//
//   (Q(u0^t, xi^{t+1}) - theta^t) / (|theta^t| + eps) <= eps.
//
// The adversary is either the learned optimizer on the surrogate or random
// multi-start search with exact QPs. The gap only ever sees exact scores.

#include <cstdint>
#include <string_view>
#include <vector>

#include "l2occg/kernels.hpp"
#include "l2occg/learned_optimizer.hpp"
#include "l2occg/master.hpp"
#include "l2occg/recourse.hpp"
#include "l2occg/serialize.hpp"
#include "l2occg/uncertainty_sets.hpp"
#include "l2occg/value_net.hpp"

namespace l2occg {

enum class AdversaryMode { learned, random_multistart };

std::string_view to_string(AdversaryMode mode);
AdversaryMode adversary_mode_from_string(std::string_view name);

inline constexpr std::uint64_t kVerifySeed = 20240001;

struct CcgConfig {
  double epsilon = 1e-3;
  int max_iters = 30;
  AdversaryMode mode = AdversaryMode::learned;
  int restarts = 10;  // M
  int steps = 50;     // K
  int n_candidates = 50;
  int verify_candidates = 500;
  std::uint64_t verify_seed = kVerifySeed;
  std::uint64_t seed = 0;
  PenaltySpec penalty;
  MasterSettings master;
  Exec exec = Exec::serial;

  void validate() const;
};

enum class CcgStatus { converged, iter_limit };

std::string_view to_string(CcgStatus status);

struct CcgIteration {
  int t = 0;
  Vec u0;
  double theta = 0.0;
  double lower_bound = 0.0;
  Vec xi;  // adversary's scenario
  double q_exact = 0.0;
  double gap = 0.0;
  bool appended = false;
  int retries = 0;
  double time_master = 0.0;
  double time_adversarial = 0.0;
  double time_verify = 0.0;
};

struct CcgTrace {
  std::vector<CcgIteration> iterations;
  std::vector<Vec> pool;
  CcgStatus status = CcgStatus::iter_limit;
};

struct CcgResult {
  Vec u0;
  double theta = 0.0;
  CcgTrace trace;
};

/// (q_true - theta) / (|theta| + epsilon).
double gap(double q_true, double theta, double epsilon);

struct AdversaryResult {
  Vec xi;
  double score = 0.0;
};

/// Max exact score over n_candidates samples; ties go to the lowest index.
AdversaryResult adversarial_random(const HvacInstance& inst, const UncertaintySet& set, const Vec& u0, int n_candidates,
                                   Rng& rng, Exec exec = Exec::serial, const QpSettings& qp = {});

/// The origin (when it is a member) followed by `size` samples drawn from a
/// stream seeded with `seed`.
std::vector<Vec> oracle_candidates(const UncertaintySet& set, int size, std::uint64_t seed);

/// First-stage cost plus the max exact score over oracle_candidates.
double verify_solution(const HvacInstance& inst, const UncertaintySet& set, const Vec& u0, int size = 500,
                       std::uint64_t seed = kVerifySeed, Exec exec = Exec::serial, const QpSettings& qp = {});

/// surrogate and policy may be null in random mode.
CcgResult ccg_solve(const HvacInstance& inst, const UncertaintySet& set, const ValueNetParams* surrogate,
                    const OptimizerPolicy* policy, const CcgConfig& cfg);

/// theta^t nondecreasing up to tol * max(1, |theta|).
bool theta_monotone(const CcgTrace& trace, double tol = 1e-6);

Json to_json(const CcgIteration& it);
/// One JSON object per iteration, then a status line.
std::string trace_to_jsonl(const CcgTrace& trace);

}  // namespace l2occg
