#pragma once

// Learned proximal-gradient adversary. The objective is
//
//   F(xi) = f(xi) + r(xi),  f = -Qhat_obj + beta * phi(Qhat_fea),
//
// with Qhat in the surrogate's normalised units and r the set penalty. A
// coordinatewise LSTM maps per-coordinate features (df/dxi_j, g_j, v_j) to
// diagonal gains (R, Q, B) in (0,1) and the iterate moves by
//
//   v_k = Q v_{k-1} + (1 - Q) grad f,  xi_{k+1} = prox(xi_k - R grad f - B v_k).
//
// The set's parameters reach the iteration only through prox and r; the
// policy never sees them.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "l2occg/diffkit.hpp"
#include "l2occg/linalg.hpp"
#include "l2occg/recourse.hpp"
#include "l2occg/serialize.hpp"
#include "l2occg/uncertainty_sets.hpp"
#include "l2occg/value_net.hpp"

namespace l2occg {

struct FEval {
  double F = 0.0;
  double f = 0.0;
  double r = 0.0;
  Vec grad_f;
  Vec g_r;
};

class AugmentedObjective {
 public:
  AugmentedObjective(const ValueNetParams& surrogate, Vec u0, UncertaintySet set, PenaltySpec penalty = {});

  FEval eval(const Vec& xi) const;

  /// One xi per row. F is per row; grad_f and g_r have the shape of xis.
  void eval_batch(const Mat& xis, Vec& F, Mat& grad_f, Mat& g_r) const;

  const UncertaintySet& set() const { return set_; }
  const Vec& u0() const { return u0_; }
  const PenaltySpec& penalty() const { return penalty_; }
  const ValueNetParams& surrogate() const { return *net_; }

 private:
  const ValueNetParams* net_;
  Vec u0_;
  UncertaintySet set_;
  PenaltySpec penalty_;
  SurrogateEval eval_;
};

FEval eval_F(const AugmentedObjective& obj, const Vec& xi);

struct LstmGate {
  Mat W;  // 3 x hidden
  Mat U;  // hidden x hidden
  Vec b;
};

struct OptimizerPolicy {
  static constexpr int kFeatures = 3;

  int hidden = 16;
  std::array<LstmGate, 4> gates;  // input, forget, cell, output
  Mat W_out;                      // hidden x 3
  Vec b_out;
  /// Set the policy was trained on. Kept for provenance only.
  std::string train_set_hash;

  /// Random cell weights and a zero output map, so the initial gains are
  /// exactly 0.5.
  static OptimizerPolicy init(int hidden, std::uint64_t seed);
  /// All-zero weights: the fixed (0.5, 0.5, 0.5) policy.
  static OptimizerPolicy fixed_half(int hidden = 16);

  std::vector<diff::Tensor> pack() const;
  void unpack(std::span<const diff::Tensor> t);
};

/// Per-coordinate recurrent state, one row per coordinate.
struct PolicyState {
  Mat h, c;

  static PolicyState zeros(Eigen::Index rows, int hidden);
};

struct PolicyOutput {
  Mat gains;  // rows x 3: (R, Q, B) after the sigmoid
  PolicyState next;
};

/// The same cell applied to every row of z (rows x 3).
PolicyOutput policy_step(const OptimizerPolicy& policy, const Mat& z, const PolicyState& state);

struct AdvState {
  Vec xi;
  Vec v;
  PolicyState hidden;
};

struct StepInfo {
  Vec R, Q, B;
  Vec features;  // (grad f, g, v_prev) stacked per coordinate, rows x 3 flattened row-major
  FEval at_start;
  bool prox_converged = true;
};

AdvState adversarial_step(const AugmentedObjective& obj, const OptimizerPolicy& policy, const AdvState& state,
                          StepInfo* info = nullptr);

struct AdvTrajectory {
  std::vector<Vec> xi;  // xi_0 .. xi_K
  std::vector<Vec> v;   // v_0 .. v_K (v_0 = 0)
  std::vector<Vec> R, Q, B;
  std::vector<double> F;  // F(xi_k), k = 0..K
  int restart = 0;
  double wall_time = 0.0;
};

/// xi_0 is projected into the set first if it is not a member.
AdvTrajectory run_adversarial(const AugmentedObjective& obj, const OptimizerPolicy& policy, const Vec& xi0, int K);

struct MultiStartResult {
  Vec xi_star;
  double best_F = 0.0;
  int best_restart = 0;
  std::vector<double> final_F;
  std::vector<AdvTrajectory> trajectories;  // filled when requested
  int prox_failures = 0;
};

/// M restarts from independent set samples, run in lockstep. The best
/// final iterate wins; exact ties go to the lowest restart index.
MultiStartResult multi_start_solve(const AugmentedObjective& obj, const OptimizerPolicy& policy, int M, int K, Rng& rng,
                                   bool keep_trajectories = false);

/// Lockstep run from given starting rows; returns the final iterates.
Mat run_lockstep(const AugmentedObjective& obj, const OptimizerPolicy& policy, const Mat& xi0, int K, Vec& final_F,
                 std::vector<AdvTrajectory>* trajectories = nullptr, int* prox_failures = nullptr);

struct PolicyHyper {
  int K = 50;
  int tbptt = 10;
  double lr = 3e-4;
  int epochs = 200;
  int draws = 64;
  double clip = 1.0;
  std::uint64_t seed = 0;
  int val_draws = 32;
  int val_every = 10;
  bool prox_in_training = true;
  bool verbose = false;
};

struct PolicyHistory {
  std::vector<double> train_loss;
  std::vector<int> val_epoch;
  std::vector<double> val_loss;
  int best_epoch = 0;
  double best_val = 0.0;
  bool diverged = false;
};

struct TrainedPolicy {
  OptimizerPolicy policy;
  PolicyHistory history;
};

/// Mean over draws of (1/K) sum_{k=1..K} F(xi_k), with u0 uniform on the
/// instance's input box and xi_0 sampled from the set.
double unrolled_loss(const ValueNetParams& surrogate, const HvacInstance& inst, const UncertaintySet& set,
                     const PenaltySpec& penalty, const OptimizerPolicy& policy, int K, int draws, std::uint64_t seed);

/// Unrolled training with truncated backpropagation. grad f enters the
/// update as a feature and is not differentiated through.
TrainedPolicy train_policy(const ValueNetParams& surrogate, const HvacInstance& inst, const UncertaintySet& set,
                           const PenaltySpec& penalty, const PolicyHyper& hyper, const OptimizerPolicy* init = nullptr);

struct OodDiagnostics {
  std::vector<double> s_norm;   // ||xi_out,k - xi_in,k||
  std::vector<double> delta_g;  // ||g_out,k - g_in,k||
  std::vector<double> delta_z;  // ||z_out,k - z_in,k||
  std::vector<bool> interior;   // both iterates strictly interior
  double max_s = 0.0;
  /// max_k (||s_{k+1}|| - ||s_k||) / ||delta_z_k|| over k with delta_z_k > 0.
  double max_ratio = 0.0;
  /// Largest delta_g over strictly interior iterations.
  double interior_max_delta_g = 0.0;
};

OodDiagnostics ood_compare(const AugmentedObjective& obj_in, const AugmentedObjective& obj_out,
                           const OptimizerPolicy& policy, const Vec& xi0, int K);

Json to_json(const OptimizerPolicy& p);
OptimizerPolicy policy_from_json(const Json& j);
void save_policy(const std::filesystem::path& path, const OptimizerPolicy& p);
OptimizerPolicy load_policy(const std::filesystem::path& path);

}  // namespace l2occg
