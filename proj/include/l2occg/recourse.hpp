#pragma once

// HVAC-style linear MPC recourse: given the first-stage reference u0 and an
// uncertainty realisation xi, plan x_1..x_N, u_1..u_{N-1} under
//
//   x_1 = x_init,  x_{t+1} = A_t(xi) x_t + B_t(xi) u_t,
//   A_t(xi) = A0_t + sum_k xi_k a_t[k],  B_t(xi) = B0_t + sum_k xi_k b_t[k],
//   x_lo <= x_t <= x_hi,  u_lo <= u_t <= u_hi,  du_lo <= u_t - u0 <= du_hi,
//
// minimising sum_t x_t'P x_t + u_t'R u_t + x_N'P_f x_N. u0 only shifts the
// deviation bounds; it does not drive the dynamics.

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "l2occg/linalg.hpp"
#include "l2occg/qp.hpp"

namespace l2occg {

struct HvacDims {
  int n_x = 4;
  int n_u = 2;
  int horizon = 10;
  int n_xi = 5;
};

struct HvacInstance {
  HvacDims dims;
  std::uint64_t seed = 0;
  bool time_varying = false;

  // Indexed by t = 1..N-1 (stored 0-based).
  std::vector<Mat> A0, B0;
  // a[t][k], b[t][k] for k < n_xi.
  std::vector<std::vector<Mat>> a, b;

  Mat P, R, P_f;
  Vec x_lo, x_hi, u_lo, u_hi, du_lo, du_hi, x_init;

  /// Optional first-stage cost 1/2 u0'H1 u0 + c1'u0 (zero for the benchmark).
  Mat h1_quad;
  Vec h1_lin;

  double w_slack = 1e3;

  int num_states() const { return dims.horizon * dims.n_x; }
  int num_inputs() const { return (dims.horizon - 1) * dims.n_u; }
  int num_vars() const { return num_states() + num_inputs(); }

  Mat A_at(int t, const Vec& xi) const;
  Mat B_at(int t, const Vec& xi) const;
  double first_stage_cost(const Vec& u0) const;
  Vec first_stage_grad(const Vec& u0) const;

  /// Throws ContractError / DimensionError when an invariant fails.
  void validate() const;
};

struct GenerateOptions {
  std::optional<HvacDims> dims;
  bool time_varying = false;
  /// Deviation bounds are +-fraction * (u_hi - u_lo).
  double deviation_fraction = 0.25;
  /// Relative size of the per-coordinate part of the sensitivity slices and
  /// actuator columns (0 makes all coordinates interchangeable).
  double coordinate_spread = 0.1;
  int max_retries = 200;
};

/// Deterministic per seed; resamples until the nominal problem (xi = 0) is
/// feasible at the corners and midpoints of the input box.
HvacInstance generate_instance(std::uint64_t seed, const GenerateOptions& options = {});

/// Per input row: the merged bound [max(u_lo, u0+du_lo), min(u_hi, u0+du_hi)]
/// and whether each side comes from the deviation constraint.
struct InputBounds {
  Vec lo, hi;
  std::vector<bool> lo_dev, hi_dev;
};

InputBounds input_bounds(const HvacInstance& inst, const Vec& u0);

/// Layout of the inequality block of an assembled problem.
struct QpLayout {
  int n_traj = 0;      // trajectory variables
  int n_slack = 0;     // slack variables (relaxed only)
  int state_rows = 0;  // rows x_2..x_N
  int input_rows = 0;  // rows u_1..u_{N-1}
  bool relaxed = false;
};

struct AssembledQp {
  QpProblem qp;
  QpLayout layout;
  InputBounds bounds;
};

/// Stacked trajectory QP. When relaxed, each inequality row i gets a slack
/// s_i >= 0 with rows a_i'y + s_i >= l_i and a_i'y - s_i <= u_i, and the
/// cost gains w_slack * sum s.
AssembledQp assemble_qp(const HvacInstance& inst, const Vec& u0, const Vec& xi, bool relaxed);

enum class RecourseStatus { optimal, infeasible_relaxed, solver_limit };

std::string_view to_string(RecourseStatus status);

struct RecourseResult {
  double q_obj = 0.0;
  double q_fea = 0.0;
  Vec y_opt;
  /// dQ/du0 by the envelope theorem, from multipliers of the deviation rows.
  Vec grad_u0;
  /// Multipliers of the input-bound rows, one per u_t coordinate.
  Vec multipliers;
  RecourseStatus status = RecourseStatus::optimal;

  /// Ranking score q_obj + w_slack * q_fea.
  double score(double w_slack) const { return q_obj + w_slack * q_fea; }
};

RecourseResult eval_value_function(const HvacInstance& inst, const Vec& u0, const Vec& xi,
                                   const QpSettings& settings = {});

/// score() under the instance's own slack weight.
double recourse_score(const HvacInstance& inst, const RecourseResult& r);

}  // namespace l2occg
