#pragma once

// Dense convex QP solver:
//
//   minimize    1/2 x'Px + q'x
//   subject to  E x = e,   l <= A x <= u
//
// Equalities are eliminated through a null-space basis, the reduced problem
// is solved by an operator-splitting (ADMM) iteration with adaptive penalty,
// and an active-set polish step is attempted whenever the residuals are
// small enough that the active set has probably settled.

#include <string_view>

#include "l2occg/linalg.hpp"

namespace l2occg {

struct QpProblem {
  Mat P;
  Vec q;
  Mat E;
  Vec e;
  Mat A;
  Vec l;
  Vec u;

  Eigen::Index num_vars() const { return q.size(); }
  /// Throws DimensionError / ContractError. P must be symmetric PSD and the
  /// rows of E linearly independent.
  void validate() const;
};

struct QpSettings {
  double eps_abs = 1e-8;
  double eps_rel = 1e-8;
  double eps_infeasible = 1e-7;
  int max_iter = 20000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  int check_every = 25;
  bool polish = true;
};

enum class QpStatus { optimal, primal_infeasible, solver_limit };

std::string_view to_string(QpStatus status);

struct QpSolution {
  Vec x;
  /// Multipliers with P x + q + E'y_eq + A'y_ineq = 0. y_ineq > 0 marks an
  /// active upper bound, y_ineq < 0 an active lower bound.
  Vec y_eq;
  Vec y_ineq;
  double objective = 0.0;
  QpStatus status = QpStatus::solver_limit;
  int iterations = 0;
  bool polished = false;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
};

QpSolution solve_qp(const QpProblem& qp, const QpSettings& settings = {});

}  // namespace l2occg
