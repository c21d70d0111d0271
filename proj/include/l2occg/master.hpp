#pragma once

// Master problem over a finite scenario pool:
//
//   min_{u0 in [u_lo, u_hi]}  h1(u0) + max_i Q(u0, xi_i)
//
// by Kelley cutting planes. Q is the recourse score (objective plus weighted
// slack mass), convex in u0; cut slopes come from the envelope gradient.

#include <vector>

#include "l2occg/qp.hpp"
#include "l2occg/recourse.hpp"

namespace l2occg {

struct MasterSettings {
  double tol = 1e-6;
  int max_rounds = 100;
  QpSettings qp;
};

struct Cut {
  Vec point;
  double value = 0.0;
  Vec slope;
};

/// Cuts gathered so far, one list per pooled scenario in pool order. Valid
/// across calls as long as the pool only grows at the end.
struct MasterCache {
  std::vector<std::vector<Cut>> cuts;
  Vec incumbent;
};

struct MasterResult {
  Vec u0;
  /// max_i Q(u0, xi_i) at the returned u0.
  double theta = 0.0;
  /// Cutting-plane model value; a valid lower bound on the master optimum.
  double lower_bound = 0.0;
  int rounds = 0;
  bool converged = false;
  std::vector<double> scenario_scores;
};

MasterResult solve_master(const HvacInstance& inst, const std::vector<Vec>& scenarios,
                          const MasterSettings& settings = {}, MasterCache* cache = nullptr);

}  // namespace l2occg
