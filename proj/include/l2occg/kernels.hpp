#pragma once

// Batched exact recourse evaluation. The serial path is the reference; the
// OpenMP path writes results by index, so both return identical vectors.

#include <cstddef>
#include <exception>
#include <functional>
#include <span>
#include <vector>

#include "l2occg/linalg.hpp"
#include "l2occg/qp.hpp"
#include "l2occg/recourse.hpp"

namespace l2occg {

enum class Exec { serial, parallel };

/// Worker count for Exec::parallel (clamped to >= 1).
void set_jobs(int jobs);
int jobs();

/// Runs body(i) for i in [0, n). Exceptions are captured per index and the
/// lowest-index one is rethrown after every index has run.
void for_each_index(std::size_t n, Exec exec, const std::function<void(std::size_t)>& body);

struct EvalRequest {
  Vec u0;
  Vec xi;
};

std::vector<RecourseResult> evaluate_batch(const HvacInstance& inst, std::span<const EvalRequest> requests,
                                           Exec exec, const QpSettings& settings = {});

/// recourse_score of every xi at a common u0.
std::vector<double> score_batch(const HvacInstance& inst, const Vec& u0, std::span<const Vec> xis, Exec exec,
                                const QpSettings& settings = {});

}  // namespace l2occg
