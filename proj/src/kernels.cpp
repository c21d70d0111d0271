#include "l2occg/kernels.hpp"

#include <algorithm>
#include <atomic>

#include <omp.h>

namespace l2occg {

namespace {
std::atomic<int> g_jobs{1};
}

void set_jobs(int n) { g_jobs = std::max(1, n); }
int jobs() { return g_jobs; }

void for_each_index(std::size_t n, Exec exec, const std::function<void(std::size_t)>& body) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<long>(n);
  if (exec == Exec::parallel && jobs() > 1) {
#pragma omp parallel for schedule(dynamic) num_threads(jobs())
    for (long i = 0; i < count; ++i) {
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  } else {
    for (long i = 0; i < count; ++i) {
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<RecourseResult> evaluate_batch(const HvacInstance& inst, std::span<const EvalRequest> requests,
                                           Exec exec, const QpSettings& settings) {
  std::vector<RecourseResult> out(requests.size());
  for_each_index(requests.size(), exec, [&](std::size_t i) {
    out[i] = eval_value_function(inst, requests[i].u0, requests[i].xi, settings);
  });
  return out;
}

std::vector<double> score_batch(const HvacInstance& inst, const Vec& u0, std::span<const Vec> xis, Exec exec,
                                const QpSettings& settings) {
  std::vector<double> out(xis.size());
  for_each_index(xis.size(), exec, [&](std::size_t i) {
    out[i] = recourse_score(inst, eval_value_function(inst, u0, xis[i], settings));
  });
  return out;
}

}  // namespace l2occg
