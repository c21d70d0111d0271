#pragma once

// Small shared builders for the unit and acceptance tests.

#include <cmath>
#include <numbers>
#include <vector>

#include "l2occg/linalg.hpp"
#include "l2occg/uncertainty_sets.hpp"

namespace fixture {

using l2occg::Mat;
using l2occg::Rng;
using l2occg::Vec;

inline Vec gaussian(Eigen::Index n, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> N(0.0, sd);
  Vec v(n);
  for (auto& x : v) x = N(rng);
  return v;
}

inline l2occg::BoxSet box(int n, double theta = 0.3, double gamma = 1.0) {
  return {Vec::Constant(n, theta), gamma};
}

inline l2occg::PolySet poly(int n, Rng& rng, int rows = 4, double h = 0.25) {
  Mat H(rows, n);
  for (int i = 0; i < rows; ++i) H.row(i) = gaussian(n, rng).normalized().transpose();
  return {H, Vec::Constant(rows, h), Vec::Constant(n, 0.3), 1.0};
}

/// Correlated covariance so the ellipsoid metric differs from Euclidean.
inline l2occg::EllipSet ellip(int n, Rng& rng, double gamma = 1.0) {
  Mat L = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    L(i, i) = 0.2 + 0.1 * (i % 2);
    for (int j = 0; j < i; ++j) L(i, j) = 0.03 * gaussian(1, rng)[0];
  }
  return {L * L.transpose(), gamma, Vec::Zero(n)};
}

/// Density level at which a component's own ellipsoid has the given
/// Mahalanobis radius.
inline double rho_at_radius(double weight, const Mat& cov, double radius) {
  const double n = static_cast<double>(cov.rows());
  return weight * std::exp(-0.5 * radius * radius) /
         (std::pow(2.0 * std::numbers::pi, n / 2.0) * std::sqrt(cov.determinant()));
}

inline l2occg::GmmSet gmm(int n, Rng& rng) {
  std::vector<l2occg::GmmComponent> comps;
  const std::vector<double> w{0.5, 0.3, 0.2};
  for (double wc : w) comps.push_back({wc, 0.15 * gaussian(n, rng).normalized(), 0.01 * Mat::Identity(n, n)});
  return {comps, rho_at_radius(0.2, comps.back().cov, 2.0)};
}

inline std::vector<l2occg::UncertaintySet> all_sets(int n, std::uint64_t seed) {
  Rng rng(seed);
  return {box(n), poly(n, rng), ellip(n, rng), gmm(n, rng)};
}

}  // namespace fixture
