#pragma once

// Uncertainty-set geometries: budgeted box, budgeted polyhedron, ellipsoid
// and Gaussian-mixture density level set. Every set is immutable after
// construction and all operations are pure given an explicit RNG.

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "l2occg/linalg.hpp"

namespace l2occg {

enum class SetKind { box, poly, ellip, gmm };

std::string_view to_string(SetKind kind);
SetKind set_kind_from_string(std::string_view name);

/// { |xi_j| <= theta_j, sum_j |xi_j| <= gamma }
class BoxSet {
 public:
  BoxSet(Vec theta, double gamma);

  const Vec& theta() const { return theta_; }
  double gamma() const { return gamma_; }
  Eigen::Index dim() const { return theta_.size(); }

 private:
  Vec theta_;
  double gamma_;
};

/// Box-with-budget intersected with the halfplanes H xi <= h.
class PolySet {
 public:
  PolySet(Mat H, Vec h, Vec theta, double gamma);

  const Mat& H() const { return H_; }
  const Vec& h() const { return h_; }
  const BoxSet& box() const { return box_; }
  Eigen::Index dim() const { return box_.dim(); }

 private:
  Mat H_;
  Vec h_;
  BoxSet box_;
};

/// { (xi - c)^T sigma^{-1} (xi - c) <= gamma^2 }
class EllipSet {
 public:
  EllipSet(Mat sigma, double gamma, Vec center);

  const Mat& sigma() const { return sigma_; }
  const Mat& precision() const { return precision_; }
  /// Lower Cholesky factor of sigma.
  const Mat& chol() const { return chol_; }
  double gamma() const { return gamma_; }
  const Vec& center() const { return center_; }
  Eigen::Index dim() const { return center_.size(); }

  /// sqrt((xi - c)^T sigma^{-1} (xi - c))
  double mahalanobis(const Vec& xi) const;

 private:
  Mat sigma_, precision_, chol_;
  double gamma_;
  Vec center_;
};

struct GmmComponent {
  double weight = 0.0;
  Vec mean;
  Mat cov;
};

/// { xi : sum_c w_c N(xi | mu_c, Sigma_c) >= rho }
class GmmSet {
 public:
  GmmSet(std::vector<GmmComponent> components, double rho);

  const std::vector<GmmComponent>& components() const { return components_; }
  double rho() const { return rho_; }
  Eigen::Index dim() const { return components_.front().mean.size(); }

  double density(const Vec& xi) const;
  Vec density_gradient(const Vec& xi) const;
  /// Squared Mahalanobis distance of xi to component c.
  double mahalanobis_sq(std::size_t c, const Vec& xi) const;
  /// Radius of the ellipsoid on which w_c N(.|mu_c, Sigma_c) alone equals rho.
  double component_radius(std::size_t c) const { return radius_[c]; }
  const Mat& component_precision(std::size_t c) const { return precision_[c]; }
  const Mat& component_chol(std::size_t c) const { return chol_[c]; }
  /// Lowest-index component minimising the Mahalanobis distance.
  std::size_t nearest_component(const Vec& xi) const;

 private:
  std::vector<GmmComponent> components_;
  double rho_;
  std::vector<Mat> precision_, chol_;
  std::vector<double> log_norm_, radius_;
};

class UncertaintySet {
 public:
  using Variant = std::variant<BoxSet, PolySet, EllipSet, GmmSet>;

  UncertaintySet(BoxSet s) : set_(std::move(s)) {}
  UncertaintySet(PolySet s) : set_(std::move(s)) {}
  UncertaintySet(EllipSet s) : set_(std::move(s)) {}
  UncertaintySet(GmmSet s) : set_(std::move(s)) {}

  SetKind kind() const { return static_cast<SetKind>(set_.index()); }
  Eigen::Index dim() const;
  const Variant& variant() const { return set_; }

  template <class T>
  const T& as() const {
    return std::get<T>(set_);
  }

 private:
  Variant set_;
};

struct PenaltySpec {
  double alpha = 1.0;
  double beta = 10.0;
  double smoothing = 1e-3;

  void validate() const;
};

struct ProxResult {
  Vec xi;
  bool converged = true;
  int sweeps = 0;
};

struct ProxSettings {
  int max_sweeps = 200;
  double tol = 1e-8;
};

/// Membership of all defining inequalities within tol.
bool contains(const UncertaintySet& set, const Vec& xi, double tol = 1e-9);

/// One draw that satisfies contains(., 1e-9).
Vec sample(const UncertaintySet& set, Rng& rng);

/// Euclidean projection onto { ||xi||_1 <= gamma } by sort and threshold.
Vec project_l1_ball(const Vec& v, double gamma);

/// Clamp to [-theta, theta] followed by the l1-budget projection.
Vec prox_box(const BoxSet& set, const Vec& v);

/// prox_box, then Dykstra sweeps over box, budget and halfplanes until the
/// worst violation drops below tol. A non-converged result is still the best
/// iterate and carries converged = false.
ProxResult prox_poly(const PolySet& set, const Vec& v, const ProxSettings& settings = {});

/// Radial scaling toward the centre: c + d * min(1, gamma / ||d||_{sigma^-1}).
Vec prox_ellip(const EllipSet& set, const Vec& v);

/// Identity if the mixture density already reaches rho; otherwise radial
/// projection onto the Mahalanobis-nearest component ellipsoid.
Vec prox_gmm(const GmmSet& set, const Vec& v);

ProxResult prox(const UncertaintySet& set, const Vec& v, const ProxSettings& settings = {});

/// Vector-Jacobian product of prox at v (output y = prox(v)): returns
/// J(v)^T grad. Exact almost everywhere for box, ellipsoid and GMM; for the
/// polyhedron the Dykstra stage is linearised on the active face at y.
Vec prox_vjp(const UncertaintySet& set, const Vec& v, const Vec& y, const Vec& grad);

/// Budget statistic S(xi; omega): weighted l1 deviation with
/// omega = theta (box/poly), Mahalanobis quadratic form (ellipsoid),
/// rho - density (GMM).
double budget_statistic(const UncertaintySet& set, const Vec& xi);

/// Budget level the penalty compares against.
double budget_threshold(const UncertaintySet& set);

/// One smoothed-hinge term of the set penalty: phi(t) with gradient of t.
struct HingeTerm {
  double t = 0.0;
  Vec grad_t;
};

/// Constraint functionals whose non-positivity defines the set. Each term's
/// argument t depends on the budget only through a constant shift.
std::vector<HingeTerm> hinge_terms(const UncertaintySet& set, const Vec& xi);

/// phi(t): 0 for t <= 0, t^2 / (2w) on (0, w], t - w/2 beyond.
double smoothed_hinge(double t, double width);
double smoothed_hinge_slope(double t, double width);

struct PenaltyValue {
  double value = 0.0;
  Vec grad;
};

/// r = alpha * sum phi(t_i), g = alpha * sum phi'(t_i) grad t_i. Both are
/// exactly zero whenever every t_i <= 0.
PenaltyValue penalty_and_subgradient(const UncertaintySet& set, const PenaltySpec& spec, const Vec& xi);

/// True when every hinge argument is strictly negative.
bool strictly_interior(const UncertaintySet& set, const Vec& xi);

}  // namespace l2occg
