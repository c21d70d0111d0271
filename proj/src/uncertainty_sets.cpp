#include "l2occg/uncertainty_sets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "l2occg/errors.hpp"

namespace l2occg {

namespace {

constexpr int kRejectionBudget = 10000;

double sgn(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

void require_dim(Eigen::Index expected, const Vec& v, const char* what) {
  if (v.size() != expected)
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(expected) + ", got " +
                         std::to_string(v.size()));
}

Mat checked_chol(const Mat& m, const char* what) {
  if (m.rows() != m.cols()) throw DimensionError(std::string(what) + ": matrix must be square");
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff()))
    throw ContractError(std::string(what) + ": matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> eig(m, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() <= 1e-8)
    throw ContractError(std::string(what) + ": matrix is not positive definite");
  Eigen::LLT<Mat> llt(m);
  return llt.matrixL();
}

Vec unit_direction(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec d(n);
  double norm = 0.0;
  while (norm < 1e-12) {
    for (Eigen::Index i = 0; i < n; ++i) d[i] = normal(rng);
    norm = d.norm();
  }
  return d / norm;
}

Vec uniform_in_box(const Vec& theta, Rng& rng) {
  Vec xi(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    std::uniform_real_distribution<double> u(-theta[j], theta[j]);
    xi[j] = u(rng);
  }
  return xi;
}

bool box_contains(const BoxSet& s, const Vec& xi, double tol) {
  for (Eigen::Index j = 0; j < xi.size(); ++j)
    if (std::abs(xi[j]) > s.theta()[j] + tol) return false;
  return xi.lpNorm<1>() <= s.gamma() + tol;
}

bool poly_contains(const PolySet& s, const Vec& xi, double tol) {
  if (!box_contains(s.box(), xi, tol)) return false;
  if (s.H().rows() == 0) return true;
  return ((s.H() * xi - s.h()).array() <= tol).all();
}

double poly_violation(const PolySet& s, const Vec& xi) {
  double v = std::max(0.0, xi.lpNorm<1>() - s.box().gamma());
  for (Eigen::Index j = 0; j < xi.size(); ++j) v = std::max(v, std::abs(xi[j]) - s.box().theta()[j]);
  if (s.H().rows() > 0) v = std::max(v, (s.H() * xi - s.h()).maxCoeff());
  return v;
}

// Largest t in [0, hi] with ||x + t d||_1 <= gamma, given ||x||_1 <= gamma.
double l1_chord(const Vec& x, const Vec& d, double gamma, double hi) {
  if ((x + hi * d).lpNorm<1>() <= gamma) return hi;
  double lo = 0.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if ((x + mid * d).lpNorm<1>() <= gamma)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

Vec hit_and_run(const PolySet& s, Rng& rng, int steps) {
  const auto n = s.dim();
  Vec x = Vec::Zero(n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int step = 0; step < steps; ++step) {
    const Vec d = unit_direction(n, rng);
    double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(d[j]) < 1e-15) continue;
      const double a = (s.box().theta()[j] - x[j]) / d[j];
      const double b = (-s.box().theta()[j] - x[j]) / d[j];
      lo = std::max(lo, std::min(a, b));
      hi = std::min(hi, std::max(a, b));
    }
    for (Eigen::Index i = 0; i < s.H().rows(); ++i) {
      const double hd = s.H().row(i).dot(d);
      const double slack = s.h()[i] - s.H().row(i).dot(x);
      if (hd > 1e-15)
        hi = std::min(hi, slack / hd);
      else if (hd < -1e-15)
        lo = std::max(lo, slack / hd);
    }
    hi = l1_chord(x, d, s.box().gamma(), std::max(hi, 0.0));
    lo = -l1_chord(x, -d, s.box().gamma(), std::max(-lo, 0.0));
    if (hi - lo <= 0.0) continue;
    x += (lo + (hi - lo) * unit(rng)) * d;
  }
  return x;
}

Vec radial(const Vec& v, const Vec& center, const Mat& precision, double radius) {
  const Vec d = v - center;
  const double m = std::sqrt(std::max(0.0, d.dot(precision * d)));
  if (m <= radius) return v;
  return center + d * (radius / m);
}

// J^T g for the radial map above (the Jacobian is not symmetric).
Vec radial_vjp(const Vec& v, const Vec& center, const Mat& precision, double radius, const Vec& g) {
  const Vec d = v - center;
  const double m = std::sqrt(std::max(0.0, d.dot(precision * d)));
  if (m <= radius) return g;
  const Vec md = precision * d;
  return (radius / m) * g - (radius * g.dot(d) / (m * m * m)) * md;
}

Vec l1_vjp(const Vec& c, double gamma, const Vec& g) {
  if (c.lpNorm<1>() <= gamma) return g;
  const Vec y = project_l1_ball(c, gamma);
  double support = 0.0, dot = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) continue;
    support += 1.0;
    dot += sgn(c[i]) * g[i];
  }
  Vec out = Vec::Zero(g.size());
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y[i] != 0.0) out[i] = g[i] - sgn(c[i]) * dot / support;
  return out;
}

Vec box_vjp(const BoxSet& s, const Vec& v, const Vec& g) {
  const Vec c = v.cwiseMax(-s.theta()).cwiseMin(s.theta());
  Vec w = l1_vjp(c, s.gamma(), g);
  for (Eigen::Index j = 0; j < v.size(); ++j)
    if (std::abs(v[j]) >= s.theta()[j]) w[j] = 0.0;
  return w;
}

// Projection onto the tangent of the active face of the polyhedron at y.
Vec face_projection(const PolySet& s, const Vec& y, const Vec& g) {
  constexpr double kActive = 1e-9;
  const auto n = y.size();
  std::vector<Vec> normals;
  const auto& theta = s.box().theta();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (std::abs(y[j]) >= theta[j] - kActive) normals.push_back(Vec::Unit(n, j));
  }
  if (y.lpNorm<1>() >= s.box().gamma() - kActive) {
    Vec sign(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      sign[j] = sgn(y[j]);
      if (std::abs(y[j]) < 1e-12) normals.push_back(Vec::Unit(n, j));
    }
    normals.push_back(sign);
  }
  for (Eigen::Index i = 0; i < s.H().rows(); ++i)
    if (s.H().row(i).dot(y) >= s.h()[i] - kActive) normals.push_back(s.H().row(i).transpose());
  if (normals.empty()) return g;
  Mat N(n, static_cast<Eigen::Index>(normals.size()));
  for (std::size_t k = 0; k < normals.size(); ++k) N.col(static_cast<Eigen::Index>(k)) = normals[k];
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(N);
  return g - N * cod.solve(g);
}

}  // namespace

std::string_view to_string(SetKind kind) {
  switch (kind) {
    case SetKind::box: return "box";
    case SetKind::poly: return "poly";
    case SetKind::ellip: return "ellip";
    case SetKind::gmm: return "gmm";
  }
  return "?";
}

SetKind set_kind_from_string(std::string_view name) {
  if (name == "box") return SetKind::box;
  if (name == "poly") return SetKind::poly;
  if (name == "ellip") return SetKind::ellip;
  if (name == "gmm") return SetKind::gmm;
  throw ContractError("unknown set kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- construction

BoxSet::BoxSet(Vec theta, double gamma) : theta_(std::move(theta)), gamma_(gamma) {
  if (theta_.size() == 0) throw DimensionError("box set needs at least one coordinate");
  if ((theta_.array() <= 0.0).any()) throw ContractError("box set: theta must be strictly positive");
  if (!(gamma_ > 0.0)) throw ContractError("box set: gamma must be positive");
}

PolySet::PolySet(Mat H, Vec h, Vec theta, double gamma)
    : H_(std::move(H)), h_(std::move(h)), box_(std::move(theta), gamma) {
  if (H_.rows() != h_.size()) throw DimensionError("poly set: H rows and h length differ");
  if (H_.rows() > 0 && H_.cols() != box_.dim()) throw DimensionError("poly set: H has the wrong column count");
  if (H_.rows() == 0) H_.resize(0, box_.dim());
  for (Eigen::Index i = 0; i < H_.rows(); ++i)
    if (H_.row(i).norm() == 0.0) throw ContractError("poly set: H has a zero row");
  if ((h_.array() < 0.0).any()) throw ContractError("poly set: the origin must satisfy H xi <= h");
}

EllipSet::EllipSet(Mat sigma, double gamma, Vec center)
    : sigma_(std::move(sigma)), gamma_(gamma), center_(std::move(center)) {
  if (sigma_.rows() != center_.size()) throw DimensionError("ellipsoid: sigma and center sizes differ");
  chol_ = checked_chol(sigma_, "ellipsoid sigma");
  precision_ = sigma_.llt().solve(Mat::Identity(sigma_.rows(), sigma_.cols()));
  precision_ = 0.5 * (precision_ + precision_.transpose()).eval();
  if (!(gamma_ > 0.0)) throw ContractError("ellipsoid: gamma must be positive");
}

double EllipSet::mahalanobis(const Vec& xi) const {
  const Vec d = xi - center_;
  return std::sqrt(std::max(0.0, d.dot(precision_ * d)));
}

GmmSet::GmmSet(std::vector<GmmComponent> components, double rho)
    : components_(std::move(components)), rho_(rho) {
  if (components_.empty()) throw ContractError("gmm set: no components");
  if (!(rho_ > 0.0)) throw ContractError("gmm set: rho must be positive");
  const auto n = components_.front().mean.size();
  double wsum = 0.0;
  for (const auto& c : components_) {
    if (c.mean.size() != n || c.cov.rows() != n) throw DimensionError("gmm set: component dimensions differ");
    if (!(c.weight > 0.0)) throw ContractError("gmm set: weights must be positive");
    wsum += c.weight;
    Mat L = checked_chol(c.cov, "gmm covariance");
    double logdet = 2.0 * L.diagonal().array().log().sum();
    Mat prec = c.cov.llt().solve(Mat::Identity(n, n));
    precision_.push_back(0.5 * (prec + prec.transpose()));
    chol_.push_back(std::move(L));
    const double log_norm = 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + 0.5 * logdet;
    log_norm_.push_back(log_norm);
    const double r2 = 2.0 * (std::log(c.weight) - std::log(rho_) - log_norm);
    if (!(r2 > 0.0))
      throw ContractError("gmm set: a component's level set at rho is empty (weight too small for rho)");
    radius_.push_back(std::sqrt(r2));
  }
  if (std::abs(wsum - 1.0) > 1e-10) throw ContractError("gmm set: weights must sum to one");
  for (const auto& c : components_)
    if (density(c.mean) < rho_) throw ContractError("gmm set: mixture density at a component mean is below rho");
}

double GmmSet::mahalanobis_sq(std::size_t c, const Vec& xi) const {
  const Vec d = xi - components_[c].mean;
  return d.dot(precision_[c] * d);
}

double GmmSet::density(const Vec& xi) const {
  double p = 0.0;
  for (std::size_t c = 0; c < components_.size(); ++c)
    p += components_[c].weight * std::exp(-0.5 * mahalanobis_sq(c, xi) - log_norm_[c]);
  return p;
}

Vec GmmSet::density_gradient(const Vec& xi) const {
  Vec g = Vec::Zero(xi.size());
  for (std::size_t c = 0; c < components_.size(); ++c) {
    const Vec d = xi - components_[c].mean;
    const Vec pd = precision_[c] * d;
    const double pc = components_[c].weight * std::exp(-0.5 * d.dot(pd) - log_norm_[c]);
    g -= pc * pd;
  }
  return g;
}

std::size_t GmmSet::nearest_component(const Vec& xi) const {
  std::size_t best = 0;
  double best_d = mahalanobis_sq(0, xi);
  for (std::size_t c = 1; c < components_.size(); ++c) {
    const double d = mahalanobis_sq(c, xi);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

Eigen::Index UncertaintySet::dim() const {
  return std::visit([](const auto& s) { return s.dim(); }, set_);
}

void PenaltySpec::validate() const {
  if (alpha < 0.0 || beta < 0.0) throw ContractError("penalty weights must be non-negative");
  if (!(smoothing > 0.0)) throw ContractError("penalty smoothing must be positive");
}

// ---------------------------------------------------------------- membership

bool contains(const UncertaintySet& set, const Vec& xi, double tol) {
  require_dim(set.dim(), xi, "contains");
  switch (set.kind()) {
    case SetKind::box:
      return box_contains(set.as<BoxSet>(), xi, tol);
    case SetKind::poly:
      return poly_contains(set.as<PolySet>(), xi, tol);
    case SetKind::ellip: {
      const auto& s = set.as<EllipSet>();
      return s.mahalanobis(xi) <= s.gamma() + tol;
    }
    case SetKind::gmm: {
      // Relative tolerance: densities live on a very different scale from xi.
      const auto& s = set.as<GmmSet>();
      return s.density(xi) >= s.rho() * (1.0 - tol);
    }
  }
  return false;
}

// ---------------------------------------------------------------- sampling

Vec sample(const UncertaintySet& set, Rng& rng) {
  switch (set.kind()) {
    case SetKind::box: {
      const auto& s = set.as<BoxSet>();
      for (int k = 0; k < kRejectionBudget; ++k) {
        Vec xi = uniform_in_box(s.theta(), rng);
        if (xi.lpNorm<1>() <= s.gamma()) return xi;
      }
      // Budget far below sum(theta): fall back to projecting a box draw.
      return prox_box(s, uniform_in_box(s.theta(), rng));
    }
    case SetKind::poly: {
      const auto& s = set.as<PolySet>();
      for (int k = 0; k < kRejectionBudget; ++k) {
        Vec xi = uniform_in_box(s.box().theta(), rng);
        if (poly_contains(s, xi, 0.0)) return xi;
      }
      Vec xi = hit_and_run(s, rng, 50);
      if (!poly_contains(s, xi, 1e-9))
        throw SamplingError("poly set: hit-and-run fallback left the set (violation " +
                            std::to_string(poly_violation(s, xi)) + ")");
      return xi;
    }
    case SetKind::ellip: {
      const auto& s = set.as<EllipSet>();
      const auto n = s.dim();
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const Vec u = unit_direction(n, rng);
      const double r = std::pow(unit(rng), 1.0 / static_cast<double>(n));
      return s.center() + s.gamma() * r * (s.chol() * u);
    }
    case SetKind::gmm: {
      const auto& s = set.as<GmmSet>();
      std::vector<double> w;
      for (const auto& c : s.components()) w.push_back(c.weight);
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      std::normal_distribution<double> normal(0.0, 1.0);
      const auto n = s.dim();
      for (int k = 0; k < kRejectionBudget; ++k) {
        const std::size_t c = pick(rng);
        Vec z(n);
        for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
        Vec xi = s.components()[c].mean + s.component_chol(c) * z;
        if (s.density(xi) >= s.rho()) return xi;
      }
      throw SamplingError("gmm set: no draw reached density rho=" + std::to_string(s.rho()) + " in " +
                          std::to_string(kRejectionBudget) + " attempts");
    }
  }
  return {};
}

// ---------------------------------------------------------------- projections

Vec project_l1_ball(const Vec& v, double gamma) {
  if (gamma < 0.0) throw ContractError("project_l1_ball: negative budget");
  if (v.lpNorm<1>() <= gamma) return v;
  if (gamma == 0.0) return Vec::Zero(v.size());
  std::vector<double> u(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) u[static_cast<std::size_t>(i)] = std::abs(v[i]);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, tau = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double candidate = (cumsum - gamma) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) tau = candidate;
  }
  Vec y(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) y[i] = sgn(v[i]) * std::max(std::abs(v[i]) - tau, 0.0);
  return y;
}

Vec prox_box(const BoxSet& set, const Vec& v) {
  require_dim(set.dim(), v, "prox_box");
  return project_l1_ball(v.cwiseMax(-set.theta()).cwiseMin(set.theta()), set.gamma());
}

ProxResult prox_poly(const PolySet& set, const Vec& v, const ProxSettings& settings) {
  require_dim(set.dim(), v, "prox_poly");
  ProxResult out;
  if (poly_contains(set, v, settings.tol)) {
    out.xi = v;
    return out;
  }
  Vec x = prox_box(set.box(), v);
  if (poly_violation(set, x) < settings.tol) {
    out.xi = x;
    return out;
  }

  // Dykstra over {clamp, l1 ball, halfplane_1 .. halfplane_m}, cyclic order.
  const auto m = set.H().rows();
  const auto blocks = static_cast<std::size_t>(m + 2);
  std::vector<Vec> incr(blocks, Vec::Zero(x.size()));
  const Vec& theta = set.box().theta();
  Vec best = x;
  double best_violation = poly_violation(set, x);
  out.converged = false;
  for (int sweep = 1; sweep <= settings.max_sweeps; ++sweep) {
    const Vec before = x;
    for (std::size_t k = 0; k < blocks; ++k) {
      const Vec z = x + incr[k];
      Vec y;
      if (k == 0) {
        y = z.cwiseMax(-theta).cwiseMin(theta);
      } else if (k == 1) {
        y = project_l1_ball(z, set.box().gamma());
      } else {
        const auto i = static_cast<Eigen::Index>(k - 2);
        const auto row = set.H().row(i);
        const double excess = row.dot(z) - set.h()[i];
        y = excess > 0.0 ? Vec(z - (excess / row.squaredNorm()) * row.transpose()) : z;
      }
      incr[k] = z - y;
      x = y;
    }
    out.sweeps = sweep;
    const double violation = poly_violation(set, x);
    if (violation < best_violation) {
      best_violation = violation;
      best = x;
    }
    if (violation < settings.tol && (x - before).lpNorm<Eigen::Infinity>() < 1e-3 * settings.tol) {
      out.converged = true;
      best = x;
      break;
    }
  }
  if (!out.converged && best_violation < settings.tol) out.converged = true;
  out.xi = best;
  return out;
}

Vec prox_ellip(const EllipSet& set, const Vec& v) {
  require_dim(set.dim(), v, "prox_ellip");
  return radial(v, set.center(), set.precision(), set.gamma());
}

Vec prox_gmm(const GmmSet& set, const Vec& v) {
  require_dim(set.dim(), v, "prox_gmm");
  if (set.density(v) >= set.rho()) return v;
  const std::size_t c = set.nearest_component(v);
  return radial(v, set.components()[c].mean, set.component_precision(c), set.component_radius(c));
}

ProxResult prox(const UncertaintySet& set, const Vec& v, const ProxSettings& settings) {
  switch (set.kind()) {
    case SetKind::box:
      return {prox_box(set.as<BoxSet>(), v)};
    case SetKind::poly:
      return prox_poly(set.as<PolySet>(), v, settings);
    case SetKind::ellip:
      return {prox_ellip(set.as<EllipSet>(), v)};
    case SetKind::gmm:
      return {prox_gmm(set.as<GmmSet>(), v)};
  }
  return {};
}

Vec prox_vjp(const UncertaintySet& set, const Vec& v, const Vec& y, const Vec& grad) {
  require_dim(set.dim(), grad, "prox_vjp");
  switch (set.kind()) {
    case SetKind::box:
      return box_vjp(set.as<BoxSet>(), v, grad);
    case SetKind::poly: {
      const auto& s = set.as<PolySet>();
      if (poly_contains(s, v, 0.0)) return grad;
      const Vec first = prox_box(s.box(), v);
      const Vec g = (y - first).lpNorm<Eigen::Infinity>() > 0.0 ? face_projection(s, y, grad) : grad;
      return box_vjp(s.box(), v, g);
    }
    case SetKind::ellip: {
      const auto& s = set.as<EllipSet>();
      return radial_vjp(v, s.center(), s.precision(), s.gamma(), grad);
    }
    case SetKind::gmm: {
      const auto& s = set.as<GmmSet>();
      if (s.density(v) >= s.rho()) return grad;
      const std::size_t c = s.nearest_component(v);
      return radial_vjp(v, s.components()[c].mean, s.component_precision(c), s.component_radius(c), grad);
    }
  }
  return grad;
}

// ---------------------------------------------------------------- penalty

double budget_statistic(const UncertaintySet& set, const Vec& xi) {
  require_dim(set.dim(), xi, "budget_statistic");
  switch (set.kind()) {
    case SetKind::box:
      return (xi.array().abs() / set.as<BoxSet>().theta().array()).sum();
    case SetKind::poly:
      return (xi.array().abs() / set.as<PolySet>().box().theta().array()).sum();
    case SetKind::ellip: {
      const double m = set.as<EllipSet>().mahalanobis(xi);
      return m * m;
    }
    case SetKind::gmm: {
      const auto& s = set.as<GmmSet>();
      return s.rho() - s.density(xi);
    }
  }
  return 0.0;
}

double budget_threshold(const UncertaintySet& set) {
  switch (set.kind()) {
    case SetKind::box:
      return set.as<BoxSet>().gamma();
    case SetKind::poly:
      return set.as<PolySet>().box().gamma();
    case SetKind::ellip: {
      const double g = set.as<EllipSet>().gamma();
      return g * g;
    }
    case SetKind::gmm:
      return 0.0;
  }
  return 0.0;
}

std::vector<HingeTerm> hinge_terms(const UncertaintySet& set, const Vec& xi) {
  require_dim(set.dim(), xi, "hinge_terms");
  const auto n = xi.size();
  std::vector<HingeTerm> terms;
  auto box_terms = [&](const BoxSet& b) {
    Vec sign(n);
    for (Eigen::Index j = 0; j < n; ++j) sign[j] = sgn(xi[j]);
    terms.push_back({xi.lpNorm<1>() - b.gamma(), sign});
    for (Eigen::Index j = 0; j < n; ++j) terms.push_back({std::abs(xi[j]) - b.theta()[j], sign[j] * Vec::Unit(n, j)});
  };
  switch (set.kind()) {
    case SetKind::box:
      box_terms(set.as<BoxSet>());
      break;
    case SetKind::poly: {
      const auto& s = set.as<PolySet>();
      box_terms(s.box());
      for (Eigen::Index i = 0; i < s.H().rows(); ++i)
        terms.push_back({s.H().row(i).dot(xi) - s.h()[i], s.H().row(i).transpose()});
      break;
    }
    case SetKind::ellip: {
      const auto& s = set.as<EllipSet>();
      const Vec pd = s.precision() * (xi - s.center());
      terms.push_back({(xi - s.center()).dot(pd) - s.gamma() * s.gamma(), 2.0 * pd});
      break;
    }
    case SetKind::gmm: {
      const auto& s = set.as<GmmSet>();
      terms.push_back({s.rho() - s.density(xi), -s.density_gradient(xi)});
      break;
    }
  }
  return terms;
}

double smoothed_hinge(double t, double width) {
  if (t <= 0.0) return 0.0;
  if (t <= width) return 0.5 * t * t / width;
  return t - 0.5 * width;
}

double smoothed_hinge_slope(double t, double width) {
  if (t <= 0.0) return 0.0;
  if (t <= width) return t / width;
  return 1.0;
}

PenaltyValue penalty_and_subgradient(const UncertaintySet& set, const PenaltySpec& spec, const Vec& xi) {
  PenaltyValue out{0.0, Vec::Zero(xi.size())};
  for (const auto& term : hinge_terms(set, xi)) {
    if (term.t <= 0.0) continue;
    out.value += spec.alpha * smoothed_hinge(term.t, spec.smoothing);
    out.grad += spec.alpha * smoothed_hinge_slope(term.t, spec.smoothing) * term.grad_t;
  }
  return out;
}

bool strictly_interior(const UncertaintySet& set, const Vec& xi) {
  for (const auto& term : hinge_terms(set, xi))
    if (!(term.t < 0.0)) return false;
  return true;
}

}  // namespace l2occg
