#include "l2occg/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "l2occg/errors.hpp"

namespace l2occg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kEqualityRhoScale = 1e3;
constexpr double kPolishDelta = 1e-9;
constexpr int kRefineSteps = 8;
constexpr double kPolishGate = 1e6;

double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

Vec clamp(const Vec& v, const Vec& lo, const Vec& hi) { return v.cwiseMax(lo).cwiseMin(hi); }

// Equality-free problem over z with x = xp + Z z.
struct Reduced {
  Mat Z;
  Vec xp;
  Mat Q1;  // range of E'
  Mat R;   // E' = Q1 R
  Mat P;
  Vec q;
  Mat A;
  Vec l, u;
};

Reduced reduce(const QpProblem& qp) {
  Reduced r;
  const auto n = qp.num_vars();
  const auto m = qp.E.rows();
  if (m == 0) {
    r.Z = Mat::Identity(n, n);
    r.xp = Vec::Zero(n);
    r.Q1.resize(n, 0);
    r.R.resize(0, 0);
    r.P = qp.P;
    r.q = qp.q;
    r.A = qp.A;
  } else {
    if (m > n) throw ContractError("solve_qp: more equality rows than variables");
    // Variables absent from every equality row pass through the basis
    // unchanged; only the coupled block needs a QR.
    std::vector<Eigen::Index> coupled, free;
    for (Eigen::Index c = 0; c < n; ++c) (qp.E.col(c).cwiseAbs().maxCoeff() > 0.0 ? coupled : free).push_back(c);
    const auto nc = static_cast<Eigen::Index>(coupled.size());
    const auto nf = static_cast<Eigen::Index>(free.size());
    if (m > nc) throw ContractError("solve_qp: equality rows are linearly dependent");
    Mat Ec(m, nc);
    for (Eigen::Index k = 0; k < nc; ++k) Ec.col(k) = qp.E.col(coupled[static_cast<std::size_t>(k)]);

    Eigen::HouseholderQR<Mat> qr(Ec.transpose());
    const Mat Q = qr.householderQ() * Mat::Identity(nc, nc);
    r.R = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
    const double scale = r.R.diagonal().cwiseAbs().maxCoeff();
    if (!(r.R.diagonal().cwiseAbs().minCoeff() > 1e-10 * std::max(scale, 1.0)))
      throw ContractError("solve_qp: equality rows are linearly dependent");

    r.Q1 = Mat::Zero(n, m);
    r.Z = Mat::Zero(n, nc - m + nf);
    for (Eigen::Index k = 0; k < nc; ++k) {
      const auto row = coupled[static_cast<std::size_t>(k)];
      r.Q1.row(row) = Q.row(k).head(m);
      r.Z.row(row).head(nc - m) = Q.row(k).tail(nc - m);
    }
    for (Eigen::Index k = 0; k < nf; ++k) r.Z(free[static_cast<std::size_t>(k)], nc - m + k) = 1.0;

    const Vec w = r.R.transpose().triangularView<Eigen::Lower>().solve(qp.e);
    r.xp = r.Q1 * w;
    const Mat PZ = qp.P * r.Z;
    r.P = r.Z.transpose() * PZ;
    r.P = 0.5 * (r.P + r.P.transpose()).eval();
    r.q = r.Z.transpose() * (qp.P * r.xp + qp.q);
    r.A = qp.A * r.Z;
  }
  const Vec shift = qp.A * r.xp;
  r.l = qp.l - shift;
  r.u = qp.u - shift;
  return r;
}

struct Tolerances {
  double primal, dual;
};

Tolerances tolerances(const Reduced& r, const QpSettings& s, const Vec& x, const Vec& z, const Vec& y) {
  const double ax = inf_norm(r.A * x);
  const double px = inf_norm(r.P * x);
  const double aty = inf_norm(r.A.transpose() * y);
  return {s.eps_abs + s.eps_rel * std::max(ax, inf_norm(z)),
          s.eps_abs + s.eps_rel * std::max({px, aty, inf_norm(r.q)})};
}

double dual_residual(const Reduced& r, const Vec& x, const Vec& y) {
  return inf_norm(r.P * x + r.q + r.A.transpose() * y);
}

struct Polished {
  Vec x, y;
  bool ok = false;
};

// Active-set guess: -1 lower, +1 upper, 0 inactive.
std::vector<signed char> guess_active(const Reduced& r, const Vec& z, const Vec& y) {
  std::vector<signed char> active(static_cast<std::size_t>(r.A.rows()), 0);
  for (Eigen::Index i = 0; i < r.A.rows(); ++i) {
    if (z[i] - r.l[i] < -y[i])
      active[static_cast<std::size_t>(i)] = -1;
    else if (r.u[i] - z[i] < y[i])
      active[static_cast<std::size_t>(i)] = 1;
  }
  return active;
}

// Solve the equality-constrained QP on the guessed active set and keep it
// only if it is optimal for the full problem.
Polished polish(const Reduced& r, const QpSettings& s, const std::vector<signed char>& active) {
  const auto n = r.P.rows();
  const auto m = r.A.rows();
  std::vector<Eigen::Index> rows;
  std::vector<double> rhs_b;
  std::vector<int> side;
  for (Eigen::Index i = 0; i < m; ++i) {
    const int a = active[static_cast<std::size_t>(i)];
    if (a == 0) continue;
    rows.push_back(i);
    rhs_b.push_back(a < 0 ? r.l[i] : r.u[i]);
    side.push_back(a);
  }
  const auto k = static_cast<Eigen::Index>(rows.size());
  Mat K = Mat::Zero(n + k, n + k);
  K.topLeftCorner(n, n) = r.P;
  for (Eigen::Index j = 0; j < k; ++j) {
    K.block(n + j, 0, 1, n) = r.A.row(rows[static_cast<std::size_t>(j)]);
    K.block(0, n + j, n, 1) = r.A.row(rows[static_cast<std::size_t>(j)]).transpose();
  }
  Mat Kreg = K;
  Kreg.topLeftCorner(n, n).diagonal().array() += kPolishDelta;
  Kreg.bottomRightCorner(k, k).diagonal().array() -= kPolishDelta;
  Vec rhs(n + k);
  rhs.head(n) = -r.q;
  for (Eigen::Index j = 0; j < k; ++j) rhs[n + j] = rhs_b[static_cast<std::size_t>(j)];

  Eigen::PartialPivLU<Mat> lu(Kreg);
  Vec sol = lu.solve(rhs);
  for (int it = 0; it < kRefineSteps; ++it) sol += lu.solve(rhs - K * sol);

  Polished out;
  if (!sol.allFinite()) return out;
  out.x = sol.head(n);
  out.y = Vec::Zero(m);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double v = sol[n + j];
    out.y[rows[static_cast<std::size_t>(j)]] = side[static_cast<std::size_t>(j)] < 0 ? std::min(v, 0.0) : std::max(v, 0.0);
  }
  const Vec ax = r.A * out.x;
  const Vec zp = clamp(ax, r.l, r.u);
  const auto tol = tolerances(r, s, out.x, zp, out.y);
  out.ok = inf_norm(ax - zp) <= tol.primal && dual_residual(r, out.x, out.y) <= tol.dual;
  return out;
}

bool certifies_infeasibility(const Reduced& r, Vec dy, double eps) {
  for (Eigen::Index i = 0; i < dy.size(); ++i) {
    if (std::isinf(r.u[i])) dy[i] = std::min(dy[i], 0.0);
    if (std::isinf(r.l[i])) dy[i] = std::max(dy[i], 0.0);
  }
  const double norm = inf_norm(dy);
  if (norm < 1e-30) return false;
  if (inf_norm(r.A.transpose() * dy) > eps * norm) return false;
  double support = 0.0;
  for (Eigen::Index i = 0; i < dy.size(); ++i) {
    if (dy[i] > 0.0) support += r.u[i] * dy[i];
    if (dy[i] < 0.0) support += r.l[i] * dy[i];
  }
  return support < -eps * norm;
}

class Admm {
 public:
  Admm(const Reduced& r, const QpSettings& s) : r_(r), s_(s) {
    const auto m = r_.A.rows();
    rho_ = s_.rho;
    rho_vec_.resize(m);
    set_rho(rho_);
  }

  void set_rho(double rho) {
    rho_ = std::clamp(rho, kRhoMin, kRhoMax);
    for (Eigen::Index i = 0; i < rho_vec_.size(); ++i) {
      if (std::isinf(r_.l[i]) && std::isinf(r_.u[i]))
        rho_vec_[i] = kRhoMin;
      else if (r_.u[i] - r_.l[i] < 1e-12)
        rho_vec_[i] = kEqualityRhoScale * rho_;
      else
        rho_vec_[i] = rho_;
    }
    Mat K = r_.P;
    K.diagonal().array() += s_.sigma;
    K.noalias() += r_.A.transpose() * rho_vec_.asDiagonal() * r_.A;
    llt_.compute(K);
    if (llt_.info() != Eigen::Success) throw NumericError("solve_qp: KKT factorization failed (P not PSD?)");
  }

  double rho() const { return rho_; }
  const Vec& rho_vec() const { return rho_vec_; }
  const Eigen::LLT<Mat>& llt() const { return llt_; }

 private:
  const Reduced& r_;
  const QpSettings& s_;
  double rho_ = 0.1;
  Vec rho_vec_;
  Eigen::LLT<Mat> llt_;
};

}  // namespace

std::string_view to_string(QpStatus status) {
  switch (status) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::primal_infeasible: return "primal_infeasible";
    case QpStatus::solver_limit: return "solver_limit";
  }
  return "?";
}

void QpProblem::validate() const {
  const auto n = num_vars();
  if (P.rows() != n || P.cols() != n) throw DimensionError("QpProblem: P must be n x n");
  if (E.rows() != e.size() || (E.rows() > 0 && E.cols() != n)) throw DimensionError("QpProblem: bad equality block");
  if (A.rows() != l.size() || A.rows() != u.size() || (A.rows() > 0 && A.cols() != n))
    throw DimensionError("QpProblem: bad inequality block");
  if (n > 0) {
    const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
    if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) throw ContractError("QpProblem: P not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> eig(P, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10 * scale) throw ContractError("QpProblem: P not positive semidefinite");
  }
  if (E.rows() > 0) {
    Eigen::ColPivHouseholderQR<Mat> qr(E.transpose());
    qr.setThreshold(1e-10);
    if (qr.rank() != E.rows()) throw ContractError("QpProblem: equality rows are linearly dependent");
  }
}

QpSolution solve_qp(const QpProblem& qp, const QpSettings& s) {
  const auto n = qp.num_vars();
  if (qp.P.rows() != n || qp.P.cols() != n || qp.A.rows() != qp.l.size() || qp.A.rows() != qp.u.size() ||
      qp.E.rows() != qp.e.size())
    throw DimensionError("solve_qp: inconsistent problem dimensions");
  if (s.max_iter < 1 || s.check_every < 1) throw ContractError("solve_qp: iteration limits must be positive");

  QpSolution sol;
  const Reduced r = reduce(qp);
  const auto nr = r.P.rows();
  const auto m = r.A.rows();

  Vec x = Vec::Zero(nr), z = Vec::Zero(m), y = Vec::Zero(m);
  bool done = false;
  if ((r.l.array() > r.u.array()).any()) {
    sol.status = QpStatus::primal_infeasible;
    done = true;
  }

  Admm admm(r, s);
  Vec y_prev = y;
  std::vector<signed char> last_active;
  int iter = 0;
  while (!done && iter < s.max_iter) {
    ++iter;
    y_prev = y;
    const Vec& rho = admm.rho_vec();
    const Vec rhs = s.sigma * x - r.q + r.A.transpose() * (rho.cwiseProduct(z) - y);
    const Vec xt = admm.llt().solve(rhs);
    const Vec zt = r.A * xt;
    x = s.alpha * xt + (1.0 - s.alpha) * x;
    const Vec zh = s.alpha * zt + (1.0 - s.alpha) * z;
    const Vec z_new = clamp(zh + y.cwiseQuotient(rho), r.l, r.u);
    y += rho.cwiseProduct(zh - z_new);
    z = z_new;

    if (iter % s.check_every != 0 && iter != s.max_iter) continue;

    const Vec ax = r.A * x;
    const double prim = inf_norm(ax - z);
    const double dual = dual_residual(r, x, y);
    const auto tol = tolerances(r, s, x, z, y);
    if (prim <= tol.primal && dual <= tol.dual) {
      sol.status = QpStatus::optimal;
      done = true;
    }
    // A polish costs a dense KKT solve, so only try once the iterate is close.
    const bool near = prim <= kPolishGate * tol.primal && dual <= kPolishGate * tol.dual;
    if (s.polish && (near || done || iter >= s.max_iter)) {
      // Re-polishing an unchanged active set would fail the same way.
      auto active = guess_active(r, done ? z : ax, y);
      const bool fresh = active != last_active;
      const Polished p = fresh ? polish(r, s, active) : Polished{};
      last_active = std::move(active);
      if (p.ok) {
        x = p.x;
        y = p.y;
        z = clamp(r.A * x, r.l, r.u);
        sol.polished = true;
        sol.status = QpStatus::optimal;
        done = true;
      }
    }
    if (done) break;
    if (m > 0 && certifies_infeasibility(r, y - y_prev, s.eps_infeasible)) {
      sol.status = QpStatus::primal_infeasible;
      break;
    }
    // Penalty balancing between primal and dual residual.
    const double ps = prim / std::max({inf_norm(ax), inf_norm(z), 1e-30});
    const double ds = dual / std::max({inf_norm(r.P * x), inf_norm(r.A.transpose() * y), inf_norm(r.q), 1e-30});
    const double rho_new = std::clamp(admm.rho() * std::sqrt(ps / std::max(ds, 1e-30)), kRhoMin, kRhoMax);
    if (rho_new > 5.0 * admm.rho() || rho_new < 0.2 * admm.rho()) admm.set_rho(rho_new);
  }
  sol.iterations = iter;

  sol.x = r.xp + r.Z * x;
  sol.y_ineq = y;
  const Vec stat = qp.P * sol.x + qp.q + qp.A.transpose() * y;
  if (qp.E.rows() > 0)
    sol.y_eq = -r.R.triangularView<Eigen::Upper>().solve(r.Q1.transpose() * stat);
  else
    sol.y_eq.resize(0);
  sol.objective = 0.5 * sol.x.dot(qp.P * sol.x) + qp.q.dot(sol.x);
  const Vec ax = qp.A * sol.x;
  double prim = inf_norm(ax - clamp(ax, qp.l, qp.u));
  if (qp.E.rows() > 0) prim = std::max(prim, inf_norm(qp.E * sol.x - qp.e));
  sol.primal_residual = prim;
  Vec full_stat = stat;
  if (qp.E.rows() > 0) full_stat += qp.E.transpose() * sol.y_eq;
  sol.dual_residual = inf_norm(full_stat);
  return sol;
}

}  // namespace l2occg
