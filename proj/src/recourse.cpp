#include "l2occg/recourse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "l2occg/errors.hpp"

namespace l2occg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSpectralTarget = 0.9;

Mat gaussian(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

double spectral_radius(const Mat& m) {
  Eigen::EigenSolver<Mat> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double spectral_norm(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(0);
}

Mat stable_matrix(int n, Rng& rng) {
  Mat g = gaussian(n, n, rng);
  return g * (kSpectralTarget / spectral_radius(g));
}

Mat with_norm(Mat g, double norm) { return g * (norm / spectral_norm(g)); }

Mat spd_near(int n, double scale, Rng& rng) {
  const Mat g = gaussian(n, n, rng);
  return scale * (Mat::Identity(n, n) + 0.1 * g * g.transpose() / n);
}

void require_spd(const Mat& m, const char* what) {
  if (m.rows() != m.cols()) throw DimensionError(std::string(what) + " must be square");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff()))
    throw ContractError(std::string(what) + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> eig(m, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() <= 0.0) throw ContractError(std::string(what) + " must be positive definite");
}

int x_offset(const HvacDims& d, int t) { return t * d.n_x; }  // t zero-based: x_{t+1}
int u_offset(const HvacDims& d, int t) { return d.horizon * d.n_x + t * d.n_u; }

}  // namespace

Mat HvacInstance::A_at(int t, const Vec& xi) const {
  Mat m = A0[static_cast<std::size_t>(t)];
  for (int k = 0; k < dims.n_xi; ++k) m += xi[k] * a[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
  return m;
}

Mat HvacInstance::B_at(int t, const Vec& xi) const {
  Mat m = B0[static_cast<std::size_t>(t)];
  for (int k = 0; k < dims.n_xi; ++k) m += xi[k] * b[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
  return m;
}

double HvacInstance::first_stage_cost(const Vec& u0) const {
  return 0.5 * u0.dot(h1_quad * u0) + h1_lin.dot(u0);
}

Vec HvacInstance::first_stage_grad(const Vec& u0) const { return h1_quad * u0 + h1_lin; }

void HvacInstance::validate() const {
  const auto& d = dims;
  if (d.n_x < 1 || d.n_u < 1 || d.horizon < 2 || d.n_xi < 1) throw DimensionError("instance: bad dimensions");
  const auto steps = static_cast<std::size_t>(d.horizon - 1);
  if (A0.size() != steps || B0.size() != steps || a.size() != steps || b.size() != steps)
    throw DimensionError("instance: dynamics must have horizon-1 stages");
  for (std::size_t t = 0; t < steps; ++t) {
    if (A0[t].rows() != d.n_x || A0[t].cols() != d.n_x || B0[t].rows() != d.n_x || B0[t].cols() != d.n_u)
      throw DimensionError("instance: nominal dynamics have the wrong shape");
    if (a[t].size() != static_cast<std::size_t>(d.n_xi) || b[t].size() != static_cast<std::size_t>(d.n_xi))
      throw DimensionError("instance: sensitivity tensors need n_xi slices");
    for (int k = 0; k < d.n_xi; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      if (a[t][kk].rows() != d.n_x || a[t][kk].cols() != d.n_x || b[t][kk].rows() != d.n_x || b[t][kk].cols() != d.n_u)
        throw DimensionError("instance: sensitivity slice has the wrong shape");
    }
    if (!(spectral_radius(A0[t]) < 1.0)) throw ContractError("instance: nominal dynamics are not stable");
  }
  require_spd(P, "P");
  require_spd(R, "R");
  require_spd(P_f, "P_f");
  if (P.rows() != d.n_x || R.rows() != d.n_u || P_f.rows() != d.n_x) throw DimensionError("instance: cost shapes");
  if (x_lo.size() != d.n_x || x_hi.size() != d.n_x || x_init.size() != d.n_x || u_lo.size() != d.n_u ||
      u_hi.size() != d.n_u || du_lo.size() != d.n_u || du_hi.size() != d.n_u)
    throw DimensionError("instance: bound vectors have the wrong length");
  if ((x_lo.array() >= x_hi.array()).any() || (u_lo.array() >= u_hi.array()).any())
    throw ContractError("instance: lower bounds must lie below upper bounds");
  if ((du_lo.array() >= 0.0).any() || (du_hi.array() <= 0.0).any())
    throw ContractError("instance: deviation bounds must straddle zero");
  if (h1_quad.rows() != d.n_u || h1_quad.cols() != d.n_u || h1_lin.size() != d.n_u)
    throw DimensionError("instance: first-stage cost shapes");
  if (!(w_slack > 0.0)) throw ContractError("instance: w_slack must be positive");
}

namespace {

// Nominal (xi = 0) recourse feasible for every u0 in {lo, mid, hi}^n_u.
bool nominal_feasible_on_grid(const HvacInstance& inst) {
  const int n_u = inst.dims.n_u;
  const Vec xi = Vec::Zero(inst.dims.n_xi);
  Vec u0(n_u);
  long cells = 1;
  for (int j = 0; j < n_u; ++j) cells *= 3;
  for (long c = 0; c < cells; ++c) {
    long rest = c;
    for (int j = 0; j < n_u; ++j, rest /= 3)
      u0[j] = inst.u_lo[j] + 0.5 * static_cast<double>(rest % 3) * (inst.u_hi[j] - inst.u_lo[j]);
    const auto r = eval_value_function(inst, u0, xi);
    if (r.status != RecourseStatus::optimal || r.q_fea != 0.0) return false;
  }
  return true;
}

}  // namespace

HvacInstance generate_instance(std::uint64_t seed, const GenerateOptions& options) {
  const HvacDims d = options.dims.value_or(HvacDims{});
  if (d.n_x < 1 || d.n_u < 1 || d.horizon < 2 || d.n_xi < 1) throw DimensionError("generate_instance: bad dimensions");
  const auto steps = static_cast<std::size_t>(d.horizon - 1);

  for (int attempt = 0; attempt < options.max_retries; ++attempt) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(attempt)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    HvacInstance inst;
    inst.dims = d;
    inst.seed = seed;
    inst.time_varying = options.time_varying;

    // Coordinates are exchangeable up to a small idiosyncratic part: a
    // shared pattern plus `spread` times an independent draw per slice.
    const double spread = options.coordinate_spread;
    const Mat A_base = stable_matrix(d.n_x, rng);
    const Vec b_col = 0.3 * gaussian(d.n_x, 1, rng);
    const Mat B_base = b_col.replicate(1, d.n_u) + 0.3 * spread * gaussian(d.n_x, d.n_u, rng);
    const Mat a_shared = gaussian(d.n_x, d.n_x, rng);
    const Mat b_shared = gaussian(d.n_x, 1, rng).replicate(1, d.n_u);
    std::vector<Mat> a_base, b_base;
    for (int k = 0; k < d.n_xi; ++k) {
      a_base.push_back(with_norm(a_shared + spread * gaussian(d.n_x, d.n_x, rng), 0.15 + 0.05 * spread * unit(rng)));
      b_base.push_back(with_norm(b_shared + spread * gaussian(d.n_x, d.n_u, rng), 0.15 + 0.05 * spread * unit(rng)));
    }
    for (std::size_t t = 0; t < steps; ++t) {
      if (options.time_varying) {
        const Mat g = A_base + 0.1 * gaussian(d.n_x, d.n_x, rng);
        inst.A0.push_back(g * (kSpectralTarget / spectral_radius(g)));
        inst.B0.push_back(B_base + 0.03 * gaussian(d.n_x, d.n_u, rng));
      } else {
        inst.A0.push_back(A_base);
        inst.B0.push_back(B_base);
      }
      inst.a.push_back(a_base);
      inst.b.push_back(b_base);
    }

    inst.P = spd_near(d.n_x, 1.0, rng);
    inst.R = spd_near(d.n_u, 0.1, rng);
    inst.P_f = 2.0 * inst.P;
    inst.x_lo = Vec::Constant(d.n_x, -1.0);
    inst.x_hi = Vec::Constant(d.n_x, 1.0);
    inst.u_lo = Vec::Zero(d.n_u);
    inst.u_hi = Vec::Ones(d.n_u);
    inst.du_lo = -options.deviation_fraction * (inst.u_hi - inst.u_lo);
    inst.du_hi = options.deviation_fraction * (inst.u_hi - inst.u_lo);
    inst.x_init.resize(d.n_x);
    for (int i = 0; i < d.n_x; ++i) inst.x_init[i] = (0.25 + 0.5 * unit(rng)) * inst.x_hi[i];
    inst.h1_quad = Mat::Zero(d.n_u, d.n_u);
    inst.h1_lin = Vec::Zero(d.n_u);

    inst.validate();
    if (nominal_feasible_on_grid(inst)) return inst;
  }
  throw ContractError("generate_instance: no feasible instance after " + std::to_string(options.max_retries) +
                      " attempts");
}

InputBounds input_bounds(const HvacInstance& inst, const Vec& u0) {
  const int n_u = inst.dims.n_u;
  if (u0.size() != n_u) throw DimensionError("input_bounds: u0 has the wrong length");
  InputBounds b;
  b.lo.resize(n_u);
  b.hi.resize(n_u);
  b.lo_dev.resize(static_cast<std::size_t>(n_u));
  b.hi_dev.resize(static_cast<std::size_t>(n_u));
  for (int j = 0; j < n_u; ++j) {
    const double dlo = u0[j] + inst.du_lo[j];
    const double dhi = u0[j] + inst.du_hi[j];
    b.lo_dev[static_cast<std::size_t>(j)] = dlo > inst.u_lo[j];
    b.hi_dev[static_cast<std::size_t>(j)] = dhi < inst.u_hi[j];
    b.lo[j] = std::max(inst.u_lo[j], dlo);
    b.hi[j] = std::min(inst.u_hi[j], dhi);
  }
  return b;
}

AssembledQp assemble_qp(const HvacInstance& inst, const Vec& u0, const Vec& xi, bool relaxed) {
  const auto& d = inst.dims;
  if (xi.size() != d.n_xi) throw DimensionError("assemble_qp: xi has the wrong length");
  AssembledQp out;
  out.bounds = input_bounds(inst, u0);

  const int n = inst.num_vars();
  const int steps = d.horizon - 1;
  QpLayout& lay = out.layout;
  lay.n_traj = n;
  lay.state_rows = steps * d.n_x;
  lay.input_rows = steps * d.n_u;
  lay.relaxed = relaxed;
  const int m = lay.state_rows + lay.input_rows;

  Mat H = Mat::Zero(n, n);
  for (int t = 0; t < d.horizon; ++t)
    H.block(x_offset(d, t), x_offset(d, t), d.n_x, d.n_x) = 2.0 * (t + 1 == d.horizon ? inst.P_f : inst.P);
  for (int t = 0; t < steps; ++t) H.block(u_offset(d, t), u_offset(d, t), d.n_u, d.n_u) = 2.0 * inst.R;

  Mat E = Mat::Zero(d.horizon * d.n_x, n);
  Vec e = Vec::Zero(d.horizon * d.n_x);
  E.block(0, 0, d.n_x, d.n_x).setIdentity();
  e.head(d.n_x) = inst.x_init;
  for (int t = 0; t < steps; ++t) {
    const int row = (t + 1) * d.n_x;
    E.block(row, x_offset(d, t + 1), d.n_x, d.n_x).setIdentity();
    E.block(row, x_offset(d, t), d.n_x, d.n_x) = -inst.A_at(t, xi);
    E.block(row, u_offset(d, t), d.n_x, d.n_u) = -inst.B_at(t, xi);
  }

  Mat G = Mat::Zero(m, n);
  Vec lo(m), hi(m);
  for (int t = 0; t < steps; ++t) {
    const int row = t * d.n_x;
    G.block(row, x_offset(d, t + 1), d.n_x, d.n_x).setIdentity();
    lo.segment(row, d.n_x) = inst.x_lo;
    hi.segment(row, d.n_x) = inst.x_hi;
  }
  for (int t = 0; t < steps; ++t) {
    const int row = lay.state_rows + t * d.n_u;
    G.block(row, u_offset(d, t), d.n_u, d.n_u).setIdentity();
    lo.segment(row, d.n_u) = out.bounds.lo;
    hi.segment(row, d.n_u) = out.bounds.hi;
  }

  QpProblem& qp = out.qp;
  if (!relaxed) {
    qp.P = std::move(H);
    qp.q = Vec::Zero(n);
    qp.E = std::move(E);
    qp.e = std::move(e);
    qp.A = std::move(G);
    qp.l = std::move(lo);
    qp.u = std::move(hi);
    return out;
  }

  lay.n_slack = m;
  const int nv = n + m;
  qp.P = Mat::Zero(nv, nv);
  qp.P.topLeftCorner(n, n) = H;
  qp.q = Vec::Zero(nv);
  qp.q.tail(m).setConstant(inst.w_slack);
  qp.E = Mat::Zero(E.rows(), nv);
  qp.E.leftCols(n) = E;
  qp.e = std::move(e);
  qp.A = Mat::Zero(3 * m, nv);
  qp.l.resize(3 * m);
  qp.u.resize(3 * m);
  qp.A.block(0, 0, m, n) = G;
  qp.A.block(0, n, m, m).setIdentity();
  qp.l.head(m) = lo;
  qp.u.head(m).setConstant(kInf);
  qp.A.block(m, 0, m, n) = G;
  qp.A.block(m, n, m, m) = -Mat::Identity(m, m);
  qp.l.segment(m, m).setConstant(-kInf);
  qp.u.segment(m, m) = hi;
  qp.A.block(2 * m, n, m, m).setIdentity();
  qp.l.tail(m).setZero();
  qp.u.tail(m).setConstant(kInf);
  return out;
}

std::string_view to_string(RecourseStatus status) {
  switch (status) {
    case RecourseStatus::optimal: return "optimal";
    case RecourseStatus::infeasible_relaxed: return "infeasible_relaxed";
    case RecourseStatus::solver_limit: return "solver_limit";
  }
  return "?";
}

namespace {

// Envelope gradient and per-row multipliers. For the relaxed layout the
// lower and upper copies of a row carry separate multipliers.
void fill_duals(const AssembledQp& as, const QpSolution& sol, int n_u, RecourseResult& res) {
  const auto& lay = as.layout;
  const int m = lay.state_rows + lay.input_rows;
  res.grad_u0 = Vec::Zero(n_u);
  res.multipliers = Vec::Zero(lay.input_rows);
  for (int r = 0; r < lay.input_rows; ++r) {
    const int row = lay.state_rows + r;
    const auto j = static_cast<std::size_t>(r % n_u);
    double y_lo, y_hi;
    if (lay.relaxed) {
      y_lo = std::min(sol.y_ineq[row], 0.0);
      y_hi = std::max(sol.y_ineq[m + row], 0.0);
    } else {
      y_lo = std::min(sol.y_ineq[row], 0.0);
      y_hi = std::max(sol.y_ineq[row], 0.0);
    }
    res.multipliers[r] = y_lo + y_hi;
    if (as.bounds.lo_dev[j]) res.grad_u0[static_cast<Eigen::Index>(j)] -= y_lo;
    if (as.bounds.hi_dev[j]) res.grad_u0[static_cast<Eigen::Index>(j)] -= y_hi;
  }
}

}  // namespace

RecourseResult eval_value_function(const HvacInstance& inst, const Vec& u0, const Vec& xi,
                                   const QpSettings& settings) {
  RecourseResult res;
  const auto exact = assemble_qp(inst, u0, xi, false);
  const QpSolution sol = solve_qp(exact.qp, settings);
  if (sol.status == QpStatus::optimal) {
    res.q_obj = sol.objective;
    res.q_fea = 0.0;
    res.y_opt = sol.x;
    res.status = RecourseStatus::optimal;
    fill_duals(exact, sol, inst.dims.n_u, res);
    return res;
  }

  const auto relaxed = assemble_qp(inst, u0, xi, true);
  const QpSolution rel = solve_qp(relaxed.qp, settings);
  const int n = relaxed.layout.n_traj;
  res.y_opt = rel.x.head(n);
  res.q_obj = 0.5 * res.y_opt.dot(relaxed.qp.P.topLeftCorner(n, n) * res.y_opt);
  res.q_fea = rel.x.tail(relaxed.layout.n_slack).sum();
  // Slack mass below solver accuracy on a problem that was never proven
  // infeasible counts as feasible.
  if (sol.status != QpStatus::primal_infeasible && res.q_fea < 1e-9) res.q_fea = 0.0;
  res.q_fea = std::max(0.0, res.q_fea);
  fill_duals(relaxed, rel, inst.dims.n_u, res);
  if (rel.status != QpStatus::optimal)
    res.status = RecourseStatus::solver_limit;
  else if (sol.status == QpStatus::primal_infeasible || res.q_fea > 0.0)
    res.status = RecourseStatus::infeasible_relaxed;
  else
    res.status = RecourseStatus::optimal;
  return res;
}

double recourse_score(const HvacInstance& inst, const RecourseResult& r) { return r.score(inst.w_slack); }

}  // namespace l2occg
