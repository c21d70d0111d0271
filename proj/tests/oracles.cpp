#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace oracle {

Vec l1_projection_by_supports(const Vec& v, double gamma) {
  if (v.lpNorm<1>() <= gamma) return v;
  const auto n = static_cast<int>(v.size());
  Vec best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    double sum = 0.0;
    int k = 0;
    for (int j = 0; j < n; ++j)
      if (mask & (1u << j)) {
        sum += std::abs(v[j]);
        ++k;
      }
    const double lambda = (sum - gamma) / k;
    if (lambda < 0.0) continue;
    bool ok = true;
    Vec x = Vec::Zero(n);
    for (int j = 0; j < n && ok; ++j) {
      const double a = std::abs(v[j]);
      if (mask & (1u << j)) {
        if (a - lambda < -1e-14) ok = false;
        x[j] = std::copysign(std::max(a - lambda, 0.0), v[j]);
      } else if (a > lambda + 1e-14) {
        ok = false;
      }
    }
    if (!ok) continue;
    const double d = (x - v).squaredNorm();
    if (d < best_dist) {
      best_dist = d;
      best = x;
    }
  }
  return best;
}

IpmResult interior_point(const l2occg::QpProblem& qp, int max_iter, double tol) {
  const auto n = qp.q.size();
  const auto p = qp.E.rows();
  std::vector<Eigen::Index> up, lo;
  for (Eigen::Index i = 0; i < qp.A.rows(); ++i) {
    if (std::isfinite(qp.u[i])) up.push_back(i);
    if (std::isfinite(qp.l[i])) lo.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(up.size() + lo.size());
  Mat G(m, n);
  Vec h(m);
  Eigen::Index r = 0;
  for (auto i : up) {
    G.row(r) = qp.A.row(i);
    h[r++] = qp.u[i];
  }
  for (auto i : lo) {
    G.row(r) = -qp.A.row(i);
    h[r++] = -qp.l[i];
  }

  Vec x = Vec::Zero(n), y = Vec::Zero(p), s = Vec::Ones(m), z = Vec::Ones(m);
  IpmResult res;
  const double sq = 1.0 + qp.q.lpNorm<Eigen::Infinity>();
  const double se = 1.0 + (p ? qp.e.lpNorm<Eigen::Infinity>() : 0.0);
  const double sh = 1.0 + (m ? h.lpNorm<Eigen::Infinity>() : 0.0);

  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it;
    const Vec rd = qp.P * x + qp.q + qp.E.transpose() * y + G.transpose() * z;
    const Vec re = qp.E * x - qp.e;
    const Vec ri = G * x + s - h;
    const double mu = m ? s.dot(z) / static_cast<double>(m) : 0.0;
    const bool small = rd.lpNorm<Eigen::Infinity>() <= tol * sq && (p == 0 || re.lpNorm<Eigen::Infinity>() <= tol * se) &&
                       (m == 0 || ri.lpNorm<Eigen::Infinity>() <= tol * sh) && mu <= tol;
    if (small) {
      res.converged = true;
      break;
    }

    const Vec w = z.cwiseQuotient(s);
    Mat K = Mat::Zero(n + p, n + p);
    K.topLeftCorner(n, n) = qp.P + G.transpose() * w.asDiagonal() * G;
    K.topRightCorner(n, p) = qp.E.transpose();
    K.bottomLeftCorner(p, n) = qp.E;
    const Eigen::FullPivLU<Mat> lu(K);

    auto direction = [&](const Vec& rc, Vec& dx, Vec& dy, Vec& dz, Vec& ds) {
      Vec rhs(n + p);
      rhs.head(n) = -rd - G.transpose() * ((-rc + z.cwiseProduct(ri)).cwiseQuotient(s));
      rhs.tail(p) = -re;
      const Vec sol = lu.solve(rhs);
      dx = sol.head(n);
      dy = sol.tail(p);
      ds = -ri - G * dx;
      dz = (-rc - z.cwiseProduct(ds)).cwiseQuotient(s);
    };
    auto max_step = [](const Vec& v, const Vec& dv) {
      double a = 1.0;
      for (Eigen::Index i = 0; i < v.size(); ++i)
        if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
      return a;
    };

    Vec dx, dy, dz, ds;
    direction(s.cwiseProduct(z), dx, dy, dz, ds);
    const double a_aff = std::min(max_step(s, ds), max_step(z, dz));
    const double mu_aff = m ? (s + a_aff * ds).dot(z + a_aff * dz) / static_cast<double>(m) : 0.0;
    const double sigma = mu > 0.0 ? std::pow(mu_aff / mu, 3) : 0.0;
    const Vec rc = s.cwiseProduct(z) + ds.cwiseProduct(dz) - Vec::Constant(m, sigma * mu);
    direction(rc, dx, dy, dz, ds);
    const double a = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(z, dz)));
    x += a * dx;
    y += a * dy;
    z += a * dz;
    s += a * ds;
  }
  res.x = x;
  res.objective = 0.5 * x.dot(qp.P * x) + qp.q.dot(x);
  return res;
}

Vec central_diff(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

double rel_err(const Vec& a, const Vec& b, double floor) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(b.lpNorm<Eigen::Infinity>(), floor);
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace oracle

namespace oracle {

CondensedRecourse condensed_recourse(const l2occg::HvacInstance& inst, const Vec& u0, const Vec& xi) {
  const int nx = inst.dims.n_x, nu = inst.dims.n_u, N = inst.dims.horizon;
  const int nv = (N - 1) * nu;
  // x_t = c_t + M_t u for t = 0..N-1 (0-based).
  std::vector<Vec> c(N);
  std::vector<Mat> M(N);
  c[0] = inst.x_init;
  M[0] = Mat::Zero(nx, nv);
  for (int t = 0; t + 1 < N; ++t) {
    Mat A = inst.A0[t], B = inst.B0[t];
    for (int k = 0; k < xi.size(); ++k) {
      A += xi[k] * inst.a[t][k];
      B += xi[k] * inst.b[t][k];
    }
    c[t + 1] = A * c[t];
    M[t + 1] = A * M[t];
    M[t + 1].middleCols(t * nu, nu) += B;
  }

  l2occg::QpProblem qp;
  qp.P = Mat::Zero(nv, nv);
  qp.q = Vec::Zero(nv);
  double constant = 0.0;
  for (int t = 0; t < N; ++t) {
    const Mat& W = t + 1 == N ? inst.P_f : inst.P;
    qp.P += 2.0 * M[t].transpose() * W * M[t];
    qp.q += 2.0 * M[t].transpose() * W * c[t];
    constant += c[t].dot(W * c[t]);
  }
  for (int t = 0; t + 1 < N; ++t) qp.P.block(t * nu, t * nu, nu, nu) += 2.0 * inst.R;
  qp.E = Mat::Zero(0, nv);
  qp.e = Vec::Zero(0);

  const int ms = (N - 1) * nx;
  qp.A = Mat::Zero(ms + nv, nv);
  qp.l.resize(ms + nv);
  qp.u.resize(ms + nv);
  for (int t = 1; t < N; ++t) {
    qp.A.middleRows((t - 1) * nx, nx) = M[t];
    qp.l.segment((t - 1) * nx, nx) = inst.x_lo - c[t];
    qp.u.segment((t - 1) * nx, nx) = inst.x_hi - c[t];
  }
  qp.A.bottomRows(nv).setIdentity();
  for (int t = 0; t + 1 < N; ++t)
    for (int j = 0; j < nu; ++j) {
      qp.l[ms + t * nu + j] = std::max(inst.u_lo[j], u0[j] + inst.du_lo[j]);
      qp.u[ms + t * nu + j] = std::min(inst.u_hi[j], u0[j] + inst.du_hi[j]);
    }

  const IpmResult r = interior_point(qp);
  return {r.objective + constant, r.converged};
}

}  // namespace oracle
