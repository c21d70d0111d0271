#include "l2occg/learned_optimizer.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <optional>

#include "l2occg/errors.hpp"

namespace l2occg {

namespace {

constexpr int kPolicyVersion = 1;
constexpr const char* kPolicyFormat = "l2occg.policy";

// Vectorised forms; exp overflow saturates to the right limit.
Mat sigmoid(const Mat& m) { return (1.0 + (-m.array()).exp()).inverse().matrix(); }
Mat tanh_fast(const Mat& m) { return (2.0 / (1.0 + (-2.0 * m.array()).exp()) - 1.0).matrix(); }

// Row r = m * n + j of the per-coordinate layout holds coordinate j of row m.
Mat to_coord_rows(const Mat& a) {
  Mat out(a.size(), 1);
  for (Eigen::Index m = 0; m < a.rows(); ++m)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out(m * a.cols() + j, 0) = a(m, j);
  return out;
}

Mat from_coord_rows(const Mat& col, Eigen::Index rows, Eigen::Index n) {
  Mat out(rows, n);
  for (Eigen::Index m = 0; m < rows; ++m)
    for (Eigen::Index j = 0; j < n; ++j) out(m, j) = col(m * n + j, 0);
  return out;
}

diff::Tensor column_tensor(const Mat& a) { return diff::Tensor::from_eigen(to_coord_rows(a)); }

Mat features(const Mat& gf, const Mat& gr, const Mat& v) {
  Mat z(gf.size(), OptimizerPolicy::kFeatures);
  z.col(0) = to_coord_rows(gf);
  z.col(1) = to_coord_rows(gr);
  z.col(2) = to_coord_rows(v);
  return z;
}

// Projects every row; counts rows whose prox did not converge.
Mat prox_rows(const UncertaintySet& set, const Mat& xbar, int* failures) {
  Mat out(xbar.rows(), xbar.cols());
  for (Eigen::Index m = 0; m < xbar.rows(); ++m) {
    const ProxResult p = prox(set, xbar.row(m).transpose());
    if (!p.converged && failures) ++*failures;
    out.row(m) = p.xi.transpose();
  }
  return out;
}

struct Gains {
  Mat R, Q, B;
};

// Applies the update to every row given current gradients; advances state.
Gains lockstep_step(const UncertaintySet& set, const OptimizerPolicy& pol, Mat& xi, Mat& v, PolicyState& st,
                    const Mat& gf, const Mat& gr, int* prox_failures) {
  const Eigen::Index rows = xi.rows(), n = xi.cols();
  PolicyOutput out = policy_step(pol, features(gf, gr, v), st);
  st = std::move(out.next);
  Gains g{from_coord_rows(out.gains.col(0), rows, n), from_coord_rows(out.gains.col(1), rows, n),
          from_coord_rows(out.gains.col(2), rows, n)};
  const Mat ones = Mat::Ones(rows, n);
  v = g.Q.cwiseProduct(v) + (ones - g.Q).cwiseProduct(gf);
  const Mat xbar = xi - g.R.cwiseProduct(gf) - g.B.cwiseProduct(v);
  xi = prox_rows(set, xbar, prox_failures);
  return g;
}

Mat project_rows_if_needed(const UncertaintySet& set, const Mat& xi0) {
  Mat out = xi0;
  for (Eigen::Index m = 0; m < xi0.rows(); ++m) {
    const Vec row = xi0.row(m).transpose();
    if (!contains(set, row, 1e-9)) out.row(m) = prox(set, row).xi.transpose();
  }
  return out;
}

Vec uniform_u0(const HvacInstance& inst, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec u0(inst.dims.n_u);
  for (int j = 0; j < inst.dims.n_u; ++j) u0[j] = inst.u_lo[j] + (inst.u_hi[j] - inst.u_lo[j]) * unit(rng);
  return u0;
}

// Per-draw evaluation when each row has its own objective.
void eval_rows(const std::vector<AugmentedObjective>& objs, const Mat& xi, Vec& F, Mat& gf, Mat& gr) {
  F.resize(xi.rows());
  gf.resize(xi.rows(), xi.cols());
  gr.resize(xi.rows(), xi.cols());
  for (Eigen::Index d = 0; d < xi.rows(); ++d) {
    Vec f1;
    Mat g1, r1;
    objs[static_cast<std::size_t>(d)].eval_batch(xi.row(d), f1, g1, r1);
    F[d] = f1[0];
    gf.row(d) = g1.row(0);
    gr.row(d) = r1.row(0);
  }
}

struct TapeLstm {
  std::array<diff::NodeId, 4> W, U, b;
  diff::NodeId W_out, b_out;
};

TapeLstm record_policy(diff::Tape& t, const std::vector<diff::Tensor>& w) {
  TapeLstm n{};
  std::size_t k = 0;
  for (int g = 0; g < 4; ++g) {
    n.W[static_cast<std::size_t>(g)] = t.variable(w[k++]);
    n.U[static_cast<std::size_t>(g)] = t.variable(w[k++]);
    n.b[static_cast<std::size_t>(g)] = t.variable(w[k++]);
  }
  n.W_out = t.variable(w[k++]);
  n.b_out = t.variable(w[k++]);
  return n;
}

Json gate_to_json(const LstmGate& g) {
  return {{"W", matrix_to_json(g.W)}, {"U", matrix_to_json(g.U)}, {"b", vector_to_json(g.b)}};
}

}  // namespace

// ---- objective --------------------------------------------------------------

AugmentedObjective::AugmentedObjective(const ValueNetParams& surrogate, Vec u0, UncertaintySet set, PenaltySpec penalty)
    : net_(&surrogate), u0_(std::move(u0)), set_(std::move(set)), penalty_(penalty), eval_(surrogate, u0_) {
  penalty_.validate();
}

void AugmentedObjective::eval_batch(const Mat& xis, Vec& F, Mat& grad_f, Mat& g_r) const {
  if (xis.cols() != set_.dim()) throw DimensionError("AugmentedObjective: xi has the wrong length");
  const double beta = penalty_.beta, w = penalty_.smoothing;
  const Mat out = eval_.outputs_and_grad(
      xis,
      [&](const Mat& o) {
        Mat W(o.rows(), 2);
        for (Eigen::Index r = 0; r < o.rows(); ++r) {
          W(r, 0) = -1.0;
          W(r, 1) = beta * smoothed_hinge_slope(o(r, 1), w);
        }
        return W;
      },
      grad_f);
  F.resize(xis.rows());
  g_r.resize(xis.rows(), xis.cols());
  for (Eigen::Index r = 0; r < xis.rows(); ++r) {
    const PenaltyValue pen = penalty_and_subgradient(set_, penalty_, xis.row(r).transpose());
    F[r] = -out(r, 0) + beta * smoothed_hinge(out(r, 1), w) + pen.value;
    g_r.row(r) = pen.grad.transpose();
  }
}

FEval AugmentedObjective::eval(const Vec& xi) const {
  Vec F;
  Mat gf, gr;
  eval_batch(xi.transpose(), F, gf, gr);
  FEval e;
  e.F = F[0];
  e.grad_f = gf.row(0).transpose();
  e.g_r = gr.row(0).transpose();
  e.r = penalty_and_subgradient(set_, penalty_, xi).value;
  e.f = e.F - e.r;
  return e;
}

FEval eval_F(const AugmentedObjective& obj, const Vec& xi) { return obj.eval(xi); }

// ---- policy -------------------------------------------------------------------

OptimizerPolicy OptimizerPolicy::fixed_half(int hidden) {
  if (hidden < 1) throw ContractError("OptimizerPolicy: hidden size must be positive");
  OptimizerPolicy p;
  p.hidden = hidden;
  for (auto& g : p.gates) g = {Mat::Zero(kFeatures, hidden), Mat::Zero(hidden, hidden), Vec::Zero(hidden)};
  p.W_out = Mat::Zero(hidden, 3);
  p.b_out = Vec::Zero(3);
  return p;
}

OptimizerPolicy OptimizerPolicy::init(int hidden, std::uint64_t seed) {
  OptimizerPolicy p = fixed_half(hidden);
  Rng rng(seed);
  const double a = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> u(-a, a);
  for (auto& g : p.gates) {
    for (Eigen::Index j = 0; j < g.W.cols(); ++j)
      for (Eigen::Index i = 0; i < g.W.rows(); ++i) g.W(i, j) = u(rng);
    for (Eigen::Index j = 0; j < g.U.cols(); ++j)
      for (Eigen::Index i = 0; i < g.U.rows(); ++i) g.U(i, j) = u(rng);
  }
  p.gates[1].b.setOnes();  // forget-gate bias
  return p;
}

std::vector<diff::Tensor> OptimizerPolicy::pack() const {
  std::vector<diff::Tensor> out;
  for (const auto& g : gates) {
    out.push_back(diff::Tensor::from_eigen(g.W));
    out.push_back(diff::Tensor::from_eigen(g.U));
    out.push_back(diff::Tensor::from_eigen(g.b.transpose()));
  }
  out.push_back(diff::Tensor::from_eigen(W_out));
  out.push_back(diff::Tensor::from_eigen(b_out.transpose()));
  return out;
}

void OptimizerPolicy::unpack(std::span<const diff::Tensor> t) {
  if (t.size() != 14) throw DimensionError("OptimizerPolicy::unpack: expected 14 tensors");
  auto take = [](const diff::Tensor& src, Eigen::Index rows, Eigen::Index cols) {
    Mat m = src.to_eigen();
    if (m.rows() != rows || m.cols() != cols) throw DimensionError("OptimizerPolicy::unpack: shape mismatch");
    return m;
  };
  std::size_t k = 0;
  for (auto& g : gates) {
    g.W = take(t[k++], kFeatures, hidden);
    g.U = take(t[k++], hidden, hidden);
    g.b = take(t[k++], 1, hidden).transpose();
  }
  W_out = take(t[k++], hidden, 3);
  b_out = take(t[k++], 1, 3).transpose();
}

PolicyState PolicyState::zeros(Eigen::Index rows, int hidden) { return {Mat::Zero(rows, hidden), Mat::Zero(rows, hidden)}; }

PolicyOutput policy_step(const OptimizerPolicy& p, const Mat& z, const PolicyState& s) {
  if (z.cols() != OptimizerPolicy::kFeatures) throw DimensionError("policy_step: features must have 3 columns");
  if (s.h.rows() != z.rows() || s.c.rows() != z.rows() || s.h.cols() != p.hidden || s.c.cols() != p.hidden)
    throw DimensionError("policy_step: state does not match the features");
  const int H = p.hidden;
  Mat W(OptimizerPolicy::kFeatures, 4 * H), U(H, 4 * H);
  Eigen::RowVectorXd b(4 * H);
  for (int g = 0; g < 4; ++g) {
    const auto& gate = p.gates[static_cast<std::size_t>(g)];
    W.middleCols(g * H, H) = gate.W;
    U.middleCols(g * H, H) = gate.U;
    b.segment(g * H, H) = gate.b.transpose();
  }
  Mat a = z * W + s.h * U;
  a.rowwise() += b;
  const Mat i = sigmoid(a.middleCols(0, H));
  const Mat f = sigmoid(a.middleCols(H, H));
  const Mat g = tanh_fast(a.middleCols(2 * H, H));
  const Mat o = sigmoid(a.middleCols(3 * H, H));
  PolicyOutput out;
  out.next.c = f.cwiseProduct(s.c) + i.cwiseProduct(g);
  out.next.h = o.cwiseProduct(tanh_fast(out.next.c));
  Mat logits = out.next.h * p.W_out;
  logits.rowwise() += p.b_out.transpose();
  out.gains = sigmoid(logits);
  if (!out.gains.allFinite()) throw NumericError("policy_step: non-finite gains");
  return out;
}

// ---- iteration ----------------------------------------------------------------

AdvState adversarial_step(const AugmentedObjective& obj, const OptimizerPolicy& policy, const AdvState& state,
                          StepInfo* info) {
  const auto n = obj.set().dim();
  if (state.xi.size() != n || state.v.size() != n) throw DimensionError("adversarial_step: state has the wrong length");
  const FEval e = obj.eval(state.xi);
  AdvState next;
  Mat xi = state.xi.transpose(), v = state.v.transpose();
  next.hidden = state.hidden;
  if (next.hidden.h.rows() == 0) next.hidden = PolicyState::zeros(n, policy.hidden);
  int failures = 0;
  const Mat gf = e.grad_f.transpose(), gr = e.g_r.transpose();
  const Mat z = features(gf, gr, v);
  const Gains g = lockstep_step(obj.set(), policy, xi, v, next.hidden, gf, gr, &failures);
  if (failures > 0) std::cerr << "warning: prox did not converge in adversarial_step\n";
  next.xi = xi.row(0).transpose();
  next.v = v.row(0).transpose();
  if (info) {
    info->R = g.R.row(0).transpose();
    info->Q = g.Q.row(0).transpose();
    info->B = g.B.row(0).transpose();
    const Mat zt = z.transpose();
    info->features = Eigen::Map<const Vec>(zt.data(), zt.size());
    info->at_start = e;
    info->prox_converged = failures == 0;
  }
  return next;
}

Mat run_lockstep(const AugmentedObjective& obj, const OptimizerPolicy& policy, const Mat& xi0, int K, Vec& final_F,
                 std::vector<AdvTrajectory>* trajectories, int* prox_failures) {
  if (K < 0) throw ContractError("run_lockstep: K must be non-negative");
  if (xi0.cols() != obj.set().dim() || xi0.rows() < 1) throw DimensionError("run_lockstep: bad starting points");
  const auto t0 = std::chrono::steady_clock::now();
  const Eigen::Index M = xi0.rows(), n = xi0.cols();
  Mat xi = project_rows_if_needed(obj.set(), xi0);
  Mat v = Mat::Zero(M, n);
  PolicyState st = PolicyState::zeros(M * n, policy.hidden);
  Vec F;
  Mat gf, gr;
  obj.eval_batch(xi, F, gf, gr);
  if (trajectories) {
    trajectories->assign(static_cast<std::size_t>(M), {});
    for (Eigen::Index m = 0; m < M; ++m) {
      auto& tr = (*trajectories)[static_cast<std::size_t>(m)];
      tr.restart = static_cast<int>(m);
      tr.xi.push_back(xi.row(m).transpose());
      tr.v.push_back(v.row(m).transpose());
      tr.F.push_back(F[m]);
    }
  }
  for (int k = 0; k < K; ++k) {
    const Gains g = lockstep_step(obj.set(), policy, xi, v, st, gf, gr, prox_failures);
    obj.eval_batch(xi, F, gf, gr);
    if (trajectories) {
      for (Eigen::Index m = 0; m < M; ++m) {
        auto& tr = (*trajectories)[static_cast<std::size_t>(m)];
        tr.xi.push_back(xi.row(m).transpose());
        tr.v.push_back(v.row(m).transpose());
        tr.R.push_back(g.R.row(m).transpose());
        tr.Q.push_back(g.Q.row(m).transpose());
        tr.B.push_back(g.B.row(m).transpose());
        tr.F.push_back(F[m]);
      }
    }
  }
  if (trajectories) {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (auto& tr : *trajectories) tr.wall_time = wall;
  }
  final_F = F;
  return xi;
}

AdvTrajectory run_adversarial(const AugmentedObjective& obj, const OptimizerPolicy& policy, const Vec& xi0, int K) {
  std::vector<AdvTrajectory> tr;
  Vec F;
  int failures = 0;
  run_lockstep(obj, policy, xi0.transpose(), K, F, &tr, &failures);
  if (failures > 0) std::cerr << "warning: prox did not converge on " << failures << " steps\n";
  return tr.front();
}

MultiStartResult multi_start_solve(const AugmentedObjective& obj, const OptimizerPolicy& policy, int M, int K, Rng& rng,
                                   bool keep_trajectories) {
  if (M < 1) throw ContractError("multi_start_solve: M must be at least 1");
  Mat xi0(M, obj.set().dim());
  for (int m = 0; m < M; ++m) xi0.row(m) = sample(obj.set(), rng).transpose();
  MultiStartResult res;
  Vec F;
  const Mat xi = run_lockstep(obj, policy, xi0, K, F, keep_trajectories ? &res.trajectories : nullptr, &res.prox_failures);
  res.final_F.assign(F.data(), F.data() + F.size());
  res.best_restart = 0;
  for (int m = 1; m < M; ++m)
    if (F[m] < F[res.best_restart]) res.best_restart = m;
  res.best_F = F[res.best_restart];
  res.xi_star = xi.row(res.best_restart).transpose();
  return res;
}

// ---- training -----------------------------------------------------------------

double unrolled_loss(const ValueNetParams& surrogate, const HvacInstance& inst, const UncertaintySet& set,
                     const PenaltySpec& penalty, const OptimizerPolicy& policy, int K, int draws, std::uint64_t seed) {
  if (K < 1 || draws < 1) throw ContractError("unrolled_loss: K and draws must be positive");
  Rng rng(seed);
  double total = 0.0;
  for (int d = 0; d < draws; ++d) {
    const Vec u0 = uniform_u0(inst, rng);
    const Vec xi0 = sample(set, rng);
    const AugmentedObjective obj(surrogate, u0, set, penalty);
    const AdvTrajectory tr = run_adversarial(obj, policy, xi0, K);
    double s = 0.0;
    for (int k = 1; k <= K; ++k) s += tr.F[static_cast<std::size_t>(k)];
    total += s / K;
  }
  return total / draws;
}

TrainedPolicy train_policy(const ValueNetParams& surrogate, const HvacInstance& inst, const UncertaintySet& set,
                           const PenaltySpec& penalty, const PolicyHyper& hyper, const OptimizerPolicy* init) {
  if (hyper.K < 1 || hyper.tbptt < 1 || hyper.epochs < 0 || hyper.draws < 1 || hyper.val_draws < 1 || hyper.val_every < 1 ||
      !(hyper.lr > 0.0) || !(hyper.clip > 0.0))
    throw ContractError("train_policy: bad hyperparameters");
  if (set.dim() != inst.dims.n_xi) throw DimensionError("train_policy: set and instance disagree on n_xi");

  OptimizerPolicy pol = init ? *init : OptimizerPolicy::init(16, mix_seed(hyper.seed, 1));
  pol.train_set_hash = set_spec_hash(set);
  const auto n = set.dim();
  const int H = pol.hidden;
  const std::uint64_t val_seed = mix_seed(hyper.seed, 2);
  std::vector<diff::Tensor> weights = pol.pack();
  diff::Adam adam(hyper.lr);

  TrainedPolicy out;
  out.policy = pol;
  out.history.best_val = unrolled_loss(surrogate, inst, set, penalty, pol, hyper.K, hyper.val_draws, val_seed);
  out.history.best_epoch = 0;
  out.history.val_epoch.push_back(0);
  out.history.val_loss.push_back(out.history.best_val);

  const double scale = 1.0 / (static_cast<double>(hyper.K) * hyper.draws);
  const diff::Tensor sel[3] = {diff::Tensor::matrix(3, 1, {1, 0, 0}), diff::Tensor::matrix(3, 1, {0, 1, 0}),
                               diff::Tensor::matrix(3, 1, {0, 0, 1})};

  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    Rng rng(mix_seed(mix_seed(hyper.seed, 3), static_cast<std::uint64_t>(epoch)));
    const int D = hyper.draws;
    std::vector<AugmentedObjective> objs;
    objs.reserve(static_cast<std::size_t>(D));
    Mat xi(D, n);
    for (int d = 0; d < D; ++d) {
      objs.emplace_back(surrogate, uniform_u0(inst, rng), set, penalty);
      xi.row(d) = sample(set, rng).transpose();
    }
    Mat v = Mat::Zero(D, n), h = Mat::Zero(D * n, H), c = Mat::Zero(D * n, H);
    Vec F;
    Mat gf, gr;
    eval_rows(objs, xi, F, gf, gr);
    double epoch_loss = 0.0;
    bool bad = false;

    try {
      for (int k0 = 0; k0 < hyper.K; k0 += hyper.tbptt) {
        diff::Tape t;
        const TapeLstm w = record_policy(t, weights);
        auto xi_n = t.constant(column_tensor(xi));
        auto v_n = t.constant(column_tensor(v));
        auto h_n = t.constant(diff::Tensor::from_eigen(h));
        auto c_n = t.constant(diff::Tensor::from_eigen(c));
        const auto ones = t.constant(diff::Tensor::filled({static_cast<std::size_t>(D * n), 1}, 1.0));
        std::array<diff::NodeId, 3> sel_n{t.constant(sel[0]), t.constant(sel[1]), t.constant(sel[2])};
        std::optional<diff::NodeId> loss;

        for (int k = k0; k < std::min(hyper.K, k0 + hyper.tbptt); ++k) {
          const auto gf_n = t.constant(column_tensor(gf));
          const auto gr_n = t.constant(column_tensor(gr));
          const auto z = t.concat_cols(t.concat_cols(gf_n, gr_n), v_n);
          auto gate = [&](int g) {
            const auto gi = static_cast<std::size_t>(g);
            return t.add(t.add(t.matmul(z, w.W[gi]), t.matmul(h_n, w.U[gi])), w.b[gi]);
          };
          const auto ig = t.sigmoid(gate(0));
          const auto fg = t.sigmoid(gate(1));
          const auto gg = t.tanh(gate(2));
          const auto og = t.sigmoid(gate(3));
          c_n = t.add(t.hadamard(fg, c_n), t.hadamard(ig, gg));
          h_n = t.hadamard(og, t.tanh(c_n));
          const auto gains = t.sigmoid(t.add(t.matmul(h_n, w.W_out), w.b_out));
          const auto R = t.matmul(gains, sel_n[0]);
          const auto Q = t.matmul(gains, sel_n[1]);
          const auto B = t.matmul(gains, sel_n[2]);
          v_n = t.add(t.hadamard(Q, v_n), t.hadamard(t.sub(ones, Q), gf_n));
          const auto xbar = t.sub(t.sub(xi_n, t.hadamard(R, gf_n)), t.hadamard(B, v_n));

          const Mat xbar_m = from_coord_rows(t.value(xbar).to_eigen(), D, n);
          if (hyper.prox_in_training) {
            xi = prox_rows(set, xbar_m, nullptr);
            const std::vector<diff::NodeId> in{xbar};
            xi_n = t.custom(in, column_tensor(xi), [&set, xbar_m, y = xi, D, n](const diff::Tensor& g) {
              const Mat gm = from_coord_rows(g.to_eigen(), D, n);
              Mat back(D, n);
              for (int d = 0; d < D; ++d)
                back.row(d) = prox_vjp(set, xbar_m.row(d).transpose(), y.row(d).transpose(), gm.row(d).transpose()).transpose();
              return std::vector<diff::Tensor>{column_tensor(back)};
            });
          } else {
            xi = xbar_m;
            xi_n = xbar;
          }
          eval_rows(objs, xi, F, gf, gr);
          const Mat dF = (gf + gr) * scale;
          const std::vector<diff::NodeId> in{xi_n};
          const auto term = t.custom(in, diff::Tensor::scalar(F.sum() * scale), [dF](const diff::Tensor& g) {
            return std::vector<diff::Tensor>{diff::Tensor::from_eigen(to_coord_rows(dF * g.item()))};
          });
          loss = loss ? t.add(*loss, term) : term;
        }

        const diff::Gradients grads = t.backward(*loss);
        std::vector<diff::Tensor> g;
        for (diff::NodeId id = 0; id < weights.size(); ++id)
          g.push_back(grads.has(id) ? grads[id] : diff::Tensor::zeros(weights[id].shape()));
        diff::clip_by_global_norm(g, hyper.clip);
        adam.step(weights, g);
        pol.unpack(weights);
        epoch_loss += t.value(*loss).item();
        v = from_coord_rows(t.value(v_n).to_eigen(), D, n);
        h = t.value(h_n).to_eigen();
        c = t.value(c_n).to_eigen();
      }
    } catch (const NumericError&) {
      bad = true;
    }
    if (bad || !std::isfinite(epoch_loss)) {
      out.history.diverged = true;
      std::cerr << "train_policy: non-finite loss at epoch " << epoch << "; keeping the best checkpoint\n";
      break;
    }
    out.history.train_loss.push_back(epoch_loss);
    if (epoch % hyper.val_every == 0 || epoch == hyper.epochs) {
      const double val = unrolled_loss(surrogate, inst, set, penalty, pol, hyper.K, hyper.val_draws, val_seed);
      out.history.val_epoch.push_back(epoch);
      out.history.val_loss.push_back(val);
      if (hyper.verbose) std::cerr << "policy epoch " << epoch << " train " << epoch_loss << " val " << val << "\n";
      if (val < out.history.best_val) {
        out.history.best_val = val;
        out.history.best_epoch = epoch;
        out.policy = pol;
      }
    }
  }
  return out;
}

// ---- diagnostics --------------------------------------------------------------

OodDiagnostics ood_compare(const AugmentedObjective& obj_in, const AugmentedObjective& obj_out,
                           const OptimizerPolicy& policy, const Vec& xi0, int K) {
  if (K < 0) throw ContractError("ood_compare: K must be non-negative");
  const auto n = obj_in.set().dim();
  if (obj_out.set().dim() != n || xi0.size() != n) throw DimensionError("ood_compare: dimension mismatch");
  auto start = [&](const UncertaintySet& s) { return contains(s, xi0, 1e-9) ? xi0 : prox(s, xi0).xi; };
  AdvState a{start(obj_in.set()), Vec::Zero(n), PolicyState::zeros(n, policy.hidden)};
  AdvState b{start(obj_out.set()), Vec::Zero(n), PolicyState::zeros(n, policy.hidden)};

  OodDiagnostics d;
  for (int k = 0; k <= K; ++k) {
    StepInfo ia, ib;
    AdvState na, nb;
    if (k < K) {
      na = adversarial_step(obj_in, policy, a, &ia);
      nb = adversarial_step(obj_out, policy, b, &ib);
    } else {
      ia.at_start = obj_in.eval(a.xi);
      ib.at_start = obj_out.eval(b.xi);
    }
    const bool interior = strictly_interior(obj_in.set(), a.xi) && strictly_interior(obj_out.set(), b.xi);
    const double dg = (ib.at_start.g_r - ia.at_start.g_r).norm();
    Vec za(3 * n), zb(3 * n);
    za << ia.at_start.grad_f, ia.at_start.g_r, a.v;
    zb << ib.at_start.grad_f, ib.at_start.g_r, b.v;
    d.s_norm.push_back((b.xi - a.xi).norm());
    d.delta_g.push_back(dg);
    d.delta_z.push_back((zb - za).norm());
    d.interior.push_back(interior);
    if (interior) d.interior_max_delta_g = std::max(d.interior_max_delta_g, dg);
    d.max_s = std::max(d.max_s, d.s_norm.back());
    if (k < K) {
      a = std::move(na);
      b = std::move(nb);
    }
  }
  for (int k = 0; k < K; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    if (d.delta_z[ku] > 0.0) d.max_ratio = std::max(d.max_ratio, (d.s_norm[ku + 1] - d.s_norm[ku]) / d.delta_z[ku]);
  }
  return d;
}

// ---- checkpoints --------------------------------------------------------------

Json to_json(const OptimizerPolicy& p) {
  Json j;
  j["format"] = kPolicyFormat;
  j["version"] = kPolicyVersion;
  j["hidden"] = p.hidden;
  j["gates"] = Json::array();
  for (const auto& g : p.gates) j["gates"].push_back(gate_to_json(g));
  j["W_out"] = matrix_to_json(p.W_out);
  j["b_out"] = vector_to_json(p.b_out);
  j["train_set_hash"] = p.train_set_hash;
  return j;
}

OptimizerPolicy policy_from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != kPolicyFormat) throw FormatError("policy checkpoint: wrong format tag");
    if (j.at("version").get<int>() != kPolicyVersion)
      throw FormatError("policy checkpoint: unsupported version " + std::to_string(j.at("version").get<int>()));
    OptimizerPolicy p = OptimizerPolicy::fixed_half(j.at("hidden").get<int>());
    const Json& gates = j.at("gates");
    if (!gates.is_array() || gates.size() != 4) throw FormatError("policy checkpoint: expected 4 gates");
    std::vector<diff::Tensor> t;
    for (const auto& g : gates) {
      t.push_back(diff::Tensor::from_eigen(matrix_from_json(g.at("W"))));
      t.push_back(diff::Tensor::from_eigen(matrix_from_json(g.at("U"))));
      t.push_back(diff::Tensor::from_eigen(vector_from_json(g.at("b")).transpose()));
    }
    t.push_back(diff::Tensor::from_eigen(matrix_from_json(j.at("W_out"))));
    t.push_back(diff::Tensor::from_eigen(vector_from_json(j.at("b_out")).transpose()));
    p.unpack(t);
    p.train_set_hash = j.value("train_set_hash", "");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("policy checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(std::string("policy checkpoint: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("policy checkpoint: ") + e.what());
  }
}

void save_policy(const std::filesystem::path& path, const OptimizerPolicy& p) { write_json(path, to_json(p)); }
OptimizerPolicy load_policy(const std::filesystem::path& path) { return policy_from_json(read_json(path)); }

}  // namespace l2occg
