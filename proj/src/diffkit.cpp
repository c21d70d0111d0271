#include "l2occg/diffkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "l2occg/errors.hpp"

namespace l2occg::diff {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

enum class Broadcast { same, row, scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, Op op) {
  if (a.same_shape(b)) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  if (b.rows() == 1 && b.cols() == a.cols() && a.shape().size() == 2) return Broadcast::row;
  throw DimensionError(std::string(op_name(op)) + ": cannot combine " + shape_str(a.shape()) +
                       " with " + shape_str(b.shape()));
}

// Reduces a gradient of a's shape back onto b's (broadcast) shape.
Tensor reduce_to(const Tensor& g, const Tensor& b, Broadcast kind) {
  switch (kind) {
    case Broadcast::same:
      return g;
    case Broadcast::scalar: {
      double s = 0.0;
      for (double v : g.data()) s += v;
      return Tensor(b.shape(), {s});
    }
    case Broadcast::row: {
      std::vector<double> out(g.cols(), 0.0);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) out[c] += g.at(r, c);
      return Tensor(b.shape(), std::move(out));
    }
  }
  return g;
}

double rhs_at(const Tensor& b, Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::same:
      return b[i];
    case Broadcast::scalar:
      return b[0];
    case Broadcast::row:
      return b[i % cols];
  }
  return 0.0;
}

template <class F>
Tensor map(const Tensor& a, F f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return Tensor(a.shape(), std::move(out));
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, Broadcast kind, F f) {
  std::vector<double> out(a.size());
  const std::size_t cols = a.cols();
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], rhs_at(b, kind, i, cols));
  return Tensor(a.shape(), std::move(out));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto s : shape_)
    if (s == 0) throw DimensionError("tensor shape entries must be positive");
  if (product(shape_) != data_.size())
    throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(std::vector<std::size_t> shape, double value) {
  const auto n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::from_eigen(const Eigen::MatrixXd& m) {
  RowMatrix rm = m;
  std::vector<double> data(rm.data(), rm.data() + rm.size());
  return matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                std::move(data));
}

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const {
  if (shape_.size() == 2) return shape_[1];
  return data_.size();
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on a tensor with " + std::to_string(size()) + " entries");
  return data_[0];
}

Eigen::Map<const RowMatrix> Tensor::view() const {
  return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}

Eigen::Map<RowMatrix> Tensor::view() {
  return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}

Eigen::MatrixXd Tensor::to_eigen() const { return view(); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string_view op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::hadamard: return "hadamard";
    case Op::scale: return "scale";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::relu: return "relu";
    case Op::sum_pool: return "sum_pool";
    case Op::sum: return "sum";
    case Op::square: return "square";
    case Op::mse: return "mse";
    case Op::reshape: return "reshape";
    case Op::concat_cols: return "concat_cols";
    case Op::custom: return "custom";
  }
  return "?";
}

const Tensor& Gradients::operator[](NodeId id) const {
  if (!has(id)) throw ContractError("no gradient recorded for node " + std::to_string(id));
  return grads_[id];
}

// ---------------------------------------------------------------- Tape

NodeId Tape::push(Node node) {
  if (!node.value.all_finite())
    throw NumericError(std::string("non-finite output from ") + std::string(op_name(node.kind)));
  for (auto in : node.inputs) node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id >= nodes_.size()) throw ContractError("unknown node id " + std::to_string(id));
  return nodes_[id];
}

const Tensor& Tape::value(NodeId id) const { return node(id).value; }
Op Tape::kind(NodeId id) const { return node(id).kind; }

NodeId Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

NodeId Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::apply(Op kind, std::span<const NodeId> in) {
  auto arity = [&](std::size_t k) {
    if (in.size() != k)
      throw DimensionError(std::string(op_name(kind)) + " expects " + std::to_string(k) + " inputs");
  };
  switch (kind) {
    case Op::matmul: arity(2); return matmul(in[0], in[1]);
    case Op::add: arity(2); return add(in[0], in[1]);
    case Op::sub: arity(2); return sub(in[0], in[1]);
    case Op::hadamard: arity(2); return hadamard(in[0], in[1]);
    case Op::sigmoid: arity(1); return sigmoid(in[0]);
    case Op::tanh: arity(1); return tanh(in[0]);
    case Op::relu: arity(1); return relu(in[0]);
    case Op::sum_pool: arity(1); return sum_pool(in[0]);
    case Op::sum: arity(1); return sum(in[0]);
    case Op::square: arity(1); return square(in[0]);
    case Op::mse: arity(2); return mse(in[0], in[1]);
    case Op::concat_cols: arity(2); return concat_cols(in[0], in[1]);
    default:
      throw ContractError(std::string(op_name(kind)) + " needs extra arguments; call it directly");
  }
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.shape().size() != 2 || B.shape().size() != 2 || A.cols() != B.rows())
    throw DimensionError("matmul: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Tensor out = Tensor::zeros({A.rows(), B.cols()});
  out.view().noalias() = A.view() * B.view();
  Node n{Op::matmul, {a, b}, std::move(out)};
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const auto& A = value(a);
  const auto& B = value(b);
  auto bc = broadcast_kind(A, B, Op::add);
  return push({Op::add, {a, b}, zip(A, B, bc, [](double x, double y) { return x + y; })});
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const auto& A = value(a);
  const auto& B = value(b);
  auto bc = broadcast_kind(A, B, Op::sub);
  return push({Op::sub, {a, b}, zip(A, B, bc, [](double x, double y) { return x - y; })});
}

NodeId Tape::hadamard(NodeId a, NodeId b) {
  const auto& A = value(a);
  const auto& B = value(b);
  auto bc = broadcast_kind(A, B, Op::hadamard);
  return push({Op::hadamard, {a, b}, zip(A, B, bc, [](double x, double y) { return x * y; })});
}

NodeId Tape::scale(NodeId a, double factor) {
  Node n{Op::scale, {a}, map(value(a), [factor](double x) { return factor * x; })};
  n.factor = factor;
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId a) {
  return push({Op::sigmoid, {a}, map(value(a), stable_sigmoid)});
}

NodeId Tape::tanh(NodeId a) {
  return push({Op::tanh, {a}, map(value(a), [](double x) { return std::tanh(x); })});
}

NodeId Tape::relu(NodeId a) {
  return push({Op::relu, {a}, map(value(a), [](double x) { return x > 0.0 ? x : 0.0; })});
}

NodeId Tape::sum_pool(NodeId a, std::size_t group) {
  const auto& A = value(a);
  const std::size_t rows = A.rows(), cols = A.cols();
  if (group == 0) group = rows;
  if (rows % group != 0)
    throw DimensionError("sum_pool: " + std::to_string(rows) + " rows not divisible by group " +
                         std::to_string(group));
  const std::size_t out_rows = rows / group;
  std::vector<double> out(out_rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[(r / group) * cols + c] += A.at(r, c);
  Node n{Op::sum_pool, {a}, Tensor::matrix(out_rows, cols, std::move(out))};
  n.group = group;
  return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  return push({Op::sum, {a}, Tensor::scalar(s)});
}

NodeId Tape::square(NodeId a) {
  return push({Op::square, {a}, map(value(a), [](double x) { return x * x; })});
}

NodeId Tape::mse(NodeId prediction, NodeId target) {
  const auto& P = value(prediction);
  const auto& T = value(target);
  if (!P.same_shape(T)) throw DimensionError("mse: prediction and target shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double d = P[i] - T[i];
    s += d * d;
  }
  return push({Op::mse, {prediction, target}, Tensor::scalar(s / static_cast<double>(P.size()))});
}

NodeId Tape::reshape(NodeId a, std::vector<std::size_t> shape) {
  const auto& A = value(a);
  std::vector<double> data(A.data().begin(), A.data().end());
  return push({Op::reshape, {a}, Tensor(std::move(shape), std::move(data))});
}

NodeId Tape::concat_cols(NodeId a, NodeId b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.rows() != B.rows()) throw DimensionError("concat_cols: row counts differ");
  const std::size_t ca = A.cols(), cb = B.cols();
  std::vector<double> out(A.rows() * (ca + cb));
  for (std::size_t r = 0; r < A.rows(); ++r) {
    std::copy_n(A.data().begin() + static_cast<std::ptrdiff_t>(r * ca), ca, out.begin() + static_cast<std::ptrdiff_t>(r * (ca + cb)));
    std::copy_n(B.data().begin() + static_cast<std::ptrdiff_t>(r * cb), cb,
                out.begin() + static_cast<std::ptrdiff_t>(r * (ca + cb) + ca));
  }
  return push({Op::concat_cols, {a, b}, Tensor::matrix(A.rows(), ca + cb, std::move(out))});
}

NodeId Tape::custom(std::span<const NodeId> inputs, Tensor output, VjpRule vjp) {
  for (auto in : inputs) node(in);
  Node n{Op::custom, {inputs.begin(), inputs.end()}, std::move(output)};
  n.vjp = std::move(vjp);
  return push(std::move(n));
}

Gradients Tape::backward(NodeId root) const {
  const Node& r = node(root);
  if (r.value.size() != 1) throw ContractError("backward: root must be scalar-valued");

  Gradients result;
  auto& g = result.grads_;
  g.resize(nodes_.size());
  g[root] = Tensor(r.value.shape(), {1.0});

  auto accumulate = [&](NodeId id, Tensor delta) {
    if (!nodes_[id].needs_grad) return;
    if (g[id].empty()) {
      g[id] = std::move(delta);
      return;
    }
    auto dst = g[id].data();
    auto src = delta.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };

  for (NodeId id = root + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (g[id].empty() || !n.needs_grad || n.kind == Op::leaf) continue;
    const Tensor& G = g[id];
    const Tensor& Y = n.value;
    switch (n.kind) {
      case Op::matmul: {
        const auto& A = nodes_[n.inputs[0]].value;
        const auto& B = nodes_[n.inputs[1]].value;
        if (nodes_[n.inputs[0]].needs_grad) {
          Tensor dA = Tensor::zeros(A.shape());
          dA.view().noalias() = G.view() * B.view().transpose();
          accumulate(n.inputs[0], std::move(dA));
        }
        if (nodes_[n.inputs[1]].needs_grad) {
          Tensor dB = Tensor::zeros(B.shape());
          dB.view().noalias() = A.view().transpose() * G.view();
          accumulate(n.inputs[1], std::move(dB));
        }
        break;
      }
      case Op::add:
      case Op::sub: {
        const auto& A = nodes_[n.inputs[0]].value;
        const auto& B = nodes_[n.inputs[1]].value;
        auto bc = broadcast_kind(A, B, n.kind);
        accumulate(n.inputs[0], G);
        if (nodes_[n.inputs[1]].needs_grad) {
          Tensor dB = reduce_to(G, B, bc);
          if (n.kind == Op::sub)
            for (auto& v : dB.data()) v = -v;
          accumulate(n.inputs[1], std::move(dB));
        }
        break;
      }
      case Op::hadamard: {
        const auto& A = nodes_[n.inputs[0]].value;
        const auto& B = nodes_[n.inputs[1]].value;
        auto bc = broadcast_kind(A, B, Op::hadamard);
        if (nodes_[n.inputs[0]].needs_grad)
          accumulate(n.inputs[0], zip(G, B, bc, [](double gv, double b) { return gv * b; }));
        if (nodes_[n.inputs[1]].needs_grad) {
          Tensor prod = zip(G, A, Broadcast::same, [](double gv, double a) { return gv * a; });
          accumulate(n.inputs[1], reduce_to(prod, B, bc));
        }
        break;
      }
      case Op::scale:
        accumulate(n.inputs[0], map(G, [f = n.factor](double gv) { return f * gv; }));
        break;
      case Op::sigmoid: {
        std::vector<double> d(G.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = G[i] * Y[i] * (1.0 - Y[i]);
        accumulate(n.inputs[0], Tensor(Y.shape(), std::move(d)));
        break;
      }
      case Op::tanh: {
        std::vector<double> d(G.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = G[i] * (1.0 - Y[i] * Y[i]);
        accumulate(n.inputs[0], Tensor(Y.shape(), std::move(d)));
        break;
      }
      case Op::relu: {
        std::vector<double> d(G.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = Y[i] > 0.0 ? G[i] : 0.0;
        accumulate(n.inputs[0], Tensor(Y.shape(), std::move(d)));
        break;
      }
      case Op::sum_pool: {
        const auto& A = nodes_[n.inputs[0]].value;
        std::vector<double> d(A.size());
        const std::size_t cols = A.cols();
        for (std::size_t r = 0; r < A.rows(); ++r)
          for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] = G.at(r / n.group, c);
        accumulate(n.inputs[0], Tensor(A.shape(), std::move(d)));
        break;
      }
      case Op::sum: {
        const auto& A = nodes_[n.inputs[0]].value;
        accumulate(n.inputs[0], Tensor::filled(A.shape(), G[0]));
        break;
      }
      case Op::square: {
        const auto& A = nodes_[n.inputs[0]].value;
        std::vector<double> d(A.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = 2.0 * A[i] * G[i];
        accumulate(n.inputs[0], Tensor(A.shape(), std::move(d)));
        break;
      }
      case Op::mse: {
        const auto& P = nodes_[n.inputs[0]].value;
        const auto& T = nodes_[n.inputs[1]].value;
        const double k = 2.0 * G[0] / static_cast<double>(P.size());
        std::vector<double> d(P.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = k * (P[i] - T[i]);
        Tensor dP(P.shape(), d);
        accumulate(n.inputs[0], dP);
        for (auto& v : d) v = -v;
        accumulate(n.inputs[1], Tensor(T.shape(), std::move(d)));
        break;
      }
      case Op::reshape: {
        const auto& A = nodes_[n.inputs[0]].value;
        std::vector<double> d(G.data().begin(), G.data().end());
        accumulate(n.inputs[0], Tensor(A.shape(), std::move(d)));
        break;
      }
      case Op::concat_cols: {
        const auto& A = nodes_[n.inputs[0]].value;
        const auto& B = nodes_[n.inputs[1]].value;
        const std::size_t ca = A.cols(), cb = B.cols();
        std::vector<double> da(A.size()), db(B.size());
        for (std::size_t r = 0; r < A.rows(); ++r) {
          for (std::size_t c = 0; c < ca; ++c) da[r * ca + c] = G.at(r, c);
          for (std::size_t c = 0; c < cb; ++c) db[r * cb + c] = G.at(r, ca + c);
        }
        accumulate(n.inputs[0], Tensor(A.shape(), std::move(da)));
        accumulate(n.inputs[1], Tensor(B.shape(), std::move(db)));
        break;
      }
      case Op::custom: {
        auto parts = n.vjp(G);
        if (parts.size() != n.inputs.size())
          throw ContractError("custom vjp returned the wrong number of gradients");
        for (std::size_t i = 0; i < parts.size(); ++i) {
          if (!nodes_[n.inputs[i]].needs_grad) continue;
          if (parts[i].size() != nodes_[n.inputs[i]].value.size())
            throw DimensionError("custom vjp gradient has the wrong size");
          accumulate(n.inputs[i], Tensor(nodes_[n.inputs[i]].value.shape(),
                                         std::vector<double>(parts[i].data().begin(), parts[i].data().end())));
        }
        break;
      }
      case Op::leaf:
        break;
    }
  }

  for (NodeId id = 0; id < nodes_.size(); ++id)
    if (nodes_[id].kind == Op::leaf && nodes_[id].needs_grad && g[id].empty())
      g[id] = Tensor::zeros(nodes_[id].value.shape());
  return result;
}

// ---------------------------------------------------------------- utilities

GradCheckReport grad_check(const TapeFunction& f, const Tensor& point, double step, double tol) {
  GradCheckReport report;
  {
    Tape tape;
    auto x = tape.variable(point);
    auto y = f(tape, x);
    auto grads = tape.backward(y);
    const auto& gx = grads[x];
    report.analytic.assign(gx.data().begin(), gx.data().end());
  }
  report.numeric.resize(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    auto eval = [&](double delta) {
      Tensor p = point;
      p[i] += delta;
      Tape tape;
      auto x = tape.constant(p);
      return tape.value(f(tape, x)).item();
    };
    report.numeric[i] = (eval(step) - eval(-step)) / (2.0 * step);
  }
  double scale = 1e-12, err = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    scale = std::max(scale, std::abs(report.numeric[i]));
    err = std::max(err, std::abs(report.analytic[i] - report.numeric[i]));
  }
  report.max_rel_err = err / scale;
  report.pass = std::isfinite(report.max_rel_err) && report.max_rel_err <= tol;
  return report;
}

double global_norm(std::span<const Tensor> tensors) {
  double s = 0.0;
  for (const auto& t : tensors)
    for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

void clip_by_global_norm(std::span<Tensor> tensors, double max_norm) {
  const double norm = global_norm(tensors);
  if (norm <= max_norm || norm == 0.0) return;
  const double k = max_norm / norm;
  for (auto& t : tensors)
    for (auto& v : t.data()) v *= k;
}

void Adam::step(std::span<Tensor> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw DimensionError("adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Tensor::zeros(p.shape()));
      v_.push_back(Tensor::zeros(p.shape()));
    }
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].data();
    auto g = grads[k].data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    if (g.size() != p.size()) throw DimensionError("adam: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

}  // namespace l2occg::diff
