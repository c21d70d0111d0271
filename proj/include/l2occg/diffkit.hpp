#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// tensors. Everything is 64-bit; reductions accumulate left to right so a
// replayed tape is bit-identical.
//
// Broadcasting is limited to two cases: a right-hand operand that is a
// scalar (one element), or a row vector (1 x cols or {cols}) added to every
// row of a matrix. Anything else needs an explicit reshape.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace l2occg::diff {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor filled(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor from_eigen(const Eigen::MatrixXd& m);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view: rank 2 is (shape[0], shape[1]); rank 0/1 is a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  Eigen::Map<const RowMatrix> view() const;
  Eigen::Map<RowMatrix> view();
  Eigen::MatrixXd to_eigen() const;

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

enum class Op {
  leaf,
  matmul,
  add,
  sub,
  hadamard,
  scale,
  sigmoid,
  tanh,
  relu,
  sum_pool,
  sum,
  square,
  mse,
  reshape,
  concat_cols,
  custom,
};

std::string_view op_name(Op op);

using NodeId = std::size_t;

class Tape;

/// Gradients of one scalar root with respect to every recorded node.
class Gradients {
 public:
  bool has(NodeId id) const { return id < grads_.size() && !grads_[id].empty(); }
  const Tensor& operator[](NodeId id) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
};

/// Vector-Jacobian product for a custom node: receives dL/d(output) and
/// returns dL/d(input_i) for every input, in order.
using VjpRule = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

class Tape {
 public:
  NodeId variable(Tensor value);
  NodeId constant(Tensor value);

  // Generic entry point for the parameter-free kinds.
  NodeId apply(Op kind, std::span<const NodeId> inputs);
  NodeId apply(Op kind, std::initializer_list<NodeId> inputs) {
    return apply(kind, std::span<const NodeId>(inputs.begin(), inputs.size()));
  }

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId relu(NodeId a);
  /// Sums consecutive groups of `group` rows; group 0 means all rows.
  NodeId sum_pool(NodeId a, std::size_t group = 0);
  NodeId sum(NodeId a);
  NodeId square(NodeId a);
  NodeId mse(NodeId prediction, NodeId target);
  NodeId reshape(NodeId a, std::vector<std::size_t> shape);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId custom(std::span<const NodeId> inputs, Tensor output, VjpRule vjp);

  const Tensor& value(NodeId id) const;
  Op kind(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar root. The tape is left untouched, so this
  /// may be called repeatedly with different roots.
  Gradients backward(NodeId root) const;

 private:
  struct Node {
    Op kind = Op::leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    bool needs_grad = false;
    double factor = 0.0;
    std::size_t group = 0;
    VjpRule vjp;
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;

  std::vector<Node> nodes_;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Scalar function recorded on a tape, given the node holding its argument.
using TapeFunction = std::function<NodeId(Tape&, NodeId)>;

/// Compares the reverse-mode gradient of `f` at `point` with central
/// differences. The error is max_i |analytic_i - numeric_i| divided by the
/// largest numeric magnitude (floored at 1e-12).
GradCheckReport grad_check(const TapeFunction& f, const Tensor& point, double step, double tol);

double global_norm(std::span<const Tensor> tensors);
/// Rescales in place so the joint Euclidean norm is at most max_norm.
void clip_by_global_norm(std::span<Tensor> tensors, double max_norm);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<Tensor> params, std::span<const Tensor> grads);
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long steps_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace l2occg::diff
