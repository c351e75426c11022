#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace props {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = MatrixX<double>;
using Mask = MatrixX<bool>;
using Index = Eigen::Index;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string shape_string(Index rows, Index cols);

/// One vertex of the autodiff graph. Interior nodes keep their inputs alive
/// only while they require a gradient.
struct Node {
  Matrix value;
  Matrix grad;
  bool grad_ready = false;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (!grad_ready) {
      grad = g;
      grad_ready = true;
    } else {
      grad += g;
    }
  }
};

/// Dense row-major 2-D array with an optional gradient slot. Copies share the
/// underlying node, so parameters can be referenced from several places.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false);
  static Tensor from_node(std::shared_ptr<Node> node);

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }

  const Matrix& value() const { return node_->value; }
  /// Writable storage; only leaves may be written.
  Matrix& mutable_value();
  double item() const;
  double operator()(Index r, Index c) const { return node_->value(r, c); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool is_leaf() const { return node_->inputs.empty() && !node_->backward; }

  bool has_grad() const { return node_->grad_ready; }
  /// Gradient buffer; zero-filled view when nothing has accumulated yet.
  Matrix grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  /// Deep copy of the value as a fresh leaf.
  Tensor clone(bool requires_grad) const;

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse topological view of the nodes reachable from a scalar sink.
struct Graph {
  std::vector<Node*> order;  // inputs precede consumers
  Node* sink = nullptr;
};

Graph build_graph(const Tensor& sink);

/// Seeds d(sink)/d(sink) = 1 and accumulates into every requires_grad leaf.
void backward(const Tensor& sink);

bool grad_enabled();

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Non-finite detection on op outputs. On by default in debug builds.
void set_finite_checks(bool enabled);
bool finite_checks();

/// Builds an op result. The backward closure is kept only when gradients are
/// recorded and at least one input needs one.
Tensor make_op(Matrix value, const char* op, std::vector<Tensor> inputs,
               std::function<void(Node&)> backward);

}  // namespace props
