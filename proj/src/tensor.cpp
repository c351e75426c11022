#include "props/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace props {

namespace {

thread_local bool t_grad_enabled = true;

#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif

}  // namespace

std::string shape_string(Index rows, Index cols) {
  std::ostringstream out;
  out << '[' << rows << ',' << cols << ']';
  return out.str();
}

Tensor::Tensor() : node_(std::make_shared<Node>()) {}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Matrix& Tensor::mutable_value() {
  if (!is_leaf()) {
    throw ContractError(std::string("cannot write the value of an op result (") + node_->op + ")");
  }
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() needs a single element, got " + shape_string(rows(), cols()));
  }
  return node_->value(0, 0);
}

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) {
    throw ContractError("requires_grad can only be set on leaves");
  }
  node_->requires_grad = flag;
  if (!flag) {
    node_->grad.resize(0, 0);
    node_->grad_ready = false;
  }
}

Matrix Tensor::grad() const {
  if (node_->grad_ready) {
    return node_->grad;
  }
  return Matrix::Zero(rows(), cols());
}

void Tensor::zero_grad() {
  node_->grad.resize(0, 0);
  node_->grad_ready = false;
}

Tensor Tensor::clone(bool requires_grad) const { return Tensor(node_->value, requires_grad); }

Graph build_graph(const Tensor& sink) {
  Graph graph;
  graph.sink = sink.node().get();
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; inputs are visited in declaration order so the
  // resulting order is a deterministic function of the graph.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(graph.sink, 0);
  visited.insert(graph.sink);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      graph.order.push_back(node);
      stack.pop_back();
    }
  }
  return graph;
}

void backward(const Tensor& sink) {
  if (sink.size() != 1) {
    throw ContractError("backward needs a scalar sink, got " + shape_string(sink.rows(), sink.cols()));
  }
  if (!sink.requires_grad()) {
    return;
  }
  Graph graph = build_graph(sink);
  graph.sink->accumulate(Matrix::Ones(1, 1));
  for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad_ready) {
      node->backward(*node);
      // interior gradients are not needed once propagated
      node->grad.resize(0, 0);
      node->grad_ready = false;
    }
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks() { return g_finite_checks; }

Tensor make_op(Matrix value, const char* op, std::vector<Tensor> inputs,
               std::function<void(Node&)> backward) {
  if (g_finite_checks && !value.allFinite()) {
    throw NonFiniteError(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) {
      needs = needs || in.requires_grad();
    }
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) {
      node->inputs.push_back(in.node());
    }
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace props
