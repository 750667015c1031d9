#include "stsr/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "stsr/errors.hpp"

namespace stsr {

namespace {
thread_local bool g_grad_enabled = true;
thread_local std::size_t g_last_visits = 0;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) {
    n *= e;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "x" : "") << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<float>& Node::grad_buffer() {
  if (grad.size() != data.size()) {
    grad.assign(data.size(), 0.0f);
  }
  return grad;
}

std::size_t last_backward_visits() { return g_last_visits; }

}  // namespace detail

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  if (requires_grad) {
    node->grad.assign(node->data.size(), 0.0f);
  }
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

detail::Node& Tensor::node() const {
  if (!node_) {
    throw ContractError("use of an undefined tensor");
  }
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node().data.size(); }
std::span<const float> Tensor::data() const { return node().data; }
std::span<float> Tensor::mutable_data() { return node().data; }
std::span<const float> Tensor::grad() const { return node().grad; }
bool Tensor::requires_grad() const { return node().requires_grad; }
bool Tensor::is_leaf() const { return !node().backward; }
const char* Tensor::op_name() const { return node().op; }

float Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  }
  return node().data[0];
}

void Tensor::zero_grad() {
  auto& n = node();
  if (n.requires_grad) {
    n.grad.assign(n.data.size(), 0.0f);
  }
}

Tensor Tensor::detach() const { return from_data(shape(), node().data, false); }

Tensor Tensor::make_result(Shape shape, std::vector<float> data, const char* op,
                           std::initializer_list<Tensor> inputs, detail::BackwardFn backward) {
  return make_result(std::move(shape), std::move(data), op,
                     std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(backward));
}

Tensor Tensor::make_result(Shape shape, std::vector<float> data, const char* op,
                           std::span<const Tensor> inputs, detail::BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  const bool track = g_grad_enabled &&
                     std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) {
      node->parents.push_back(t.node_);
    }
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  auto& root = node();
  if (root.data.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(root.shape));
  }
  if (!root.requires_grad) {
    throw ContractError("backward() on a tensor that is not part of a recorded graph");
  }

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior gradients are recomputed from scratch; leaf gradients accumulate.
  for (auto* n : order) {
    if (n->backward) {
      n->grad.assign(n->data.size(), 0.0f);
    } else {
      n->grad_buffer();
    }
  }
  root.grad[0] += 1.0f;

  std::size_t visits = 0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) {
      (*it)->backward(**it);
      ++visits;
    }
  }
  g_last_visits = visits;
}

}  // namespace stsr
