#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stsr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

/// One vertex of the recorded compute graph. Leaves have no backward function.
struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  /// Grad buffer of a node, allocated (zeroed) on first use.
  std::vector<float>& grad_buffer();
};

/// Number of nodes whose backward function ran during the last backward() on this thread.
std::size_t last_backward_visits();

}  // namespace detail

/// Dense row-major float32 tensor with optional reverse-mode gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
/// Graph nodes are kept alive by the tensors that depend on them, so a graph
/// lives exactly as long as its outputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  std::span<const float> grad() const;
  float operator[](std::size_t flat_index) const { return data()[flat_index]; }
  float item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  const char* op_name() const;

  void zero_grad();
  /// Accumulates d(this)/d(leaf) into every requires_grad leaf. `this` must be a scalar.
  void backward() const;

  /// Copy of the values without graph history.
  Tensor detach() const;

  /// Builds an op result. Records the graph edge only when grad mode is on and
  /// some input requires grad.
  static Tensor make_result(Shape shape, std::vector<float> data, const char* op,
                            std::initializer_list<Tensor> inputs, detail::BackwardFn backward);
  static Tensor make_result(Shape shape, std::vector<float> data, const char* op,
                            std::span<const Tensor> inputs, detail::BackwardFn backward);

  detail::Node& node() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph recording for its lifetime (evaluation and sampling).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace stsr
