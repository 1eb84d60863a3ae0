#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stylesplit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until touched by backprop
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const Node&)> backward;

  double* grad_buffer();  // allocates zeros on first use
};

}  // namespace detail

// Handle to a dense row-major real array that may participate in a recorded
// computation. Copies share the underlying storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // Mutable access; only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, cut from any recorded history.
  Tensor detach() const;
  // Deep copy of the values into a fresh leaf.
  Tensor clone() const;
  const char* op_name() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of the operations executed while it is the active graph on
// the current thread. Construction activates it; destruction restores the
// previously active graph and releases the recorded history.
class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Accumulates d(loss)/d(t) into every requires_grad leaf reachable from loss.
  void backprop(const Tensor& loss);
  std::size_t size() const { return nodes_.size(); }
  // Operation names in execution order.
  std::vector<std::string> op_names() const;

  static Graph* active();
  void record(const std::shared_ptr<detail::Node>& node);

 private:
  void release();
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  Graph* previous_ = nullptr;
};

// Suspends recording on this thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Graph* saved_;
};

void backprop(Graph& graph, const Tensor& loss);

// Builds an output node and, when recording and any input requires grad,
// attaches the backward closure. Used by every differentiable op.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(const detail::Node&)> backward);

}  // namespace stylesplit
