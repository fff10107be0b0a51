#pragma once
// Dense row-major tensor with a dynamically recorded reverse-mode graph.
//
// A Tensor is a cheap handle onto a shared node. Ops that see at least one
// input with requires_grad (and grad recording enabled on this thread) record
// a node holding its parents and a backward closure. backward() walks the
// graph once in reverse topological order and accumulates into .grad.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mstaf {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const std::vector<T>& grad_out)> backward;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from_data(Shape shape, std::vector<T> data);
  static Tensor scalar(T value) { return from_data({}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t ndim() const { return static_cast<std::int64_t>(node_->shape.size()); }
  // Negative axes count from the end.
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const T> data() const { return node_->value; }
  // Mutating a tensor that is already part of a recorded graph invalidates it.
  std::span<T> mutable_data() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T item() const;
  T at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return !node_->grad.empty(); }
  // Zeros if nothing has been accumulated.
  std::vector<T> grad() const;
  std::vector<T>& grad_buffer() const;
  void zero_grad() { node_->grad.clear(); }

  // Seeds d(self)/d(self) = 1 and propagates. Requires a single-element tensor.
  void backward() const;

  // Same values, no graph history.
  Tensor detach() const;

  const char* op() const { return node_->op; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
using BackwardFn = std::function<void(const std::vector<T>& grad_out)>;

// Wraps an op output. Records a graph node only when grad is enabled and some
// input requires grad; `fn` may then assume grad_out has the output's size.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<const Tensor<T>*> inputs,
                      const char* op, BackwardFn<T> fn);

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      const char* op, BackwardFn<T> fn);

// Whether an op output built from these inputs will record a node.
template <typename T>
bool needs_graph(std::initializer_list<const Tensor<T>*> inputs);

}  // namespace detail

}  // namespace mstaf
