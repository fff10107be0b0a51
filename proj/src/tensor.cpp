#include "mstaf/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "mstaf/error.hpp"

namespace mstaf {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  auto node = std::make_shared<Node<T>>();
  for (auto d : shape)
    if (d < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
  node->value.assign(static_cast<std::size_t>(mstaf::numel(shape)), value);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data) {
  if (mstaf::numel(shape) != static_cast<std::int64_t>(data.size()))
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                         " values");
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  return Tensor(std::move(node));
}

template <typename T>
std::int64_t Tensor<T>::dim(std::int64_t axis) const {
  const auto n = ndim();
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<std::int64_t>(index.size()) != ndim())
    throw DimensionError("index rank does not match " + shape_str(shape()));
  std::int64_t offset = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    const auto extent = node_->shape[axis++];
    if (i < 0 || i >= extent) throw DimensionError("index out of range for " + shape_str(shape()));
    offset = offset * extent + i;
  }
  return node_->value[static_cast<std::size_t>(offset)];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (node_->grad.empty()) return std::vector<T>(node_->value.size(), T(0));
  return node_->grad;
}

template <typename T>
std::vector<T>& Tensor<T>::grad_buffer() const {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
  return node_->grad;
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) throw UsageError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (node_->grad.empty()) node_->grad.assign(1, T(0));
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), node_->value);
}

namespace detail {

template <typename T>
bool needs_graph(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      const char* op, BackwardFn<T> fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    for (const auto& t : inputs) {
      if (t.defined() && t.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    for (const auto& t : inputs)
      if (t.defined() && t.requires_grad()) node->parents.push_back(t.node_ptr());
    node->backward = std::move(fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<const Tensor<T>*> inputs,
                      const char* op, BackwardFn<T> fn) {
  std::vector<Tensor<T>> list;
  list.reserve(inputs.size());
  for (const auto* t : inputs)
    if (t) list.push_back(*t);
  return make_result(std::move(shape), std::move(value), list, op, std::move(fn));
}

#define MSTAF_INSTANTIATE(T)                                                                          \
  template bool needs_graph<T>(std::initializer_list<const Tensor<T>*>);                              \
  template Tensor<T> make_result<T>(Shape, std::vector<T>, const std::vector<Tensor<T>>&, const char*, \
                                    BackwardFn<T>);                                                   \
  template Tensor<T> make_result<T>(Shape, std::vector<T>, std::initializer_list<const Tensor<T>*>,    \
                                    const char*, BackwardFn<T>);
MSTAF_INSTANTIATE(float)
MSTAF_INSTANTIATE(double)
#undef MSTAF_INSTANTIATE

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;

}  // namespace mstaf
