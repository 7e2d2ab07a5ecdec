#include "mst/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace mst {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{1}, std::vector<T>{value});
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(node_->shape));
  }
  return node_->shape[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
  if (node_->recorded) throw ContractError("recorded tensors are immutable");
  return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->value.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(node_->shape));
  }
  return node_->value[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  if (node_->recorded) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
  if (!flag) node_->grad.clear();
  return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value);
}

template <typename T>
void Tape<T>::record(std::shared_ptr<Node<T>> output, BackwardFn fn) {
  if (consumed_) throw ContractError("recording on a consumed tape; call reset() first");
  entries_.push_back(Entry{std::move(output), std::move(fn)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw ContractError("backward() already ran on this tape; call reset() first");
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  Node<T>* root = loss.raw();
  const bool on_tape = std::any_of(entries_.begin(), entries_.end(),
                                   [root](const Entry& e) { return e.output.get() == root; });
  if (!on_tape) throw ContractError("backward() loss was not produced on this tape");

  root->grad_buffer()[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.size() == it->output->value.size()) it->fn();
  }
  consumed_ = true;
}

template <typename T>
void Tape<T>::reset() {
  entries_.clear();
  consumed_ = false;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) throw ContractError("backward() without an active tape");
  tape->backward(loss);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace mst
