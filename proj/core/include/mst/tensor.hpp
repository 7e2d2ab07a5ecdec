#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mst/error.hpp"

namespace mst {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
class Tape;

/// Storage behind a Tensor handle. Several handles may share one node.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool recorded = false;  // produced by an op on a tape

  std::span<T> grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor. Copies share storage; use clone() or detach() for
/// an independent value.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values);
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  /// Mutable access for leaves only; recorded tensors are immutable.
  std::span<T> mutable_values();
  T item() const;
  T at(std::size_t flat_index) const { return node_->value.at(flat_index); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return !node_->recorded; }

  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  std::span<const T> grad() const;
  void zero_grad() { node_->grad.clear(); }

  /// Same values, no tape history, no grad.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  Node<T>* raw() const { return node_.get(); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Ordered record of differentiable operations. Backward walks the record in
/// reverse exactly once; reset() must be called before the tape can be reused.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<Node<T>> output, BackwardFn fn);
  void backward(const Tensor<T>& loss);
  void reset();

  bool consumed() const { return consumed_; }
  std::size_t size() const { return entries_.size(); }

  /// The tape ops are currently recorded on for this thread, or null.
  static Tape* active() { return active_; }

 private:
  template <typename U>
  friend class TapeScope;
  template <typename U>
  friend class NoGradScope;

  struct Entry {
    std::shared_ptr<Node<T>> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;

  static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

/// Installs a tape as the active one for the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active_) { Tape<T>::active_ = &tape; }
  ~TapeScope() { Tape<T>::active_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording (inference, first refinement pass).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<T>::active_) { Tape<T>::active_ = nullptr; }
  ~NoGradScope() { Tape<T>::active_ = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Backward through the active tape.
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

/// Returns the active tape when any input participates in differentiation.
template <typename T>
Tape<T>* tracking_tape(std::initializer_list<const Node<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const Node<T>* n : inputs) {
    if (n != nullptr && n->requires_grad) return tape;
  }
  return nullptr;
}

/// Marks `out` as recorded and registers its backward rule.
template <typename T>
void record(Tape<T>* tape, const Tensor<T>& out, typename Tape<T>::BackwardFn fn) {
  out.raw()->requires_grad = true;
  out.raw()->recorded = true;
  tape->record(out.node(), std::move(fn));
}

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mst
