#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fcfl/errors.hpp"

namespace fcfl {

// Dimension sizes, outermost first. An empty shape is a scalar.
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// Dense row-major tensor. Copies share storage (handle semantics) so the tape
// can refer back to the tensors it recorded; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : impl_(std::make_shared<TensorStorage<T>>()) {
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<TensorStorage<T>>()) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  // Deep copy without gradient or tape participation.
  Tensor clone() const {
    Tensor out(impl_->shape, impl_->data);
    return out;
  }

  const std::shared_ptr<TensorStorage<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorStorage<T>> impl_;
};

// Thread-local switch for tape recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Define-by-run record of differentiable operations on the current thread.
// Entries are appended in execution order, so inputs always precede the
// operations that consume them; backward replays the list in reverse.
template <typename T>
class Tape {
 public:
  struct Entry {
    std::string op;
    std::function<void()> backward;
  };

  static Tape& current();

  void record(std::string op, std::function<void()> backward) {
    entries_.push_back({std::move(op), std::move(backward)});
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  // Runs every backward rule in reverse recording order, then clears.
  void replay_backward();

 private:
  std::vector<Entry> entries_;
};

// True when an op over these inputs must be recorded.
template <typename T>
bool tracks_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!GradMode::enabled()) return false;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Seeds d(loss)/d(loss) = 1 and propagates through the current tape.
template <typename T>
void backward(const Tensor<T>& loss);

// Drops any recorded operations without running them (e.g. after an
// aborted forward pass).
template <typename T>
void discard_tape() {
  Tape<T>::current().clear();
}

}  // namespace fcfl
