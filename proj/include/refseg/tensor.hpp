#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace refseg {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename T>
using Buffer = Eigen::Array<T, Eigen::Dynamic, 1>;

std::string to_string(const Shape& shape);
Index element_count(const Shape& shape);

/// Raised when operand shapes disagree. `axis` is the first offending axis,
/// or -1 when the mismatch is in rank or in the operand list itself.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, int axis, const std::string& detail);

  int axis() const noexcept { return axis_; }
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
  int axis_;
};

/// Raised by gradient propagation on misuse of the tape (non-scalar loss,
/// second backward pass, mixing tapes).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
class Tape;

/// Immutable dense row-major tensor. Copies share storage. A tensor produced
/// on a tape carries a node handle so later operations can be differentiated.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Buffer<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, T value);
  static Tensor from(Shape shape, std::initializer_list<T> values);
  static Tensor scalar(T value) { return constant({1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const;
  Index size() const noexcept { return data_ ? data_->size() : 0; }
  bool empty() const noexcept { return size() == 0; }

  const Buffer<T>& values() const;
  const T* data() const { return values().data(); }
  T operator[](Index i) const { return (*data_)(i); }
  T item() const;

  /// Row-major multi-index access, intended for tests and small oracles.
  T at(std::initializer_list<Index> index) const;

  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape<T>* tape() const noexcept { return tape_; }
  int node() const noexcept { return node_; }

  /// Same values and shape, detached from any tape.
  Tensor detach() const;
  /// Shares storage under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, values().template cast<U>());
  }

 private:
  friend class Tape<T>;

  Shape shape_;
  std::shared_ptr<const Buffer<T>> data_;
  Tape<T>* tape_ = nullptr;
  int node_ = -1;
};

/// Records differentiable operations in execution order and propagates
/// gradients in reverse. A tape supports exactly one backward pass; a second
/// call raises TapeError.
template <typename T>
class Tape {
 public:
  /// Receives the upstream gradient of the recorded output.
  using Backward = std::function<void(const Buffer<T>& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `leaf` as a differentiable input and returns the tracked view.
  Tensor<T> watch(const Tensor<T>& leaf);

  /// Appends an operation result. Called by operation implementations.
  Tensor<T> record(Shape shape, Buffer<T> value, Backward backward);

  /// Gradient accumulator of `t`, zero-initialized on first request. Returns
  /// nullptr when `t` is not tracked on this tape.
  Buffer<T>* grad_slot(const Tensor<T>& t);

  void backward(const Tensor<T>& loss);

  /// Gradient of a watched leaf after backward(); zeros if the leaf never
  /// contributed to the loss.
  Tensor<T> grad(const Tensor<T>& leaf) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    Shape shape;
    Buffer<T> grad;
    Backward backward;
    bool leaf = false;
  };

  Tensor<T> make(Shape shape, std::shared_ptr<const Buffer<T>> data, Node node);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// The tape shared by the tracked operands, or nullptr when none is tracked.
/// Operands tracked on different tapes raise TapeError.
template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> operands);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace refseg
