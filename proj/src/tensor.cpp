#include "refseg/tensor.hpp"

#include <sstream>

namespace refseg {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index element_count(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

ShapeError::ShapeError(const std::string& op, int axis, const std::string& detail)
    : std::invalid_argument(op + ": shape mismatch" +
                            (axis >= 0 ? " on axis " + std::to_string(axis) : std::string()) +
                            ": " + detail),
      op_(op),
      axis_(axis) {}

namespace {

void validate_shape(const Shape& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      throw ShapeError("tensor", static_cast<int>(i),
                       "dimensions must be positive, got " + to_string(shape));
    }
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_ = std::make_shared<const Buffer<T>>(Buffer<T>::Zero(element_count(shape_)));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> values) : shape_(std::move(shape)) {
  validate_shape(shape_);
  if (values.size() != element_count(shape_)) {
    throw ShapeError("tensor", -1,
                     "shape " + to_string(shape_) + " needs " +
                         std::to_string(element_count(shape_)) + " values, got " +
                         std::to_string(values.size()));
  }
  data_ = std::make_shared<const Buffer<T>>(std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, T value) {
  Index n = element_count(shape);
  return Tensor(std::move(shape), Buffer<T>::Constant(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::initializer_list<T> values) {
  Buffer<T> b(static_cast<Index>(values.size()));
  Index i = 0;
  for (T v : values) b(i++) = v;
  return Tensor(std::move(shape), std::move(b));
}

template <typename T>
Index Tensor<T>::dim(int axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("dim", axis, "axis out of range for " + to_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename T>
const Buffer<T>& Tensor<T>::values() const {
  if (!data_) throw std::logic_error("access to an empty tensor");
  return *data_;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) {
    throw ShapeError("item", -1, "expected a single element, got " + to_string(shape_));
  }
  return (*data_)(0);
}

template <typename T>
T Tensor<T>::at(std::initializer_list<Index> index) const {
  if (static_cast<int>(index.size()) != rank()) {
    throw ShapeError("at", -1, "index rank differs from " + to_string(shape_));
  }
  Index flat = 0;
  int axis = 0;
  for (Index i : index) {
    if (i < 0 || i >= shape_[static_cast<std::size_t>(axis)]) {
      throw ShapeError("at", axis, "index out of range for " + to_string(shape_));
    }
    flat = flat * shape_[static_cast<std::size_t>(axis)] + i;
    ++axis;
  }
  return (*data_)(flat);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = data_;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  validate_shape(shape);
  if (element_count(shape) != size()) {
    throw ShapeError("reshape", -1, to_string(shape_) + " -> " + to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

template <typename T>
Tensor<T> Tape<T>::make(Shape shape, std::shared_ptr<const Buffer<T>> data, Node node) {
  if (consumed_) throw TapeError("cannot record on a tape after backward()");
  nodes_.push_back(std::move(node));
  Tensor<T> out;
  out.shape_ = std::move(shape);
  out.data_ = std::move(data);
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size() - 1);
  return out;
}

template <typename T>
Tensor<T> Tape<T>::watch(const Tensor<T>& leaf) {
  if (leaf.empty()) throw TapeError("cannot watch an empty tensor");
  Node n;
  n.shape = leaf.shape();
  n.leaf = true;
  return make(leaf.shape(), leaf.data_, std::move(n));
}

template <typename T>
Tensor<T> Tape<T>::record(Shape shape, Buffer<T> value, Backward backward) {
  Node n;
  n.shape = shape;
  n.backward = std::move(backward);
  auto data = std::make_shared<const Buffer<T>>(std::move(value));
  if (data->size() != element_count(shape)) {
    throw ShapeError("record", -1, "value size disagrees with " + to_string(shape));
  }
  return make(std::move(shape), std::move(data), std::move(n));
}

template <typename T>
Buffer<T>* Tape<T>::grad_slot(const Tensor<T>& t) {
  if (t.tape_ != this || t.node_ < 0) return nullptr;
  Node& n = nodes_[static_cast<std::size_t>(t.node_)];
  if (n.grad.size() == 0) n.grad = Buffer<T>::Zero(element_count(n.shape));
  return &n.grad;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw TapeError("backward() called twice on the same tape");
  if (loss.tape_ != this) throw TapeError("loss is not recorded on this tape");
  if (loss.size() != 1) {
    throw TapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  consumed_ = true;
  *grad_slot(loss) = Buffer<T>::Ones(1);
  for (int i = loss.node_; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.leaf || n.grad.size() == 0) continue;
    if (n.backward) n.backward(n.grad);
    // Interior gradients and closures are no longer needed.
    n.grad = Buffer<T>();
    n.backward = nullptr;
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(const Tensor<T>& leaf) const {
  if (leaf.tape_ != this || leaf.node_ < 0) {
    throw TapeError("grad(): tensor is not tracked on this tape");
  }
  const Node& n = nodes_[static_cast<std::size_t>(leaf.node_)];
  if (!n.leaf) throw TapeError("grad(): only watched leaves retain gradients");
  if (n.grad.size() == 0) return Tensor<T>::zeros(n.shape);
  return Tensor<T>(n.shape, n.grad);
}

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> operands) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* t : operands) {
    if (!t || !t->tracked()) continue;
    if (tape && tape != t->tape()) throw TapeError("operands are tracked on different tapes");
    tape = t->tape();
  }
  return tape;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template Tape<float>* common_tape(std::initializer_list<const Tensor<float>*>);
template Tape<double>* common_tape(std::initializer_list<const Tensor<double>*>);

}  // namespace refseg
