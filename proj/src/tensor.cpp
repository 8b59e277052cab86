#include "reslab/tensor.hpp"

#include <cmath>
#include <sstream>
#include <type_traits>

namespace reslab {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

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

NonFiniteError::NonFiniteError(std::string op, std::size_t node)
    : std::runtime_error("non-finite value produced by op '" + op + "' at node " +
                         std::to_string(node)),
      op_(std::move(op)),
      node_(node) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<TensorStorage<T>>()) {
  if (reslab::numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + to_string(shape) + " holds " +
                     std::to_string(reslab::numel(shape)) + " elements but " +
                     std::to_string(data.size()) + " were given");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = reslab::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values, bool requires_grad) {
  return Tensor(Shape{values.size()}, std::vector<T>(values), requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  static const Shape empty;
  return impl_ ? impl_->shape : empty;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape()));
  }
  return impl_->shape[axis];
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!impl_) return {};
  return impl_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!impl_) return {};
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() needs a one-element tensor, got shape " + to_string(shape()));
  }
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!impl_) throw std::logic_error("set_requires_grad on an undefined tensor");
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) return {};
  return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() const {
  ensure_grad();
  return impl_->grad;
}

template <typename T>
void Tensor<T>::ensure_grad() const {
  if (impl_ && impl_->grad.size() != impl_->data.size()) {
    impl_->grad.assign(impl_->data.size(), T(0));
  }
}

template <typename T>
void Tensor<T>::zero_grad() const {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::clear_grad() const {
  if (impl_) {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

template <typename T>
std::optional<std::size_t> Tensor<T>::node_id() const {
  if (!impl_ || impl_->graph_id == 0) return std::nullopt;
  return impl_->node;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return clone(false);
}

template <typename T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const {
  if (!impl_) return {};
  return Tensor(impl_->shape, impl_->data, requires_grad);
}

template <typename T>
T max_abs_diff(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw ShapeError("max_abs_diff over spans of " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " elements");
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
T l2_norm(std::span<const T> a) {
  using Acc = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;
  Acc s = 0;
  for (auto v : a) s += static_cast<Acc>(v) * static_cast<Acc>(v);
  return static_cast<T>(std::sqrt(s));
}

template <typename T>
T max_abs(std::span<const T> a) {
  T m = 0;
  for (auto v : a) m = std::max(m, std::abs(v));
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<long double>;
template float max_abs_diff(std::span<const float>, std::span<const float>);
template double max_abs_diff(std::span<const double>, std::span<const double>);
template float l2_norm(std::span<const float>);
template double l2_norm(std::span<const double>);
template float max_abs(std::span<const float>);
template double max_abs(std::span<const double>);
template long double max_abs_diff(std::span<const long double>, std::span<const long double>);
template long double l2_norm(std::span<const long double>);
template long double max_abs(std::span<const long double>);

}  // namespace reslab
