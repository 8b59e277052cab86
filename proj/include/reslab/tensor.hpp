#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace reslab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an op produces or consumes a NaN/Inf while finite checking is on.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string op, std::size_t node);
  const std::string& op() const { return op_; }
  std::size_t node() const { return node_; }

 private:
  std::string op_;
  std::size_t node_;
};

template <typename T>
class Graph;

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass allocates it
  bool requires_grad = false;
  std::uint64_t graph_id = 0;  // 0 for leaves
  std::size_t node = 0;
};

/// Dense row-major N-d array with an optional gradient buffer.
///
/// Copies are shallow: two Tensor values may refer to the same storage, which
/// is how parameters are shared between a network and the graphs recorded over
/// it. Data is treated as immutable once a tensor has been used in a graph;
/// `mutable_data` exists for optimizers and initializers.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor vector(std::initializer_list<T> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return impl_ ? impl_->data.size() : 0; }

  std::span<const T> data() const;
  std::span<T> mutable_data();
  T at(std::size_t i) const { return data()[i]; }
  /// Value of a one-element tensor.
  T item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const T> grad() const;
  std::span<T> mutable_grad() const;
  /// Allocates a zero grad buffer if none exists.
  void ensure_grad() const;
  void zero_grad() const;
  void clear_grad() const;

  /// Node index inside the graph that produced this tensor, if any.
  std::optional<std::size_t> node_id() const;
  std::uint64_t graph_id() const { return impl_ ? impl_->graph_id : 0; }

  /// Fresh leaf with copied data, no grad and no graph linkage.
  Tensor detach() const;
  Tensor clone(bool requires_grad = false) const;

  /// Identity of the underlying storage.
  const void* id() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorStorage<T>> impl_;
  friend class Graph<T>;
};

/// Copies data into a tensor of another element type.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.numel());
  auto src = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(src[i]);
  return Tensor<To>(t.shape(), std::move(out), t.requires_grad());
}

/// max_i |a_i - b_i|; shapes must match.
template <typename T>
T max_abs_diff(std::span<const T> a, std::span<const T> b);

template <typename T>
T l2_norm(std::span<const T> a);

template <typename T>
T max_abs(std::span<const T> a);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tensor<long double>;

}  // namespace reslab
