#include "reslab/ops.hpp"

namespace reslab::ops {

namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return g.record("add", Tensor<T>(a.shape(), std::move(out)), {a, b},
                  [a, b](std::span<const T> go) mutable {
                    for (auto* t : {&a, &b}) {
                      if (!t->requires_grad()) continue;
                      auto gi = t->mutable_grad();
                      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
                    }
                  });
}

template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return g.record("sub", Tensor<T>(a.shape(), std::move(out)), {a, b},
                  [a, b](std::span<const T> go) mutable {
                    if (a.requires_grad()) {
                      auto ga = a.mutable_grad();
                      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                    }
                    if (b.requires_grad()) {
                      auto gb = b.mutable_grad();
                      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
                    }
                  });
}

template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return g.record("mul", Tensor<T>(a.shape(), std::move(out)), {a, b},
                  [a, b](std::span<const T> go) mutable {
                    auto x = a.data();
                    auto y = b.data();
                    if (a.requires_grad()) {
                      auto ga = a.mutable_grad();
                      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
                    }
                    if (b.requires_grad()) {
                      auto gb = b.mutable_grad();
                      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * x[i];
                    }
                  });
}

template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * x[i];
  return g.record("scale", Tensor<T>(a.shape(), std::move(out)), {a},
                  [a, s](std::span<const T> go) mutable {
                    auto ga = a.mutable_grad();
                    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
                  });
}

template <typename T>
Tensor<T> affine(Graph<T>& g, const Tensor<T>& a, T s, T c) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * x[i] + c;
  return g.record("affine", Tensor<T>(a.shape(), std::move(out)), {a},
                  [a, s](std::span<const T> go) mutable {
                    auto ga = a.mutable_grad();
                    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
                  });
}

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& a) {
  T acc = 0;
  for (auto v : a.data()) acc += v;
  return g.record("sum", Tensor<T>(Shape{1}, {acc}), {a}, [a](std::span<const T> go) mutable {
    auto ga = a.mutable_grad();
    for (auto& v : ga) v += go[0];
  });
}

template <typename T>
Tensor<T> reshape(Graph<T>& g, const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return g.record("reshape", Tensor<T>(std::move(shape), std::move(out)), {a},
                  [a](std::span<const T> go) mutable {
                    auto ga = a.mutable_grad();
                    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                  });
}

#define RESLAB_INSTANTIATE(T)                                                   \
  template Tensor<T> add(Graph<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> sub(Graph<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> mul(Graph<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> scale(Graph<T>&, const Tensor<T>&, T);                     \
  template Tensor<T> affine(Graph<T>&, const Tensor<T>&, T, T);                 \
  template Tensor<T> sum(Graph<T>&, const Tensor<T>&);                          \
  template Tensor<T> reshape(Graph<T>&, const Tensor<T>&, Shape);

RESLAB_INSTANTIATE(float)
RESLAB_INSTANTIATE(double)
RESLAB_INSTANTIATE(long double)
#undef RESLAB_INSTANTIATE

}  // namespace reslab::ops
