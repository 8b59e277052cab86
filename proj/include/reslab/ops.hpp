#pragma once

#include "reslab/graph.hpp"
#include "reslab/tensor.hpp"

// Differentiable element-wise and reduction primitives. Every op records
// itself on the given graph when any input requires grad.
namespace reslab::ops {

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& a, T s);

/// s * a + c
template <typename T>
Tensor<T> affine(Graph<T>& g, const Tensor<T>& a, T s, T c);

/// Sum of all elements, shape [1]. Left-to-right accumulation.
template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& a);

/// Same data, new shape of equal element count.
template <typename T>
Tensor<T> reshape(Graph<T>& g, const Tensor<T>& a, Shape shape);

}  // namespace reslab::ops
