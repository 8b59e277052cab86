#pragma once

#include <optional>
#include <random>
#include <span>

#include "reslab/graph.hpp"
#include "reslab/tensor.hpp"

namespace reslab {

using Rng = std::mt19937_64;

enum class Mode { Train, Eval };

/// Weight [OutC, InC, K, K] with K in {1, 3}. Cross-correlation, zero padding.
template <typename T>
struct Conv2dParams {
  Tensor<T> weight;
  std::optional<Tensor<T>> bias;
  int stride = 1;
  int padding = 0;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel() const { return weight.dim(2); }
};

inline std::size_t conv_out_size(std::size_t in, std::size_t kernel, int stride, int padding) {
  return (in + 2 * static_cast<std::size_t>(padding) - kernel) / static_cast<std::size_t>(stride) + 1;
}

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;  // buffers, never require grad
  Tensor<T> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  static BatchNormParams make(std::size_t channels, double momentum = 0.9, double epsilon = 1e-5);
  std::size_t channels() const { return gamma.numel(); }
};

/// g(x) = sigmoid(conv1x1(x; weight) + bias), weight [C, C, 1, 1], bias [C].
template <typename T>
struct GateParams {
  Conv2dParams<T> conv;
};

/// He-normal weight for a K x K conv, std = sqrt(2 / (K*K*InC)).
template <typename T>
Tensor<T> he_normal_conv(std::size_t out_c, std::size_t in_c, std::size_t k, Rng& rng);

namespace nn {

template <typename T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& x, const Conv2dParams<T>& p);

/// Train mode normalizes with batch statistics over (N, H, W) and folds them
/// into the running buffers (running = momentum * running + (1 - momentum) *
/// batch, unbiased batch variance). Eval mode reads the running buffers only.
template <typename T>
Tensor<T> batchnorm(Graph<T>& g, const Tensor<T>& x, const BatchNormParams<T>& p, Mode mode);

template <typename T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(Graph<T>& g, const Tensor<T>& x);

/// Inverted dropout: survivors scaled by 1/(1-rate); identity in eval mode.
template <typename T>
Tensor<T> dropout(Graph<T>& g, const Tensor<T>& x, double rate, Mode mode, Rng& rng);

template <typename T>
Tensor<T> gate(Graph<T>& g, const Tensor<T>& x, const GateParams<T>& p);

/// [N, C, H, W] -> [N, C]
template <typename T>
Tensor<T> global_avg_pool(Graph<T>& g, const Tensor<T>& x);

/// x [N, F], w [K, F], b [K] -> [N, K]
template <typename T>
Tensor<T> fully_connected(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w,
                          const Tensor<T>& b);

/// Mean over the batch of -log softmax(logits)[label]. Shape [1].
template <typename T>
Tensor<T> softmax_xent(Graph<T>& g, const Tensor<T>& logits, std::span<const int> labels);

/// Zero-padded identity for dimension-increasing units: spatial subsample by
/// `stride`, channels [0, C) copied, [C, out_channels) zero.
template <typename T>
Tensor<T> subsample_pad(Graph<T>& g, const Tensor<T>& x, int stride, std::size_t out_channels);

}  // namespace nn
}  // namespace reslab
