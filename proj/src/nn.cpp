#include "reslab/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <type_traits>

namespace reslab {

template <typename T>
BatchNormParams<T> BatchNormParams<T>::make(std::size_t channels, double momentum, double epsilon) {
  BatchNormParams p;
  p.gamma = Tensor<T>::full({channels}, T(1), true);
  p.beta = Tensor<T>::zeros({channels}, true);
  p.running_mean = Tensor<T>::zeros({channels});
  p.running_var = Tensor<T>::full({channels}, T(1));
  p.momentum = momentum;
  p.epsilon = epsilon;
  return p;
}

template <typename T>
Tensor<T> he_normal_conv(std::size_t out_c, std::size_t in_c, std::size_t k, Rng& rng) {
  const double fan_in = static_cast<double>(k * k * in_c);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  std::vector<T> w(out_c * in_c * k * k);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  return Tensor<T>({out_c, in_c, k, k}, std::move(w), true);
}

namespace nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapR = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  std::size_t n, c, h, w, oc, k, oh, ow;
  int stride, pad;
  std::size_t rows() const { return c * k * k; }
  std::size_t cols() const { return oh * ow; }
};

// Column buffers hold a chunk of images side by side: row r of image b starts
// at col + r * ld + b * cols(). Both directions work on a zero-padded copy of
// the image (C x (H+2p) x (W+2p)) so the inner loops carry no bounds checks.
template <typename T>
void pad_image(const T* img, const ConvGeom& g, T* padded) {
  const std::size_t hp = g.h + 2 * g.pad, wp = g.w + 2 * g.pad;
  std::fill(padded, padded + g.c * hp * wp, T(0));
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t y = 0; y < g.h; ++y) {
      const T* src = img + (ci * g.h + y) * g.w;
      std::copy(src, src + g.w, padded + (ci * hp + y + g.pad) * wp + g.pad);
    }
  }
}

template <typename T>
void im2col(const T* padded, const ConvGeom& g, T* col, std::size_t ld) {
  const std::size_t hp = g.h + 2 * g.pad, wp = g.w + 2 * g.pad;
  const std::size_t s = static_cast<std::size_t>(g.stride);
  std::size_t r = 0;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    const T* plane = padded + ci * hp * wp;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx, ++r) {
        T* dst = col + r * ld;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const T* srow = plane + (oy * s + ky) * wp + kx;
          T* drow = dst + oy * g.ow;
          if (s == 1) {
            for (std::size_t ox = 0; ox < g.ow; ++ox) drow[ox] = srow[ox];
          } else {
            for (std::size_t ox = 0; ox < g.ow; ++ox) drow[ox] = srow[ox * s];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_padded(const T* col, const ConvGeom& g, T* padded, std::size_t ld) {
  const std::size_t hp = g.h + 2 * g.pad, wp = g.w + 2 * g.pad;
  const std::size_t s = static_cast<std::size_t>(g.stride);
  std::fill(padded, padded + g.c * hp * wp, T(0));
  std::size_t r = 0;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    T* plane = padded + ci * hp * wp;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx, ++r) {
        const T* src = col + r * ld;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          T* prow = plane + (oy * s + ky) * wp + kx;
          const T* srow = src + oy * g.ow;
          if (s == 1) {
            for (std::size_t ox = 0; ox < g.ow; ++ox) prow[ox] += srow[ox];
          } else {
            for (std::size_t ox = 0; ox < g.ow; ++ox) prow[ox * s] += srow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void unpad_add(const T* padded, const ConvGeom& g, T* img) {
  const std::size_t hp = g.h + 2 * g.pad, wp = g.w + 2 * g.pad;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t y = 0; y < g.h; ++y) {
      const T* src = padded + (ci * hp + y + g.pad) * wp + g.pad;
      T* dst = img + (ci * g.h + y) * g.w;
      for (std::size_t x = 0; x < g.w; ++x) dst[x] += src[x];
    }
  }
}

inline std::size_t padded_size(const ConvGeom& g) {
  return g.c * (g.h + 2 * g.pad) * (g.w + 2 * g.pad);
}

// Grow-only per-thread buffers; contents are garbage on entry.
template <typename T>
T* scratch(std::size_t slot, std::size_t n) {
  thread_local std::array<std::vector<T>, 3> bufs;
  auto& b = bufs[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

// Images per GEMM, sized so one product spans roughly 16k output columns.
inline std::size_t conv_chunk(const ConvGeom& g) {
  return std::clamp<std::size_t>(32768 / std::max<std::size_t>(g.rows() * g.cols(), 1), 1, g.n);
}

template <typename T>
void require_rank4(const char* op, const Tensor<T>& x) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected [N,C,H,W] input, got " + to_string(x.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& x, const Conv2dParams<T>& p) {
  require_rank4("conv2d", x);
  if (p.weight.rank() != 4 || p.weight.dim(2) != p.weight.dim(3)) {
    throw ShapeError("conv2d: weight must be [OutC,InC,K,K], got " + to_string(p.weight.shape()));
  }
  if (p.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (p.padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  if (p.in_channels() != x.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) +
                     " channels but weight expects " + std::to_string(p.in_channels()) +
                     " (input " + to_string(x.shape()) + ", weight " + to_string(p.weight.shape()) +
                     ")");
  }
  if (p.bias && p.bias->numel() != p.out_channels()) {
    throw ShapeError("conv2d: bias " + to_string(p.bias->shape()) + " does not match " +
                     std::to_string(p.out_channels()) + " output channels");
  }
  const std::size_t k = p.kernel();
  if (x.dim(2) + 2 * static_cast<std::size_t>(p.padding) < k ||
      x.dim(3) + 2 * static_cast<std::size_t>(p.padding) < k) {
    throw ShapeError("conv2d: kernel larger than padded input " + to_string(x.shape()));
  }
  ConvGeom geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), p.out_channels(), k,
               conv_out_size(x.dim(2), k, p.stride, p.padding),
               conv_out_size(x.dim(3), k, p.stride, p.padding), p.stride, p.padding};

  std::vector<T> out(geo.n * geo.oc * geo.cols());
  const std::size_t chunk = conv_chunk(geo);
  const std::size_t img_size = geo.c * geo.h * geo.w;
  T* col = scratch<T>(0, geo.rows() * chunk * geo.cols());
  T* prod = scratch<T>(1, geo.oc * chunk * geo.cols());
  T* padded = scratch<T>(2, padded_size(geo));
  CMapR<T> w(p.weight.data().data(), geo.oc, geo.rows());
  const T* xd = x.data().data();
  for (std::size_t n0 = 0; n0 < geo.n; n0 += chunk) {
    const std::size_t nb = std::min(chunk, geo.n - n0);
    const std::size_t ld = nb * geo.cols();
    for (std::size_t b = 0; b < nb; ++b) {
      pad_image(xd + (n0 + b) * img_size, geo, padded);
      im2col(padded, geo, col + b * geo.cols(), ld);
    }
    MapR<T> o(prod, geo.oc, ld);
    o.noalias() = w * CMapR<T>(col, geo.rows(), ld);
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t oc = 0; oc < geo.oc; ++oc) {
        const T* src = prod + oc * ld + b * geo.cols();
        T* dst = out.data() + ((n0 + b) * geo.oc + oc) * geo.cols();
        const T bias = p.bias ? p.bias->data()[oc] : T(0);
        for (std::size_t j = 0; j < geo.cols(); ++j) dst[j] = src[j] + bias;
      }
    }
  }

  Tensor<T> y({geo.n, geo.oc, geo.oh, geo.ow}, std::move(out));
  std::vector<Tensor<T>> inputs{x, p.weight};
  if (p.bias) inputs.push_back(*p.bias);
  return g.record("conv2d", y, inputs, [x, p, geo](std::span<const T> go) {
    const std::size_t chunk = conv_chunk(geo);
    const std::size_t img_size = geo.c * geo.h * geo.w;
    T* col = scratch<T>(0, geo.rows() * chunk * geo.cols());
    T* gcat = scratch<T>(1, geo.oc * chunk * geo.cols());
    T* padded = scratch<T>(2, padded_size(geo));
    CMapR<T> w(p.weight.data().data(), geo.oc, geo.rows());
    const T* xd = x.data().data();
    T* dx = x.requires_grad() ? x.mutable_grad().data() : nullptr;
    T* dw_ptr = p.weight.requires_grad() ? p.weight.mutable_grad().data() : nullptr;
    T* db = p.bias && p.bias->requires_grad() ? p.bias->mutable_grad().data() : nullptr;
    for (std::size_t n0 = 0; n0 < geo.n; n0 += chunk) {
      const std::size_t nb = std::min(chunk, geo.n - n0);
      const std::size_t ld = nb * geo.cols();
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t oc = 0; oc < geo.oc; ++oc) {
          const T* src = go.data() + ((n0 + b) * geo.oc + oc) * geo.cols();
          std::copy(src, src + geo.cols(), gcat + oc * ld + b * geo.cols());
        }
      }
      CMapR<T> gout(gcat, geo.oc, ld);
      if (db) {
        // plain loop: Eigen's vectorised sum peels by address, so its order drifts with the heap
        for (std::size_t oc = 0; oc < geo.oc; ++oc) {
          const T* row = gcat + oc * ld;
          db[oc] += std::accumulate(row, row + ld, T(0));
        }
      }
      if (dw_ptr) {
        for (std::size_t b = 0; b < nb; ++b) {
          pad_image(xd + (n0 + b) * img_size, geo, padded);
          im2col(padded, geo, col + b * geo.cols(), ld);
        }
        MapR<T> dw(dw_ptr, geo.oc, geo.rows());
        dw.noalias() += gout * CMapR<T>(col, geo.rows(), ld).transpose();
      }
      if (dx) {
        MapR<T>(col, geo.rows(), ld).noalias() = w.transpose() * gout;
        for (std::size_t b = 0; b < nb; ++b) {
          col2im_padded(col + b * geo.cols(), geo, padded, ld);
          unpad_add(padded, geo, dx + (n0 + b) * img_size);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> batchnorm(Graph<T>& g, const Tensor<T>& x, const BatchNormParams<T>& p, Mode mode) {
  require_rank4("batchnorm", x);
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (p.channels() != c) {
    throw ShapeError("batchnorm: " + std::to_string(p.channels()) + " channels of params vs input " +
                     to_string(x.shape()));
  }
  if (mode == Mode::Train && n < 2) {
    throw std::invalid_argument("batchnorm: train mode needs batch size >= 2, got " +
                                std::to_string(n));
  }
  for (auto v : p.running_var.data()) {
    if (v < 0) throw std::invalid_argument("batchnorm: running_var is negative");
  }

  // statistics in at least double precision
  using Acc = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;
  const Acc m = static_cast<Acc>(n * hw);
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(c);
  std::vector<T> out(x.numel());
  auto xd = x.data();
  auto gamma = p.gamma.data();
  auto beta = p.beta.data();

  for (std::size_t ch = 0; ch < c; ++ch) {
    Acc mean, var;
    if (mode == Mode::Train) {
      Acc s = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* src = xd.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += src[i];
      }
      mean = s / m;
      Acc sq = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* src = xd.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const Acc d = src[i] - mean;
          sq += d * d;
        }
      }
      var = sq / m;
      auto rm = Tensor<T>(p.running_mean).mutable_data();
      auto rv = Tensor<T>(p.running_var).mutable_data();
      rm[ch] = static_cast<T>(p.momentum * rm[ch] + (1 - p.momentum) * mean);
      rv[ch] = static_cast<T>(p.momentum * rv[ch] + (1 - p.momentum) * var * m / (m - 1));
    } else {
      mean = p.running_mean.data()[ch];
      var = p.running_var.data()[ch];
    }
    const T mu = static_cast<T>(mean);
    const T is = static_cast<T>(Acc(1) / std::sqrt(var + static_cast<Acc>(p.epsilon)));
    (*inv_std)[ch] = is;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (xd[off + i] - mu) * is;
        (*xhat)[off + i] = xh;
        out[off + i] = gamma[ch] * xh + beta[ch];
      }
    }
  }

  Tensor<T> y(x.shape(), std::move(out));
  return g.record(
      mode == Mode::Train ? "batchnorm_train" : "batchnorm_eval", y, {x, p.gamma, p.beta},
      [x, p, xhat, inv_std, n, c, hw, m, mode](std::span<const T> go) mutable {
        auto gamma = p.gamma.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          T sum_dy = 0, sum_dy_xh = 0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy += go[off + i];
              sum_dy_xh += go[off + i] * (*xhat)[off + i];
            }
          }
          if (p.gamma.requires_grad()) p.gamma.mutable_grad()[ch] += sum_dy_xh;
          if (p.beta.requires_grad()) p.beta.mutable_grad()[ch] += sum_dy;
          if (!x.requires_grad()) continue;
          auto dx = x.mutable_grad();
          const T k = gamma[ch] * (*inv_std)[ch];
          if (mode == Mode::Train) {
            const T mean_dy = static_cast<T>(sum_dy / m);
            const T mean_dy_xh = static_cast<T>(sum_dy_xh / m);
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t off = (b * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i) {
                dx[off + i] += k * (go[off + i] - mean_dy - (*xhat)[off + i] * mean_dy_xh);
              }
            }
          } else {
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t off = (b * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i) dx[off + i] += k * go[off + i];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  return g.record("relu", Tensor<T>(x.shape(), std::move(out)), {x},
                  [x](std::span<const T> go) mutable {
                    auto xd = x.data();
                    auto dx = x.mutable_grad();
                    for (std::size_t i = 0; i < go.size(); ++i) {
                      dx[i] += xd[i] > T(0) ? go[i] : T(0);
                    }
                  });
}

namespace {
template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}
}  // namespace

template <typename T>
Tensor<T> sigmoid(Graph<T>& g, const Tensor<T>& x) {
  auto out = std::make_shared<std::vector<T>>(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = sigmoid_scalar(xd[i]);
  Tensor<T> y(x.shape(), *out);
  return g.record("sigmoid", y, {x}, [x, out](std::span<const T> go) mutable {
    auto dx = x.mutable_grad();
    for (std::size_t i = 0; i < go.size(); ++i) {
      const T s = (*out)[i];
      dx[i] += go[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Tensor<T> dropout(Graph<T>& g, const Tensor<T>& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::Eval || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& m : *mask) m = u(rng) < rate ? T(0) : keep_scale;
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * (*mask)[i];
  return g.record("dropout", Tensor<T>(x.shape(), std::move(out)), {x},
                  [x, mask](std::span<const T> go) mutable {
                    auto dx = x.mutable_grad();
                    for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i] * (*mask)[i];
                  });
}

template <typename T>
Tensor<T> gate(Graph<T>& g, const Tensor<T>& x, const GateParams<T>& p) {
  return sigmoid(g, conv2d(g, x, p.conv));
}

template <typename T>
Tensor<T> global_avg_pool(Graph<T>& g, const Tensor<T>& x) {
  require_rank4("global_avg_pool", x);
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(n * c);
  auto xd = x.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < hw; ++j) s += xd[i * hw + j];
    out[i] = s / static_cast<T>(hw);
  }
  return g.record("global_avg_pool", Tensor<T>({n, c}, std::move(out)), {x},
                  [x, n, c, hw](std::span<const T> go) mutable {
                    auto dx = x.mutable_grad();
                    const T inv = T(1) / static_cast<T>(hw);
                    for (std::size_t i = 0; i < n * c; ++i) {
                      for (std::size_t j = 0; j < hw; ++j) dx[i * hw + j] += go[i] * inv;
                    }
                  });
}

template <typename T>
Tensor<T> fully_connected(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || w.dim(1) != x.dim(1) || b.numel() != w.dim(0)) {
    throw ShapeError("fully_connected: incompatible shapes x" + to_string(x.shape()) + " w" +
                     to_string(w.shape()) + " b" + to_string(b.shape()));
  }
  const std::size_t n = x.dim(0), f = x.dim(1), k = w.dim(0);
  std::vector<T> out(n * k);
  auto xd = x.data();
  auto wd = w.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < k; ++o) {
      T s = bd[o];
      for (std::size_t j = 0; j < f; ++j) s += wd[o * f + j] * xd[i * f + j];
      out[i * k + o] = s;
    }
  }
  return g.record("fully_connected", Tensor<T>({n, k}, std::move(out)), {x, w, b},
                  [x, w, b, n, f, k](std::span<const T> go) mutable {
                    auto xd = x.data();
                    auto wd = w.data();
                    if (x.requires_grad()) {
                      auto dx = x.mutable_grad();
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t o = 0; o < k; ++o)
                          for (std::size_t j = 0; j < f; ++j)
                            dx[i * f + j] += go[i * k + o] * wd[o * f + j];
                    }
                    if (w.requires_grad()) {
                      auto dw = w.mutable_grad();
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t o = 0; o < k; ++o)
                          for (std::size_t j = 0; j < f; ++j)
                            dw[o * f + j] += go[i * k + o] * xd[i * f + j];
                    }
                    if (b.requires_grad()) {
                      auto db = b.mutable_grad();
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t o = 0; o < k; ++o) db[o] += go[i * k + o];
                    }
                  });
}

template <typename T>
Tensor<T> softmax_xent(Graph<T>& g, const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_xent: logits must be [N,K], got " + to_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw std::out_of_range("softmax_xent: label " + std::to_string(labels[i]) + " at index " +
                              std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  auto prob = std::make_shared<std::vector<T>>(n * k);
  auto ld = logits.data();
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = ld.data() + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) (*prob)[i * k + j] = std::exp(row[j] - lse);
    loss += lse - row[labels[i]];
  }
  loss /= static_cast<T>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return g.record("softmax_xent", Tensor<T>({1}, {loss}), {logits},
                  [logits, prob, lab = std::move(lab), n, k](std::span<const T> go) mutable {
                    auto dl = logits.mutable_grad();
                    const T sc = go[0] / static_cast<T>(n);
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < k; ++j) {
                        const T onehot = static_cast<std::size_t>(lab[i]) == j ? T(1) : T(0);
                        dl[i * k + j] += sc * ((*prob)[i * k + j] - onehot);
                      }
                    }
                  });
}

template <typename T>
Tensor<T> subsample_pad(Graph<T>& g, const Tensor<T>& x, int stride, std::size_t out_channels) {
  require_rank4("subsample_pad", x);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_channels < c) {
    throw ShapeError("subsample_pad: cannot shrink " + std::to_string(c) + " channels to " +
                     std::to_string(out_channels));
  }
  if (stride < 1) throw std::invalid_argument("subsample_pad: stride must be >= 1");
  const std::size_t s = static_cast<std::size_t>(stride);
  const std::size_t oh = (h + s - 1) / s, ow = (w + s - 1) / s;
  std::vector<T> out(n * out_channels * oh * ow, T(0));
  auto xd = x.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx)
          out[((b * out_channels + ch) * oh + y) * ow + xx] = xd[((b * c + ch) * h + y * s) * w + xx * s];
  return g.record("subsample_pad", Tensor<T>({n, out_channels, oh, ow}, std::move(out)), {x},
                  [x, n, c, h, w, s, oh, ow, out_channels](std::span<const T> go) mutable {
                    auto dx = x.mutable_grad();
                    for (std::size_t b = 0; b < n; ++b)
                      for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t y = 0; y < oh; ++y)
                          for (std::size_t xx = 0; xx < ow; ++xx)
                            dx[((b * c + ch) * h + y * s) * w + xx * s] +=
                                go[((b * out_channels + ch) * oh + y) * ow + xx];
                  });
}

#define RESLAB_INSTANTIATE(T)                                                                   \
  template Tensor<T> conv2d(Graph<T>&, const Tensor<T>&, const Conv2dParams<T>&);               \
  template Tensor<T> batchnorm(Graph<T>&, const Tensor<T>&, const BatchNormParams<T>&, Mode);   \
  template Tensor<T> relu(Graph<T>&, const Tensor<T>&);                                         \
  template Tensor<T> sigmoid(Graph<T>&, const Tensor<T>&);                                      \
  template Tensor<T> dropout(Graph<T>&, const Tensor<T>&, double, Mode, Rng&);                  \
  template Tensor<T> gate(Graph<T>&, const Tensor<T>&, const GateParams<T>&);                   \
  template Tensor<T> global_avg_pool(Graph<T>&, const Tensor<T>&);                              \
  template Tensor<T> fully_connected(Graph<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                     const Tensor<T>&);                                         \
  template Tensor<T> softmax_xent(Graph<T>&, const Tensor<T>&, std::span<const int>);           \
  template Tensor<T> subsample_pad(Graph<T>&, const Tensor<T>&, int, std::size_t);

RESLAB_INSTANTIATE(float)
RESLAB_INSTANTIATE(double)
RESLAB_INSTANTIATE(long double)
#undef RESLAB_INSTANTIATE

}  // namespace nn

template struct BatchNormParams<float>;
template struct BatchNormParams<double>;
template Tensor<float> he_normal_conv(std::size_t, std::size_t, std::size_t, Rng&);
template Tensor<double> he_normal_conv(std::size_t, std::size_t, std::size_t, Rng&);
template struct BatchNormParams<long double>;
template Tensor<long double> he_normal_conv(std::size_t, std::size_t, std::size_t, Rng&);

}  // namespace reslab
