#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "reslab/grad_check.hpp"
#include "reslab/nn.hpp"
#include "reslab/ops.hpp"

namespace reslab::testing {

inline Tensor<double> randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

inline Tensor<double> uniform(Shape shape, Rng& rng, double lo, double hi,
                              bool requires_grad = false) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

/// sum(w * y) with w fixed, so every output element gets a distinct weight.
inline Tensor<double> weighted_sum(Graph<double>& g, const Tensor<double>& y,
                                   const Tensor<double>& w) {
  return ops::sum(g, ops::mul(g, y, w));
}

/// Extrapolated central differences on a parameter that `f` reads through
/// shared storage. Probes at most `max_probes` evenly spaced elements; returns
/// the worst relative error with the same floor as grad_check.
inline double param_grad_check(const std::function<Tensor<double>(Graph<double>&)>& f,
                               Tensor<double> param, std::size_t max_probes = 24,
                               double h0 = 1e-3) {
  param.set_requires_grad(true);
  param.zero_grad();
  {
    Graph<double> g;
    g.backward(f(g));
  }
  const std::vector<double> analytic(param.grad().begin(), param.grad().end());
  auto data = param.mutable_data();
  const std::size_t step = std::max<std::size_t>(1, data.size() / max_probes);
  double worst = 0;
  for (std::size_t i = 0; i < data.size(); i += step) {
    const double orig = data[i];
    const double n = extrapolated_derivative(
        [&](double t) {
          data[i] = orig + t;
          Graph<double> g;
          const double v = f(g).item();
          data[i] = orig;
          return v;
        },
        h0);
    const double a = analytic[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-12}));
  }
  return worst;
}

}  // namespace reslab::testing
