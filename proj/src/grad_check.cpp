#include "reslab/grad_check.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace reslab {

namespace {

double evaluate(const RecordedFn& f, const Tensor<double>& x) {
  Graph<double> g;
  g.set_check_finite(true);
  auto y = f(g, x);
  if (y.numel() != 1) {
    throw ShapeError("grad_check: function must be scalar-valued, got shape " +
                     to_string(y.shape()));
  }
  return y.item();
}

double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-12});
}

template <class Numeric>
GradCheckResult check_with(const RecordedFn& f, const Tensor<double>& x, Numeric numeric) {
  auto leaf = x.clone(true);
  Graph<double> g;
  g.set_check_finite(true);
  auto y = f(g, leaf);
  GradCheckResult r;
  r.analytic.assign(leaf.numel(), 0.0);
  if (y.node_id()) {
    g.backward(y);
    auto ga = leaf.grad();
    std::copy(ga.begin(), ga.end(), r.analytic.begin());
  } else if (y.numel() != 1) {
    throw ShapeError("grad_check: function must be scalar-valued, got shape " +
                     to_string(y.shape()));
  }

  r.numeric.resize(leaf.numel());
  auto base = x.clone(false);
  auto probe = base.mutable_data();
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    r.numeric[i] = numeric([&](double t) {
      probe[i] = orig + t;
      const double v = evaluate(f, base);
      probe[i] = orig;
      return v;
    });
    const double rel = relative_error(r.analytic[i], r.numeric[i]);
    if (rel > r.max_relative_error) {
      r.max_relative_error = rel;
      r.worst_index = i;
    }
  }
  return r;
}

}  // namespace

GradCheckResult grad_check_detailed(const RecordedFn& f, const Tensor<double>& x, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");
  return check_with(f, x, [eps](auto&& phi) { return (phi(eps) - phi(-eps)) / (2 * eps); });
}

namespace {

template <typename R>
struct Estimate {
  R value;
  R error;
};

template <typename R>
Estimate<R> ridders(const std::function<R(R)>& phi, R h0) {
  constexpr int kRounds = 10;
  constexpr R kShrink = 1.4, kShrink2 = kShrink * kShrink, kSafe = 2.0;
  std::array<std::array<R, kRounds>, kRounds> a{};
  R h = h0;
  a[0][0] = (phi(h) - phi(-h)) / (2 * h);
  Estimate<R> best{a[0][0], std::numeric_limits<R>::infinity()};
  for (int i = 1; i < kRounds; ++i) {
    h /= kShrink;
    a[0][i] = (phi(h) - phi(-h)) / (2 * h);
    R fac = kShrink2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1);
      fac *= kShrink2;
      const R e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (e <= best.error) best = {a[j][i], e};
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * best.error) break;
  }
  return best;
}

template <typename R>
R extrapolate(const std::function<R(R)>& phi, R h0) {
  if (!(h0 > 0)) throw std::invalid_argument("extrapolated_derivative: h0 must be positive");
  // Larger steps are less exposed to round-off, so the first self-consistent
  // tableau wins. One whose early steps straddle a kink reports a large error
  // and the next, smaller start is tried instead. The consistency bar scales
  // with the square root of machine epsilon: 1e-7 in double.
  const R scale = std::sqrt(std::numeric_limits<R>::epsilon() / std::numeric_limits<double>::epsilon());
  const R rel = R(1e-7) * scale, abs = R(1e-13) * scale;
  Estimate<R> best{0, std::numeric_limits<R>::infinity()};
  for (R h : {h0, h0 / 10, h0 / 100, h0 / 1000}) {
    const Estimate<R> e = ridders(phi, h);
    if (e.error <= rel * std::abs(e.value) + abs) return e.value;
    if (e.error < best.error) best = e;
  }
  return best.value;
}

}  // namespace

double extrapolated_derivative(const std::function<double(double)>& phi, double h0) {
  return extrapolate(phi, h0);
}

long double extrapolated_derivative(const std::function<long double(long double)>& phi,
                                    long double h0) {
  return extrapolate(phi, h0);
}

GradCheckResult grad_check_extrapolated(const RecordedFn& f, const Tensor<double>& x, double h0) {
  return check_with(f, x, [h0](const std::function<double(double)>& phi) {
    return extrapolated_derivative(phi, h0);
  });
}

double grad_check(const RecordedFn& f, const Tensor<double>& x, double eps) {
  return grad_check_detailed(f, x, eps).max_relative_error;
}

}  // namespace reslab
