#include "reslab/propagation.hpp"

#include <charconv>
#include <cmath>

#include "reslab/ops.hpp"

namespace reslab {

template <typename T>
StageSlice<T> make_stage_slice(const Network<T>& net, std::span<const UnitTrace<T>> traces,
                               std::size_t l, std::size_t L) {
  const std::size_t n = net.units().size();
  if (l > L || L > n) {
    throw SliceError("slice [" + std::to_string(l) + ", " + std::to_string(L) +
                     ") is not a valid range over " + std::to_string(n) + " units");
  }
  if (traces.size() != n) throw SliceError("trace count does not match unit count");
  StageSlice<T> slice{l, L, {}};
  for (std::size_t i = l; i < L; ++i) {
    if (net.stage_of(i) != net.stage_of(l)) {
      throw SliceError("slice [" + std::to_string(l) + ", " + std::to_string(L) +
                       ") crosses a stage boundary at unit " + std::to_string(i));
    }
    if (net.is_boundary(i)) {
      throw SliceError("slice [" + std::to_string(l) + ", " + std::to_string(L) +
                       ") contains dimension-changing unit " + std::to_string(i) + " (" +
                       net.unit_name(i) + ")");
    }
    slice.traces.push_back(traces[i]);
  }
  return slice;
}

namespace {

template <typename T>
double norm2(std::span<const T> v) {
  return static_cast<double>(l2_norm(v));
}

template <typename T>
Tensor<T> constant_input(const Tensor<T>& x) {
  return x.requires_grad() ? x.detach() : x;
}

}  // namespace

template <typename T>
double telescope_check(const Network<T>& net, const Tensor<T>& x, std::size_t l, std::size_t L,
                       Rng& rng, Mode mode) {
  Graph<T> g;
  g.set_grad_enabled(false);
  auto out = net.forward(g, constant_input(x), mode, rng);
  auto slice = make_stage_slice<T>(net, out.traces, l, L);
  if (l == L) return 0.0;

  const auto& x_l = slice.traces.front().x_in;
  const auto& x_L = slice.traces.back().x_out;
  std::vector<T> acc(x_l.data().begin(), x_l.data().end());
  for (const auto& tr : slice.traces) {
    auto f = tr.branch_out.data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f[i];
  }
  std::vector<double> diff(acc.size());
  auto xl = x_L.data();
  for (std::size_t i = 0; i < acc.size(); ++i) {
    diff[i] = static_cast<double>(xl[i]) - static_cast<double>(acc[i]);
  }
  const double denom = norm2(xl);
  const double num = norm2<double>(diff);
  if (denom == 0) return num == 0 ? 0.0 : INFINITY;
  return num / denom;
}

template <typename T>
GradDecomposition<T> gradient_decompose(const Network<T>& net, const Tensor<T>& x,
                                        std::span<const int> labels, std::size_t l, std::size_t L,
                                        Rng& rng, Mode mode) {
  Graph<T> g;
  auto out = net.forward(g, constant_input(x), mode, rng);
  auto slice = make_stage_slice<T>(net, out.traces, l, L);
  auto loss = nn::softmax_xent(g, out.logits, labels);

  // x_l is the input of unit l; for an empty slice x_L is the same tensor.
  const Tensor<T> x_l = l < net.units().size() ? out.traces[l].x_in : out.traces.back().x_out;
  const Tensor<T> x_L = l == L ? x_l : out.traces[L - 1].x_out;

  g.backward(loss);
  GradDecomposition<T> d;
  d.total = Tensor<T>(x_l.shape(), std::vector<T>(x_l.grad().begin(), x_l.grad().end()));
  d.grad_at_L = Tensor<T>(x_L.shape(), std::vector<T>(x_L.grad().begin(), x_L.grad().end()));

  BackwardOptions opts;
  for (const auto& tr : slice.traces) {
    if (auto id = tr.branch_out.node_id()) opts.detached_nodes.push_back(*id);
  }
  g.reset_backward();
  g.backward(loss, opts);
  d.direct = Tensor<T>(x_l.shape(), std::vector<T>(x_l.grad().begin(), x_l.grad().end()));

  std::vector<T> through(d.total.numel());
  auto tot = d.total.data();
  auto dir = d.direct.data();
  for (std::size_t i = 0; i < through.size(); ++i) through[i] = tot[i] - dir[i];
  d.through_weights = Tensor<T>(x_l.shape(), std::move(through));
  return d;
}

double LambdaReport::relative_error() const {
  if (expected == 0) return std::abs(measured);
  return std::abs(measured - expected) / std::abs(expected);
}

template <typename T>
LambdaReport lambda_product_check(const Network<T>& net, const Tensor<T>& x,
                                  std::span<const int> labels, std::size_t l, std::size_t L,
                                  Rng& rng, Mode mode) {
  if (l >= L) throw SliceError("lambda_product_check needs a non-empty slice");
  if (L > net.units().size()) throw SliceError("slice end beyond the last unit");
  std::optional<double> lambda;
  for (std::size_t i = l; i < L; ++i) {
    const auto* cs = std::get_if<ConstantScale>(&net.units()[i].config().shortcut);
    if (!cs) {
      throw SliceError("unit " + std::to_string(i) + " has a " +
                       to_string(net.units()[i].config().shortcut) +
                       " shortcut; lambda check needs constant_scale");
    }
    if (cs->lambda <= 0) {
      throw std::invalid_argument("lambda must be positive, got " + std::to_string(cs->lambda));
    }
    if (lambda && *lambda != cs->lambda) {
      throw SliceError("lambda check needs a uniform lambda across the slice");
    }
    lambda = cs->lambda;
  }

  Graph<T> g;
  auto out = net.forward(g, constant_input(x), mode, rng);
  auto slice = make_stage_slice<T>(net, out.traces, l, L);
  for (std::size_t i = 0; i < slice.traces.size(); ++i) {
    if (max_abs(slice.traces[i].branch_out.data()) != T(0)) {
      throw SliceError("branch of unit " + std::to_string(l + i) +
                       " is not zero; zero the last branch convs first");
    }
  }
  auto loss = nn::softmax_xent(g, out.logits, labels);
  g.backward(loss);

  LambdaReport r;
  r.lambda = *lambda;
  r.span = L - l;
  r.expected = std::pow(*lambda, static_cast<double>(L - l));
  const double top = norm2(slice.traces.back().x_out.grad());
  const double bottom = norm2(slice.traces.front().x_in.grad());
  r.measured = bottom / top;
  return r;
}

template <typename T>
std::vector<ProfileRow> signal_magnitude_profile(const Network<T>& net, const Tensor<T>& x,
                                                 std::span<const int> labels, Rng& rng, Mode mode) {
  Graph<T> g;
  auto out = net.forward(g, constant_input(x), mode, rng);
  auto loss = nn::softmax_xent(g, out.logits, labels);
  g.backward(loss);
  std::vector<ProfileRow> rows;
  for (std::size_t i = 0; i < out.traces.size(); ++i) {
    const auto& tr = out.traces[i];
    rows.push_back({i, norm2(tr.x_in.data()), norm2(tr.branch_out.data()),
                    norm2(tr.shortcut_out.data()), norm2(tr.x_in.grad())});
  }
  return rows;
}

namespace {
std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}
}  // namespace

void write_profile_csv(std::ostream& os, std::span<const ProfileRow> rows) {
  os << "unit_index,x_norm,F_norm,h_norm,grad_norm\n";
  for (const auto& r : rows) {
    os << r.unit_index << ',' << shortest(r.x_norm) << ',' << shortest(r.f_norm) << ','
       << shortest(r.h_norm) << ',' << shortest(r.grad_norm) << '\n';
  }
}

#define RESLAB_INSTANTIATE(T)                                                                     \
  template StageSlice<T> make_stage_slice(const Network<T>&, std::span<const UnitTrace<T>>,        \
                                          std::size_t, std::size_t);                              \
  template double telescope_check(const Network<T>&, const Tensor<T>&, std::size_t, std::size_t,  \
                                  Rng&, Mode);                                                    \
  template GradDecomposition<T> gradient_decompose(const Network<T>&, const Tensor<T>&,           \
                                                   std::span<const int>, std::size_t,             \
                                                   std::size_t, Rng&, Mode);                      \
  template LambdaReport lambda_product_check(const Network<T>&, const Tensor<T>&,                 \
                                             std::span<const int>, std::size_t, std::size_t,      \
                                             Rng&, Mode);                                         \
  template std::vector<ProfileRow> signal_magnitude_profile(const Network<T>&, const Tensor<T>&,  \
                                                            std::span<const int>, Rng&, Mode);

RESLAB_INSTANTIATE(float)
RESLAB_INSTANTIATE(double)
#undef RESLAB_INSTANTIATE

}  // namespace reslab
