#include "reslab/residual_unit.hpp"

#include <cmath>
#include <sstream>

#include "reslab/ops.hpp"

namespace reslab {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

std::string fmt_num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(const ShortcutKind& kind) {
  return std::visit(Overloaded{
                        [](const Identity&) { return std::string("identity"); },
                        [](const ConstantScale& s) { return "constant_scale(" + fmt_num(s.lambda) + ")"; },
                        [](const ExclusiveGate& s) { return "exclusive_gate(" + fmt_num(s.init_bias) + ")"; },
                        [](const ShortcutOnlyGate& s) {
                          return "shortcut_only_gate(" + fmt_num(s.init_bias) + ")";
                        },
                        [](const Conv1x1&) { return std::string("conv1x1"); },
                        [](const DropoutShortcut& s) { return "dropout(" + fmt_num(s.rate) + ")"; },
                        [](const Projection&) { return std::string("projection"); },
                    },
                    kind);
}

std::string to_string(ActivationOrder order) {
  switch (order) {
    case ActivationOrder::Original: return "original";
    case ActivationOrder::BnAfterAdd: return "bn_after_add";
    case ActivationOrder::ReluBeforeAdd: return "relu_before_add";
    case ActivationOrder::ReluOnlyPreAct: return "relu_only_preact";
    case ActivationOrder::FullPreAct: return "full_preact";
  }
  return "?";
}

std::string to_string(BranchShape shape) {
  switch (shape) {
    case BranchShape::Basic: return "basic";
    case BranchShape::Bottleneck: return "bottleneck";
    case BranchShape::SingleLayer: return "single";
  }
  return "?";
}

bool is_preactivation(ActivationOrder order) {
  return order == ActivationOrder::ReluOnlyPreAct || order == ActivationOrder::FullPreAct;
}

std::size_t ResidualUnitConfig::inner_width() const {
  return bottleneck_width != 0 ? bottleneck_width : out_channels / 4;
}

void validate(const ResidualUnitConfig& cfg) {
  if (cfg.in_channels == 0 || cfg.out_channels == 0) {
    throw ConfigError("residual unit channels must be positive");
  }
  if (cfg.stride != 1 && cfg.stride != 2) {
    throw ConfigError("residual unit stride must be 1 or 2, got " + std::to_string(cfg.stride));
  }
  if (cfg.branch == BranchShape::Bottleneck && cfg.bottleneck_width == 0 &&
      (cfg.out_channels % 4 != 0 || cfg.out_channels < 4)) {
    throw ConfigError("bottleneck output width " + std::to_string(cfg.out_channels) +
                      " is not a multiple of 4");
  }
  if (cfg.branch_scale && !std::isfinite(*cfg.branch_scale)) {
    throw ConfigError("branch_scale must be finite");
  }
  if (cfg.input_preactivated && !is_preactivation(cfg.order)) {
    throw ConfigError("input_preactivated only applies to pre-activation orders");
  }
  std::visit(Overloaded{
                 [](const ConstantScale& s) {
                   if (!std::isfinite(s.lambda) || s.lambda < 0) {
                     throw ConfigError("constant_scale lambda must be finite and >= 0");
                   }
                 },
                 [](const ExclusiveGate& s) {
                   if (!std::isfinite(s.init_bias)) throw ConfigError("gate bias must be finite");
                 },
                 [](const ShortcutOnlyGate& s) {
                   if (!std::isfinite(s.init_bias)) throw ConfigError("gate bias must be finite");
                 },
                 [](const DropoutShortcut& s) {
                   if (!(s.rate >= 0 && s.rate < 1)) {
                     throw ConfigError("dropout shortcut rate must lie in [0, 1)");
                   }
                 },
                 [](const auto&) {},
             },
             cfg.shortcut);

  const bool projection = std::holds_alternative<Projection>(cfg.shortcut);
  if (cfg.changes_shape()) {
    const bool padded_identity = std::holds_alternative<Identity>(cfg.shortcut) &&
                                 cfg.zero_pad_identity && cfg.out_channels >= cfg.in_channels;
    if (!projection && !padded_identity) {
      throw ConfigError("unit " + std::to_string(cfg.in_channels) + "->" +
                        std::to_string(cfg.out_channels) + " with stride " +
                        std::to_string(cfg.stride) + " changes dimensions and needs a projection " +
                        "shortcut (or zero-padded identity), not " + to_string(cfg.shortcut));
    }
  } else if (projection) {
    throw ConfigError("projection shortcuts are reserved for dimension-changing units; use conv1x1");
  }
}

template <typename T>
Tensor<T> apply_layers(Graph<T>& g, const std::vector<Layer<T>>& layers, Tensor<T> x, Mode mode) {
  for (const auto& layer : layers) {
    x = std::visit(Overloaded{
                       [&](const ConvLayer<T>& l) { return nn::conv2d(g, x, l.params); },
                       [&](const BatchNormLayer<T>& l) { return nn::batchnorm(g, x, l.params, mode); },
                       [&](const ReluLayer&) { return nn::relu(g, x); },
                   },
                   layer);
  }
  return x;
}

namespace {

template <typename T>
ConvLayer<T> make_conv(std::string name, std::size_t in, std::size_t out, std::size_t k, int stride,
                       Rng& rng) {
  Conv2dParams<T> p;
  p.weight = he_normal_conv<T>(out, in, k, rng);
  p.stride = stride;
  p.padding = k == 3 ? 1 : 0;
  return {std::move(name), std::move(p)};
}

template <typename T>
BatchNormLayer<T> make_bn(std::string name, std::size_t c, const ResidualUnitConfig& cfg) {
  return {std::move(name), BatchNormParams<T>::make(c, cfg.bn_momentum, cfg.bn_epsilon)};
}

struct ConvSpec {
  std::size_t in, out, k;
  int stride;
};

std::vector<ConvSpec> conv_specs(const ResidualUnitConfig& cfg) {
  const auto in = cfg.in_channels, out = cfg.out_channels;
  switch (cfg.branch) {
    case BranchShape::Basic:
      return {{in, out, 3, cfg.stride}, {out, out, 3, 1}};
    case BranchShape::Bottleneck: {
      const auto w = cfg.inner_width();
      return {{in, w, 1, 1}, {w, w, 3, cfg.stride}, {w, out, 1, 1}};
    }
    case BranchShape::SingleLayer:
      return {{in, out, 3, cfg.stride}};
  }
  return {};
}

}  // namespace

template <typename T>
ResidualUnit<T>::ResidualUnit(ResidualUnitConfig cfg, std::vector<Layer<T>> preact,
                              std::vector<Layer<T>> branch, std::vector<Layer<T>> post,
                              ShortcutParams<T> shortcut)
    : cfg_(std::move(cfg)),
      preact_(std::move(preact)),
      branch_(std::move(branch)),
      post_(std::move(post)),
      shortcut_(std::move(shortcut)) {
  validate(cfg_);
}

template <typename T>
ResidualUnit<T> ResidualUnit<T>::build(const ResidualUnitConfig& cfg, Rng& rng) {
  validate(cfg);
  const auto order = cfg.order;
  std::vector<Layer<T>> preact, branch, post;

  if (!cfg.input_preactivated) {
    if (order == ActivationOrder::FullPreAct) {
      preact.push_back(make_bn<T>("preact.bn", cfg.in_channels, cfg));
      preact.push_back(ReluLayer{});
    } else if (order == ActivationOrder::ReluOnlyPreAct) {
      preact.push_back(ReluLayer{});
    }
  }

  const auto specs = conv_specs(cfg);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const auto idx = std::to_string(i + 1);
    branch.push_back(make_conv<T>("conv" + idx, s.in, s.out, s.k, s.stride, rng));
    const bool last = i + 1 == specs.size();
    if (!last) {
      branch.push_back(make_bn<T>("bn" + idx, s.out, cfg));
      branch.push_back(ReluLayer{});
      continue;
    }
    switch (order) {
      case ActivationOrder::Original:
      case ActivationOrder::ReluOnlyPreAct:
        branch.push_back(make_bn<T>("bn" + idx, s.out, cfg));
        break;
      case ActivationOrder::ReluBeforeAdd:
        branch.push_back(make_bn<T>("bn" + idx, s.out, cfg));
        branch.push_back(ReluLayer{});
        break;
      case ActivationOrder::BnAfterAdd:
      case ActivationOrder::FullPreAct:
        break;
    }
  }

  if (order == ActivationOrder::Original) {
    post.push_back(ReluLayer{});
  } else if (order == ActivationOrder::BnAfterAdd) {
    post.push_back(make_bn<T>("post.bn", cfg.out_channels, cfg));
    post.push_back(ReluLayer{});
  }

  ShortcutParams<T> sc;
  if (std::holds_alternative<Conv1x1>(cfg.shortcut) ||
      std::holds_alternative<Projection>(cfg.shortcut)) {
    sc.conv = make_conv<T>("shortcut.conv", cfg.in_channels, cfg.out_channels, 1, cfg.stride, rng)
                  .params;
  }
  if (const auto* eg = std::get_if<ExclusiveGate>(&cfg.shortcut)) {
    auto conv = make_conv<T>("gate", cfg.in_channels, cfg.in_channels, 1, 1, rng).params;
    conv.bias = Tensor<T>::full({cfg.in_channels}, static_cast<T>(eg->init_bias), true);
    sc.gate = GateParams<T>{std::move(conv)};
  } else if (const auto* sg = std::get_if<ShortcutOnlyGate>(&cfg.shortcut)) {
    auto conv = make_conv<T>("gate", cfg.in_channels, cfg.in_channels, 1, 1, rng).params;
    conv.bias = Tensor<T>::full({cfg.in_channels}, static_cast<T>(sg->init_bias), true);
    sc.gate = GateParams<T>{std::move(conv)};
  }
  return ResidualUnit(cfg, std::move(preact), std::move(branch), std::move(post), std::move(sc));
}

template <typename T>
bool ResidualUnit<T>::shortcut_reads_preact() const {
  if (!is_preactivation(cfg_.order)) return false;
  return std::holds_alternative<Projection>(cfg_.shortcut) ||
         (std::holds_alternative<Identity>(cfg_.shortcut) && cfg_.changes_shape());
}

template <typename T>
Tensor<T> ResidualUnit<T>::shortcut_apply(Graph<T>& g, const Tensor<T>& x, Mode mode,
                                          Rng& rng) const {
  return std::visit(
      Overloaded{
          [&](const Identity&) {
            return cfg_.changes_shape() ? nn::subsample_pad(g, x, cfg_.stride, cfg_.out_channels) : x;
          },
          [&](const ConstantScale& s) { return ops::scale(g, x, static_cast<T>(s.lambda)); },
          [&](const ExclusiveGate&) {
            auto gv = nn::gate(g, x, *shortcut_.gate);
            return ops::mul(g, ops::affine(g, gv, T(-1), T(1)), x);
          },
          [&](const ShortcutOnlyGate&) {
            auto gv = nn::gate(g, x, *shortcut_.gate);
            return ops::mul(g, ops::affine(g, gv, T(-1), T(1)), x);
          },
          [&](const Conv1x1&) { return nn::conv2d(g, x, *shortcut_.conv); },
          [&](const DropoutShortcut& s) { return nn::dropout(g, x, s.rate, mode, rng); },
          [&](const Projection&) { return nn::conv2d(g, x, *shortcut_.conv); },
      },
      cfg_.shortcut);
}

template <typename T>
typename ResidualUnit<T>::Output ResidualUnit<T>::forward(Graph<T>& g, const Tensor<T>& x,
                                                          Mode mode, Rng& rng) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
    throw ShapeError("residual unit expects " + std::to_string(cfg_.in_channels) +
                     " input channels, got " + to_string(x.shape()));
  }
  const Tensor<T> pre = preact_.empty() ? x : apply_layers(g, preact_, x, mode);
  Tensor<T> f = apply_layers(g, branch_, pre, mode);
  Tensor<T> h;
  if (std::holds_alternative<ExclusiveGate>(cfg_.shortcut)) {
    // One gate evaluation shared by both paths keeps (1-g) + g == 1.
    auto gv = nn::gate(g, x, *shortcut_.gate);
    h = ops::mul(g, ops::affine(g, gv, T(-1), T(1)), x);
    f = ops::mul(g, f, gv);
  } else {
    h = shortcut_apply(g, shortcut_reads_preact() ? pre : x, mode, rng);
  }
  if (cfg_.branch_scale) f = ops::scale(g, f, static_cast<T>(*cfg_.branch_scale));
  if (f.shape() != h.shape()) {
    throw ShapeError("branch " + to_string(f.shape()) + " and shortcut " + to_string(h.shape()) +
                     " disagree");
  }
  auto y = ops::add(g, h, f);
  auto out = post_.empty() ? y : apply_layers(g, post_, y, mode);
  return Output{out, UnitTrace<T>{x, f, h, y, out}};
}

template <typename T>
std::vector<NamedTensor<T>> ResidualUnit<T>::parameters(const std::string& prefix) const {
  std::vector<NamedTensor<T>> out;
  auto collect = [&](const std::vector<Layer<T>>& layers) {
    for (const auto& layer : layers) {
      if (const auto* c = std::get_if<ConvLayer<T>>(&layer)) {
        out.push_back({prefix + c->name + ".weight", c->params.weight, true});
        if (c->params.bias) out.push_back({prefix + c->name + ".bias", *c->params.bias, false});
      } else if (const auto* b = std::get_if<BatchNormLayer<T>>(&layer)) {
        out.push_back({prefix + b->name + ".gamma", b->params.gamma, false});
        out.push_back({prefix + b->name + ".beta", b->params.beta, false});
      }
    }
  };
  collect(preact_);
  collect(branch_);
  collect(post_);
  if (shortcut_.conv) out.push_back({prefix + "shortcut.conv.weight", shortcut_.conv->weight, true});
  if (shortcut_.gate) {
    out.push_back({prefix + "gate.weight", shortcut_.gate->conv.weight, true});
    out.push_back({prefix + "gate.bias", *shortcut_.gate->conv.bias, false});
  }
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> ResidualUnit<T>::buffers(const std::string& prefix) const {
  std::vector<NamedTensor<T>> out;
  for (const auto* layers : {&preact_, &branch_, &post_}) {
    for (const auto& layer : *layers) {
      if (const auto* b = std::get_if<BatchNormLayer<T>>(&layer)) {
        out.push_back({prefix + b->name + ".running_mean", b->params.running_mean, false});
        out.push_back({prefix + b->name + ".running_var", b->params.running_var, false});
      }
    }
  }
  return out;
}

template <typename T>
void ResidualUnit<T>::zero_last_branch_conv() {
  for (auto it = branch_.rbegin(); it != branch_.rend(); ++it) {
    if (auto* c = std::get_if<ConvLayer<T>>(&*it)) {
      auto w = c->params.weight.mutable_data();
      std::fill(w.begin(), w.end(), T(0));
      if (c->params.bias) {
        auto b = c->params.bias->mutable_data();
        std::fill(b.begin(), b.end(), T(0));
      }
      return;
    }
  }
}

template <typename T>
AsymmetricChain<T> AsymmetricChain<T>::random(std::size_t length, std::size_t channels, Rng& rng) {
  std::uniform_real_distribution<double> gamma_dist(0.5, 1.5), beta_dist(-0.5, 0.5);
  auto bn = [&](std::string name) {
    auto p = BatchNormParams<T>::make(channels);
    for (auto& v : p.gamma.mutable_data()) v = static_cast<T>(gamma_dist(rng));
    for (auto& v : p.beta.mutable_data()) v = static_cast<T>(beta_dist(rng));
    return BatchNormLayer<T>{std::move(name), std::move(p)};
  };
  AsymmetricChain chain;
  chain.channels = channels;
  chain.lead = {bn("preact.bn"), ReluLayer{}};
  for (std::size_t i = 0; i < length; ++i) {
    Unit u;
    u.branch = {make_conv<T>("conv1", channels, channels, 3, 1, rng), bn("bn1"), ReluLayer{},
                make_conv<T>("conv2", channels, channels, 3, 1, rng)};
    u.after_add = {bn("post.bn"), ReluLayer{}};
    chain.units.push_back(std::move(u));
  }
  return chain;
}

template <typename T>
Tensor<T> AsymmetricChain<T>::forward(Graph<T>& g, const Tensor<T>& x, Mode mode) const {
  if (units.empty()) throw ConfigError("asymmetric chain has no units");
  Tensor<T> y = x;
  Tensor<T> a = apply_layers(g, lead, y, mode);
  for (const auto& u : units) {
    y = ops::add(g, y, apply_layers(g, u.branch, a, mode));
    a = apply_layers(g, u.after_add, y, mode);
  }
  return a;
}

template <typename T>
Tensor<T> PreActChain<T>::forward(Graph<T>& g, const Tensor<T>& x, Mode mode, Rng& rng) const {
  Tensor<T> h = x;
  for (const auto& u : units) h = u.forward(g, h, mode, rng).out;
  return apply_layers(g, final_activation, h, mode);
}

template <typename T>
PreActChain<T> rewire_preactivation(const AsymmetricChain<T>& chain) {
  if (chain.units.empty()) throw ConfigError("cannot rewire an empty chain");
  ResidualUnitConfig cfg;
  cfg.shortcut = Identity{};
  cfg.order = ActivationOrder::FullPreAct;
  cfg.in_channels = cfg.out_channels = chain.channels;
  PreActChain<T> out;
  for (std::size_t i = 0; i < chain.units.size(); ++i) {
    const auto& pre = i == 0 ? chain.lead : chain.units[i - 1].after_add;
    out.units.emplace_back(cfg, pre, chain.units[i].branch, std::vector<Layer<T>>{},
                           ShortcutParams<T>{});
  }
  out.final_activation = chain.units.back().after_add;
  return out;
}

template Tensor<float> apply_layers(Graph<float>&, const std::vector<Layer<float>>&, Tensor<float>, Mode);
template Tensor<double> apply_layers(Graph<double>&, const std::vector<Layer<double>>&, Tensor<double>, Mode);
template class ResidualUnit<float>;
template class ResidualUnit<double>;
template Tensor<long double> apply_layers(Graph<long double>&, const std::vector<Layer<long double>>&, Tensor<long double>, Mode);
template class ResidualUnit<long double>;
template struct AsymmetricChain<float>;
template struct AsymmetricChain<double>;
template struct PreActChain<float>;
template struct PreActChain<double>;
template PreActChain<float> rewire_preactivation(const AsymmetricChain<float>&);
template PreActChain<double> rewire_preactivation(const AsymmetricChain<double>&);

}  // namespace reslab
