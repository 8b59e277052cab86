#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "reslab/nn.hpp"

namespace reslab {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Shortcut transforms h(x). All but Projection keep the unit's dimensions.
struct Identity {
  bool operator==(const Identity&) const = default;
};
struct ConstantScale {
  double lambda = 0.5;
  bool operator==(const ConstantScale&) const = default;
};
/// Shortcut scaled by 1 - g(x), branch scaled by g(x).
struct ExclusiveGate {
  double init_bias = -6.0;
  bool operator==(const ExclusiveGate&) const = default;
};
/// Shortcut scaled by 1 - g(x), branch untouched.
struct ShortcutOnlyGate {
  double init_bias = -6.0;
  bool operator==(const ShortcutOnlyGate&) const = default;
};
struct Conv1x1 {
  bool operator==(const Conv1x1&) const = default;
};
struct DropoutShortcut {
  double rate = 0.5;
  bool operator==(const DropoutShortcut&) const = default;
};
/// 1x1 strided conv for units that change width or resolution.
struct Projection {
  bool operator==(const Projection&) const = default;
};

using ShortcutKind = std::variant<Identity, ConstantScale, ExclusiveGate, ShortcutOnlyGate, Conv1x1,
                                  DropoutShortcut, Projection>;

std::string to_string(const ShortcutKind& kind);

enum class ActivationOrder { Original, BnAfterAdd, ReluBeforeAdd, ReluOnlyPreAct, FullPreAct };
enum class BranchShape { Basic, Bottleneck, SingleLayer };

std::string to_string(ActivationOrder order);
std::string to_string(BranchShape shape);
bool is_preactivation(ActivationOrder order);

struct ResidualUnitConfig {
  ShortcutKind shortcut = Identity{};
  ActivationOrder order = ActivationOrder::FullPreAct;
  BranchShape branch = BranchShape::Basic;
  std::size_t in_channels = 16;
  std::size_t out_channels = 16;
  /// Inner width of a bottleneck; 0 means out_channels / 4.
  std::size_t bottleneck_width = 0;
  int stride = 1;
  /// Literal multiplier on F before the merge.
  std::optional<double> branch_scale;
  /// Allows Identity on a dimension-changing unit via subsample + zero channels.
  bool zero_pad_identity = false;
  /// Input already passed through the network's stem activation, so a
  /// pre-activation unit skips its own leading activation.
  bool input_preactivated = false;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;

  bool changes_shape() const { return in_channels != out_channels || stride != 1; }
  std::size_t inner_width() const;
};

/// Throws ConfigError on any inconsistent combination.
void validate(const ResidualUnitConfig& cfg);

template <typename T>
struct UnitTrace {
  Tensor<T> x_in;
  Tensor<T> branch_out;    // the F term entering the merge, after any gate/scale
  Tensor<T> shortcut_out;  // h(x)
  Tensor<T> pre_merge_sum;
  Tensor<T> x_out;
};

template <typename T>
struct ConvLayer {
  std::string name;
  Conv2dParams<T> params;
};
template <typename T>
struct BatchNormLayer {
  std::string name;
  BatchNormParams<T> params;
};
struct ReluLayer {};

template <typename T>
using Layer = std::variant<ConvLayer<T>, BatchNormLayer<T>, ReluLayer>;

template <typename T>
Tensor<T> apply_layers(Graph<T>& g, const std::vector<Layer<T>>& layers, Tensor<T> x, Mode mode);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool weight_decay = true;  // false for BN affine params and gate biases
};

/// Shortcut state. `conv` backs Conv1x1 and Projection, `gate` both gates.
template <typename T>
struct ShortcutParams {
  std::optional<Conv2dParams<T>> conv;
  std::optional<GateParams<T>> gate;
};

/// y = h(x) + F(x); x_next = f(y).
///
/// The unit is three layer lists around the merge: `preact` (leading
/// activation of pre-activation orders), `branch` (the rest of F), and
/// `post` (f). Which list a BN or ReLU lands in is the whole difference
/// between the activation orders.
template <typename T>
class ResidualUnit {
 public:
  struct Output {
    Tensor<T> out;
    UnitTrace<T> trace;
  };

  /// Validates `cfg` and draws He-normal conv weights.
  static ResidualUnit build(const ResidualUnitConfig& cfg, Rng& rng);

  /// Assembles a unit from existing layers. Parameter tensors are shared,
  /// not copied.
  ResidualUnit(ResidualUnitConfig cfg, std::vector<Layer<T>> preact, std::vector<Layer<T>> branch,
               std::vector<Layer<T>> post, ShortcutParams<T> shortcut);

  Output forward(Graph<T>& g, const Tensor<T>& x, Mode mode, Rng& rng) const;

  /// h(x) alone.
  Tensor<T> shortcut_apply(Graph<T>& g, const Tensor<T>& x, Mode mode, Rng& rng) const;

  const ResidualUnitConfig& config() const { return cfg_; }
  const std::vector<Layer<T>>& preact() const { return preact_; }
  const std::vector<Layer<T>>& branch() const { return branch_; }
  const std::vector<Layer<T>>& post() const { return post_; }
  const ShortcutParams<T>& shortcut_params() const { return shortcut_; }
  /// True when projection shortcuts read the pre-activated signal.
  bool shortcut_reads_preact() const;

  std::vector<NamedTensor<T>> parameters(const std::string& prefix) const;
  std::vector<NamedTensor<T>> buffers(const std::string& prefix) const;

  /// Zeroes the last conv of F so the branch contributes exactly zero.
  void zero_last_branch_conv();

 private:
  ResidualUnitConfig cfg_;
  std::vector<Layer<T>> preact_;
  std::vector<Layer<T>> branch_;
  std::vector<Layer<T>> post_;
  ShortcutParams<T> shortcut_;
};

template <typename T>
ResidualUnit<T> build_unit(const ResidualUnitConfig& cfg, Rng& rng) {
  return ResidualUnit<T>::build(cfg, rng);
}

/// Chain in the asymmetric form: an activation after each addition feeds only
/// the next unit's branch, y_{l+1} = y_l + F_l(f_hat(y_l)). `lead` is the
/// activation applied to the chain input before the first branch; the last
/// unit's `after_add` is the chain's output activation.
template <typename T>
struct AsymmetricChain {
  struct Unit {
    std::vector<Layer<T>> branch;     // F without a leading activation
    std::vector<Layer<T>> after_add;  // f_hat, asymmetric
  };
  std::vector<Layer<T>> lead;
  std::vector<Unit> units;
  std::size_t channels = 0;

  /// Random chain with F = conv-BN-ReLU-conv and f_hat = BN-ReLU.
  static AsymmetricChain random(std::size_t length, std::size_t channels, Rng& rng);
  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, Mode mode) const;
};

/// Full pre-activation chain plus the extra activation after the last
/// addition.
template <typename T>
struct PreActChain {
  std::vector<ResidualUnit<T>> units;
  std::vector<Layer<T>> final_activation;

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, Mode mode, Rng& rng) const;
};

/// Regroups an asymmetric chain into pre-activation units: each f_hat moves
/// into the next unit as its pre-activation and the last one becomes the
/// chain's final activation. Weights are shared, only wiring changes.
template <typename T>
PreActChain<T> rewire_preactivation(const AsymmetricChain<T>& chain);

extern template class ResidualUnit<float>;
extern template class ResidualUnit<double>;
extern template class ResidualUnit<long double>;

}  // namespace reslab
