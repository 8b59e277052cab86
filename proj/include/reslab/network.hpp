#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "reslab/residual_unit.hpp"

namespace reslab {

struct NetworkConfig {
  int depth = 110;
  BranchShape branch = BranchShape::Basic;
  ShortcutKind shortcut = Identity{};
  ActivationOrder order = ActivationOrder::Original;
  std::optional<double> branch_scale;
  /// Inner stage widths; a bottleneck stage outputs 4x its inner width.
  std::array<std::size_t, 3> widths{16, 32, 64};
  std::size_t num_classes = 10;
  std::size_t input_channels = 3;
  std::size_t input_size = 32;
  /// Zero-padded identity instead of projection at dimension-changing units.
  bool zero_pad_shortcuts = false;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;

  bool operator==(const NetworkConfig&) const = default;
};

/// Units per stage from the depth rule: 6n+2 basic, 9n+2 bottleneck, 3n+2
/// single-layer. Throws ConfigError naming the rule otherwise.
std::size_t units_per_stage(const NetworkConfig& cfg);

struct LayerSummary {
  std::string name;
  Shape shape;
  std::size_t count;
};

template <typename T>
class Network {
 public:
  struct Output {
    Tensor<T> logits;
    std::vector<UnitTrace<T>> traces;
    std::array<Tensor<T>, 3> stage_outputs;
  };

  static Network build(const NetworkConfig& cfg, Rng& rng);

  Output forward(Graph<T>& g, const Tensor<T>& x, Mode mode, Rng& rng) const;

  const NetworkConfig& config() const { return cfg_; }
  const std::vector<ResidualUnit<T>>& units() const { return units_; }
  std::vector<ResidualUnit<T>>& units() { return units_; }
  std::size_t stage_of(std::size_t unit) const { return stage_index_.at(unit); }
  /// Whether the unit changes width or resolution (its shortcut is not h = x).
  bool is_boundary(std::size_t unit) const { return units_.at(unit).config().changes_shape(); }
  std::string unit_name(std::size_t unit) const;

  std::vector<NamedTensor<T>> parameters() const;
  std::vector<NamedTensor<T>> buffers() const;
  std::size_t count_params() const;
  std::vector<LayerSummary> param_summary() const;
  /// Multiply-accumulates of one forward pass for a single image.
  std::uint64_t forward_macs() const;

  /// Overwrites parameters and buffers by name; shapes must match.
  void load_state(const std::map<std::string, std::pair<Shape, std::vector<double>>>& state);

 private:
  NetworkConfig cfg_;
  Conv2dParams<T> stem_;
  std::vector<Layer<T>> stem_act_;
  std::vector<ResidualUnit<T>> units_;
  std::vector<std::size_t> stage_index_;
  std::vector<std::size_t> index_in_stage_;
  std::vector<Layer<T>> head_act_;
  Tensor<T> fc_weight_;
  Tensor<T> fc_bias_;
};

/// Checkpoint file: 8-byte magic, version byte, u64 record count, then per
/// record a u32-length-prefixed name, u32 rank, u64 dims, and float64
/// little-endian values.
inline constexpr std::array<char, 8> kCheckpointMagic{'R', 'E', 'S', 'L', 'A', 'B', 'C', 'K'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using CheckpointState = std::map<std::string, std::pair<Shape, std::vector<double>>>;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Network<T>& net);
CheckpointState read_checkpoint(const std::filesystem::path& path);

extern template class Network<float>;
extern template class Network<double>;

}  // namespace reslab
