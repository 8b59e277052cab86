#include "reslab/network.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "reslab/ops.hpp"

namespace reslab {

std::size_t units_per_stage(const NetworkConfig& cfg) {
  const auto check = [&](int layers_per_unit, const char* rule) {
    const int per_net = 3 * layers_per_unit;
    if (cfg.depth < per_net + 2 || (cfg.depth - 2) % per_net != 0) {
      throw ConfigError("depth " + std::to_string(cfg.depth) + " is invalid for " +
                        to_string(cfg.branch) + " units: depth must satisfy " + rule);
    }
    return static_cast<std::size_t>((cfg.depth - 2) / per_net);
  };
  switch (cfg.branch) {
    case BranchShape::Basic: return check(2, "depth = 6n+2");
    case BranchShape::Bottleneck: return check(3, "depth = 9n+2");
    case BranchShape::SingleLayer: return check(1, "depth = 3n+2");
  }
  return 0;
}

namespace {

std::size_t stage_out_width(const NetworkConfig& cfg, std::size_t stage) {
  return cfg.branch == BranchShape::Bottleneck ? 4 * cfg.widths[stage] : cfg.widths[stage];
}

template <typename T>
void collect_layer_params(const std::vector<Layer<T>>& layers, const std::string& prefix,
                          std::vector<NamedTensor<T>>& out) {
  for (const auto& layer : layers) {
    if (const auto* b = std::get_if<BatchNormLayer<T>>(&layer)) {
      out.push_back({prefix + b->name + ".gamma", b->params.gamma, false});
      out.push_back({prefix + b->name + ".beta", b->params.beta, false});
    }
  }
}

template <typename T>
void collect_layer_buffers(const std::vector<Layer<T>>& layers, const std::string& prefix,
                           std::vector<NamedTensor<T>>& out) {
  for (const auto& layer : layers) {
    if (const auto* b = std::get_if<BatchNormLayer<T>>(&layer)) {
      out.push_back({prefix + b->name + ".running_mean", b->params.running_mean, false});
      out.push_back({prefix + b->name + ".running_var", b->params.running_var, false});
    }
  }
}

std::uint64_t conv_macs(std::size_t out_c, std::size_t in_c, std::size_t k, std::size_t out_hw) {
  return static_cast<std::uint64_t>(out_c) * in_c * k * k * out_hw;
}

}  // namespace

template <typename T>
Network<T> Network<T>::build(const NetworkConfig& cfg, Rng& rng) {
  const std::size_t n = units_per_stage(cfg);
  if (cfg.num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (cfg.input_size < 4) throw ConfigError("input_size must be at least 4");
  for (auto w : cfg.widths) {
    if (w == 0) throw ConfigError("stage widths must be positive");
  }

  Network net;
  net.cfg_ = cfg;
  net.stem_.weight = he_normal_conv<T>(cfg.widths[0], cfg.input_channels, 3, rng);
  net.stem_.padding = 1;
  net.stem_act_ = {BatchNormLayer<T>{"bn", BatchNormParams<T>::make(cfg.widths[0], cfg.bn_momentum,
                                                                    cfg.bn_epsilon)},
                   ReluLayer{}};

  const bool preact = is_preactivation(cfg.order);
  std::size_t in_c = cfg.widths[0];
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t u = 0; u < n; ++u) {
      ResidualUnitConfig uc;
      uc.order = cfg.order;
      uc.branch = cfg.branch;
      uc.in_channels = in_c;
      uc.out_channels = stage_out_width(cfg, s);
      uc.bottleneck_width = cfg.branch == BranchShape::Bottleneck ? cfg.widths[s] : 0;
      uc.stride = (s > 0 && u == 0) ? 2 : 1;
      uc.bn_momentum = cfg.bn_momentum;
      uc.bn_epsilon = cfg.bn_epsilon;
      uc.input_preactivated = preact && s == 0 && u == 0;
      if (uc.changes_shape()) {
        if (cfg.zero_pad_shortcuts) {
          uc.shortcut = Identity{};
          uc.zero_pad_identity = true;
        } else {
          uc.shortcut = Projection{};
        }
      } else {
        uc.shortcut = cfg.shortcut;
        uc.branch_scale = cfg.branch_scale;
      }
      net.units_.push_back(ResidualUnit<T>::build(uc, rng));
      net.stage_index_.push_back(s);
      net.index_in_stage_.push_back(u);
      in_c = uc.out_channels;
    }
  }

  if (preact) {
    net.head_act_ = {BatchNormLayer<T>{"bn", BatchNormParams<T>::make(in_c, cfg.bn_momentum,
                                                                      cfg.bn_epsilon)},
                     ReluLayer{}};
  }
  std::normal_distribution<double> fc_dist(0.0, std::sqrt(1.0 / static_cast<double>(in_c)));
  std::vector<T> w(cfg.num_classes * in_c);
  for (auto& v : w) v = static_cast<T>(fc_dist(rng));
  net.fc_weight_ = Tensor<T>({cfg.num_classes, in_c}, std::move(w), true);
  net.fc_bias_ = Tensor<T>::zeros({cfg.num_classes}, true);
  return net;
}

template <typename T>
typename Network<T>::Output Network<T>::forward(Graph<T>& g, const Tensor<T>& x, Mode mode,
                                                Rng& rng) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.input_channels) {
    throw ShapeError("network expects [N," + std::to_string(cfg_.input_channels) +
                     ",H,W] input, got " + to_string(x.shape()));
  }
  Output out;
  auto h = apply_layers(g, stem_act_, nn::conv2d(g, x, stem_), mode);
  out.traces.reserve(units_.size());
  for (std::size_t i = 0; i < units_.size(); ++i) {
    auto r = units_[i].forward(g, h, mode, rng);
    h = r.out;
    out.traces.push_back(std::move(r.trace));
    if (i + 1 == units_.size() || stage_index_[i + 1] != stage_index_[i]) {
      out.stage_outputs[stage_index_[i]] = h;
    }
  }
  h = apply_layers(g, head_act_, h, mode);
  out.logits = nn::fully_connected(g, nn::global_avg_pool(g, h), fc_weight_, fc_bias_);
  return out;
}

template <typename T>
std::string Network<T>::unit_name(std::size_t unit) const {
  return "stage" + std::to_string(stage_index_.at(unit) + 1) + ".unit" +
         std::to_string(index_in_stage_.at(unit) + 1);
}

template <typename T>
std::vector<NamedTensor<T>> Network<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  out.push_back({"stem.conv.weight", stem_.weight, true});
  collect_layer_params(stem_act_, "stem.", out);
  for (std::size_t i = 0; i < units_.size(); ++i) {
    auto p = units_[i].parameters(unit_name(i) + ".");
    out.insert(out.end(), p.begin(), p.end());
  }
  collect_layer_params(head_act_, "head.", out);
  out.push_back({"head.fc.weight", fc_weight_, true});
  out.push_back({"head.fc.bias", fc_bias_, false});
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Network<T>::buffers() const {
  std::vector<NamedTensor<T>> out;
  collect_layer_buffers(stem_act_, "stem.", out);
  for (std::size_t i = 0; i < units_.size(); ++i) {
    auto b = units_[i].buffers(unit_name(i) + ".");
    out.insert(out.end(), b.begin(), b.end());
  }
  collect_layer_buffers(head_act_, "head.", out);
  return out;
}

template <typename T>
std::size_t Network<T>::count_params() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.numel();
  return total;
}

template <typename T>
std::vector<LayerSummary> Network<T>::param_summary() const {
  std::vector<LayerSummary> rows;
  for (const auto& p : parameters()) rows.push_back({p.name, p.tensor.shape(), p.tensor.numel()});
  return rows;
}

template <typename T>
std::uint64_t Network<T>::forward_macs() const {
  std::size_t hw = cfg_.input_size;
  std::uint64_t macs = conv_macs(cfg_.widths[0], cfg_.input_channels, 3, hw * hw);
  for (const auto& u : units_) {
    const auto& uc = u.config();
    const std::size_t in_hw = hw;
    for (const auto& layer : u.branch()) {
      if (const auto* c = std::get_if<ConvLayer<T>>(&layer)) {
        hw = conv_out_size(hw, c->params.kernel(), c->params.stride, c->params.padding);
        macs += conv_macs(c->params.out_channels(), c->params.in_channels(), c->params.kernel(), hw * hw);
      }
    }
    if (u.shortcut_params().conv) {
      macs += conv_macs(uc.out_channels, uc.in_channels, 1, hw * hw);
    }
    if (u.shortcut_params().gate) {
      macs += conv_macs(uc.in_channels, uc.in_channels, 1, in_hw * in_hw);
    }
  }
  macs += static_cast<std::uint64_t>(fc_weight_.numel());
  return macs;
}

template <typename T>
void Network<T>::load_state(const CheckpointState& state) {
  auto all = parameters();
  auto buf = buffers();
  all.insert(all.end(), buf.begin(), buf.end());
  for (auto& p : all) {
    auto it = state.find(p.name);
    if (it == state.end()) throw CheckpointError("checkpoint lacks tensor '" + p.name + "'");
    if (it->second.first != p.tensor.shape()) {
      throw CheckpointError("checkpoint tensor '" + p.name + "' has shape " +
                            to_string(it->second.first) + ", network expects " +
                            to_string(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    const auto& src = it->second.second;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
}

namespace {

template <typename U>
void write_le(std::ostream& os, U v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_le(std::istream& is, const std::filesystem::path& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) {
    throw CheckpointError("truncated checkpoint " + path.string());
  }
  return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Network<T>& net) {
  auto records = net.parameters();
  auto buf = net.buffers();
  records.insert(records.end(), buf.begin(), buf.end());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  write_le<std::uint8_t>(os, kCheckpointVersion);
  write_le<std::uint64_t>(os, records.size());
  for (const auto& r : records) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.tensor.rank()));
    for (auto d : r.tensor.shape()) write_le<std::uint64_t>(os, d);
    for (auto v : r.tensor.data()) write_le<double>(os, static_cast<double>(v));
  }
  if (!os) throw CheckpointError("write failed for " + path.string());
}

CheckpointState read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw CheckpointError(path.string() + " is not a reslab checkpoint");
  }
  const auto version = read_le<std::uint8_t>(is, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = read_le<std::uint64_t>(is, path);
  CheckpointState state;
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto len = read_le<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CheckpointError("truncated checkpoint " + path.string());
    const auto rank = read_le<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_le<std::uint64_t>(is, path));
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = read_le<double>(is, path);
    state[name] = {std::move(shape), std::move(values)};
  }
  return state;
}

template class Network<float>;
template class Network<double>;
template void save_checkpoint(const std::filesystem::path&, const Network<float>&);
template void save_checkpoint(const std::filesystem::path&, const Network<double>&);

}  // namespace reslab
