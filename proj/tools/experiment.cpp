#include "experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace reslab::cli {

ConfigFileError::ConfigFileError(const std::string& source, std::size_t line,
                                 const std::string& msg)
    : std::invalid_argument(line ? source + ":" + std::to_string(line) + ": " + msg
                                 : source + ": " + msg),
      line_(line) {}

namespace {

struct BadValue : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string trim(std::string_view s) {
  const auto ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& v) {
  double out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw BadValue("expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw BadValue("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t to_size(const std::string& v) { return static_cast<std::size_t>(to_u64(v)); }

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw BadValue("expected true or false, got '" + v + "'");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += f(xs[i]);
  }
  return out;
}

template <typename E>
E pick(const std::string& v, const std::vector<std::pair<std::string, E>>& options) {
  for (const auto& [name, e] : options) {
    if (name == v) return e;
  }
  throw BadValue("'" + v + "' is not one of " +
                 join(options, [](const auto& p) { return p.first; }));
}

template <typename E>
std::string name_of(E e, const std::vector<std::pair<std::string, E>>& options) {
  for (const auto& [name, x] : options) {
    if (x == e) return name;
  }
  return "?";
}

const std::vector<std::pair<std::string, ActivationOrder>> kOrders{
    {"original", ActivationOrder::Original},
    {"bn_after_add", ActivationOrder::BnAfterAdd},
    {"relu_before_add", ActivationOrder::ReluBeforeAdd},
    {"relu_only_preact", ActivationOrder::ReluOnlyPreAct},
    {"full_preact", ActivationOrder::FullPreAct}};

const std::vector<std::pair<std::string, BranchShape>> kBranches{
    {"basic", BranchShape::Basic},
    {"bottleneck", BranchShape::Bottleneck},
    {"single", BranchShape::SingleLayer}};

const std::vector<std::pair<std::string, DatasetKind>> kDatasets{
    {"cifar10", DatasetKind::Cifar10},
    {"cifar100", DatasetKind::Cifar100},
    {"synthetic", DatasetKind::Synthetic}};

std::string shortcut_name(const ShortcutKind& k) {
  static const char* names[] = {"identity", "scale",   "exclusive_gate", "shortcut_gate",
                                "conv1x1",  "dropout", "projection"};
  return names[k.index()];
}

ShortcutKind shortcut_from(const std::string& v) {
  if (v == "identity") return Identity{};
  if (v == "scale") return ConstantScale{};
  if (v == "exclusive_gate") return ExclusiveGate{};
  if (v == "shortcut_gate") return ShortcutOnlyGate{};
  if (v == "conv1x1") return Conv1x1{};
  if (v == "dropout") return DropoutShortcut{};
  if (v == "projection") return Projection{};
  throw BadValue("'" + v +
                 "' is not one of identity,scale,exclusive_gate,shortcut_gate,conv1x1,dropout,"
                 "projection");
}

using Getter = std::function<std::optional<std::string>(const ExperimentConfig&)>;
using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

struct Key {
  std::string name;
  Getter get;
  Setter set;
};

template <typename F>
Key always(std::string name, F get, Setter set) {
  return {std::move(name),
          [get](const ExperimentConfig& c) -> std::optional<std::string> { return get(c); },
          std::move(set)};
}

template <typename S>
S& shortcut_as(ExperimentConfig& c, const char* key, const char* kind) {
  if (auto* s = std::get_if<S>(&c.network.shortcut)) return *s;
  throw BadValue(std::string(key) + " applies only to network.shortcut = " + kind);
}

std::vector<Key> build_keys() {
  std::vector<Key> k;
  k.push_back(always("name", [](auto& c) { return c.name; },
                     [](auto& c, auto& v) {
                       if (v.empty()) throw BadValue("name must not be empty");
                       c.name = v;
                     }));

  // network
  k.push_back(always("network.depth", [](auto& c) { return std::to_string(c.network.depth); },
                     [](auto& c, auto& v) { c.network.depth = static_cast<int>(to_u64(v)); }));
  k.push_back(always("network.branch",
                     [](auto& c) { return name_of(c.network.branch, kBranches); },
                     [](auto& c, auto& v) { c.network.branch = pick(v, kBranches); }));
  k.push_back(always("network.shortcut", [](auto& c) { return shortcut_name(c.network.shortcut); },
                     [](auto& c, auto& v) { c.network.shortcut = shortcut_from(v); }));
  k.push_back({"network.shortcut_scale",
               [](auto& c) -> std::optional<std::string> {
                 if (auto* s = std::get_if<ConstantScale>(&c.network.shortcut)) return fmt(s->lambda);
                 return std::nullopt;
               },
               [](auto& c, auto& v) {
                 shortcut_as<ConstantScale>(c, "network.shortcut_scale", "scale").lambda = to_double(v);
               }});
  k.push_back({"network.gate_bias",
               [](auto& c) -> std::optional<std::string> {
                 if (auto* s = std::get_if<ExclusiveGate>(&c.network.shortcut)) return fmt(s->init_bias);
                 if (auto* s = std::get_if<ShortcutOnlyGate>(&c.network.shortcut)) {
                   return fmt(s->init_bias);
                 }
                 return std::nullopt;
               },
               [](auto& c, auto& v) {
                 if (auto* s = std::get_if<ExclusiveGate>(&c.network.shortcut)) {
                   s->init_bias = to_double(v);
                 } else {
                   shortcut_as<ShortcutOnlyGate>(c, "network.gate_bias",
                                                 "exclusive_gate or shortcut_gate")
                       .init_bias = to_double(v);
                 }
               }});
  k.push_back({"network.dropout_rate",
               [](auto& c) -> std::optional<std::string> {
                 if (auto* s = std::get_if<DropoutShortcut>(&c.network.shortcut)) return fmt(s->rate);
                 return std::nullopt;
               },
               [](auto& c, auto& v) {
                 shortcut_as<DropoutShortcut>(c, "network.dropout_rate", "dropout").rate = to_double(v);
               }});
  k.push_back(always("network.order", [](auto& c) { return name_of(c.network.order, kOrders); },
                     [](auto& c, auto& v) { c.network.order = pick(v, kOrders); }));
  k.push_back(always("network.branch_scale",
                     [](auto& c) {
                       return c.network.branch_scale ? fmt(*c.network.branch_scale)
                                                     : std::string("none");
                     },
                     [](auto& c, auto& v) {
                       if (v == "none") {
                         c.network.branch_scale.reset();
                       } else {
                         c.network.branch_scale = to_double(v);
                       }
                     }));
  k.push_back(always("network.widths",
                     [](auto& c) {
                       auto& w = c.network.widths;
                       return std::to_string(w[0]) + "," + std::to_string(w[1]) + "," +
                              std::to_string(w[2]);
                     },
                     [](auto& c, auto& v) {
                       auto parts = split_list(v);
                       if (parts.size() != 3) throw BadValue("expected three widths, got '" + v + "'");
                       for (std::size_t i = 0; i < 3; ++i) c.network.widths[i] = to_size(parts[i]);
                     }));
  k.push_back(always("network.classes",
                     [](auto& c) { return std::to_string(c.network.num_classes); },
                     [](auto& c, auto& v) { c.network.num_classes = to_size(v); }));
  k.push_back(always("network.input_channels",
                     [](auto& c) { return std::to_string(c.network.input_channels); },
                     [](auto& c, auto& v) { c.network.input_channels = to_size(v); }));
  k.push_back(always("network.input_size",
                     [](auto& c) { return std::to_string(c.network.input_size); },
                     [](auto& c, auto& v) { c.network.input_size = to_size(v); }));
  k.push_back(always("network.zero_pad_shortcuts",
                     [](auto& c) { return bool_text(c.network.zero_pad_shortcuts); },
                     [](auto& c, auto& v) { c.network.zero_pad_shortcuts = to_bool(v); }));
  k.push_back(always("network.bn_momentum", [](auto& c) { return fmt(c.network.bn_momentum); },
                     [](auto& c, auto& v) { c.network.bn_momentum = to_double(v); }));
  k.push_back(always("network.bn_epsilon", [](auto& c) { return fmt(c.network.bn_epsilon); },
                     [](auto& c, auto& v) { c.network.bn_epsilon = to_double(v); }));

  // train
  k.push_back(always("train.lr", [](auto& c) { return fmt(c.train.lr_initial); },
                     [](auto& c, auto& v) { c.train.lr_initial = to_double(v); }));
  k.push_back(always("train.warmup", [](auto& c) { return bool_text(c.train.warmup); },
                     [](auto& c, auto& v) { c.train.warmup = to_bool(v); }));
  k.push_back(always("train.warmup_lr", [](auto& c) { return fmt(c.train.warmup_lr); },
                     [](auto& c, auto& v) { c.train.warmup_lr = to_double(v); }));
  k.push_back(always("train.warmup_iters",
                     [](auto& c) { return std::to_string(c.train.warmup_iters); },
                     [](auto& c, auto& v) { c.train.warmup_iters = to_size(v); }));
  k.push_back(always("train.decay_points",
                     [](auto& c) {
                       return join(c.train.decay_points,
                                   [](std::size_t p) { return std::to_string(p); });
                     },
                     [](auto& c, auto& v) {
                       c.train.decay_points.clear();
                       for (auto& p : split_list(v)) c.train.decay_points.push_back(to_size(p));
                     }));
  k.push_back(always("train.decay_factor", [](auto& c) { return fmt(c.train.decay_factor); },
                     [](auto& c, auto& v) { c.train.decay_factor = to_double(v); }));
  k.push_back(always("train.total_iters",
                     [](auto& c) { return std::to_string(c.train.total_iters); },
                     [](auto& c, auto& v) { c.train.total_iters = to_size(v); }));
  k.push_back(always("train.weight_decay", [](auto& c) { return fmt(c.train.weight_decay); },
                     [](auto& c, auto& v) { c.train.weight_decay = to_double(v); }));
  k.push_back(always("train.momentum", [](auto& c) { return fmt(c.train.momentum); },
                     [](auto& c, auto& v) { c.train.momentum = to_double(v); }));
  k.push_back(always("train.batch_size",
                     [](auto& c) { return std::to_string(c.train.batch_size); },
                     [](auto& c, auto& v) { c.train.batch_size = to_size(v); }));
  k.push_back(always("train.decay_norm_params",
                     [](auto& c) { return bool_text(c.train.decay_norm_params); },
                     [](auto& c, auto& v) { c.train.decay_norm_params = to_bool(v); }));
  k.push_back(always("train.augment", [](auto& c) { return bool_text(c.train.augment); },
                     [](auto& c, auto& v) { c.train.augment = to_bool(v); }));
  k.push_back(always("train.pad", [](auto& c) { return std::to_string(c.train.pad); },
                     [](auto& c, auto& v) { c.train.pad = to_size(v); }));
  k.push_back(always("train.log_every", [](auto& c) { return std::to_string(c.train.log_every); },
                     [](auto& c, auto& v) { c.train.log_every = to_size(v); }));
  k.push_back(always("train.eval_every",
                     [](auto& c) { return std::to_string(c.train.eval_every); },
                     [](auto& c, auto& v) { c.train.eval_every = to_size(v); }));
  k.push_back(always("train.eval_batch",
                     [](auto& c) { return std::to_string(c.train.eval_batch); },
                     [](auto& c, auto& v) { c.train.eval_batch = to_size(v); }));

  // data
  k.push_back(always("data.dataset", [](auto& c) { return name_of(c.data.dataset, kDatasets); },
                     [](auto& c, auto& v) { c.data.dataset = pick(v, kDatasets); }));
  k.push_back(always("data.dir", [](auto& c) { return c.data.dir; },
                     [](auto& c, auto& v) { c.data.dir = v; }));
  k.push_back(always("data.subset", [](auto& c) { return std::to_string(c.data.subset); },
                     [](auto& c, auto& v) { c.data.subset = to_size(v); }));
  k.push_back(always("data.subset_seed", [](auto& c) { return std::to_string(c.data.subset_seed); },
                     [](auto& c, auto& v) { c.data.subset_seed = to_u64(v); }));
  k.push_back(always("data.synthetic_train",
                     [](auto& c) { return std::to_string(c.data.synthetic_train); },
                     [](auto& c, auto& v) { c.data.synthetic_train = to_size(v); }));
  k.push_back(always("data.synthetic_test",
                     [](auto& c) { return std::to_string(c.data.synthetic_test); },
                     [](auto& c, auto& v) { c.data.synthetic_test = to_size(v); }));
  k.push_back(always("data.synthetic_classes",
                     [](auto& c) { return std::to_string(c.data.synthetic_classes); },
                     [](auto& c, auto& v) { c.data.synthetic_classes = to_size(v); }));
  k.push_back(always("data.synthetic_noise", [](auto& c) { return fmt(c.data.synthetic_noise); },
                     [](auto& c, auto& v) { c.data.synthetic_noise = to_double(v); }));
  k.push_back(always("data.synthetic_seed",
                     [](auto& c) { return std::to_string(c.data.synthetic_seed); },
                     [](auto& c, auto& v) { c.data.synthetic_seed = to_u64(v); }));

  // run
  k.push_back(always("run.seeds",
                     [](auto& c) {
                       return join(c.run.seeds, [](std::uint64_t s) { return std::to_string(s); });
                     },
                     [](auto& c, auto& v) {
                       c.run.seeds.clear();
                       for (auto& s : split_list(v)) c.run.seeds.push_back(to_u64(s));
                     }));
  k.push_back(always("run.out_dir", [](auto& c) { return c.run.out_dir; },
                     [](auto& c, auto& v) { c.run.out_dir = v; }));
  k.push_back(always("run.deterministic", [](auto& c) { return bool_text(c.run.deterministic); },
                     [](auto& c, auto& v) { c.run.deterministic = to_bool(v); }));
  k.push_back(always("run.checkpoint_every",
                     [](auto& c) { return std::to_string(c.run.checkpoint_every); },
                     [](auto& c, auto& v) { c.run.checkpoint_every = to_size(v); }));

  // analysis
  k.push_back(always("analysis.telescope", [](auto& c) { return bool_text(c.analysis.telescope); },
                     [](auto& c, auto& v) { c.analysis.telescope = to_bool(v); }));
  k.push_back(always("analysis.decompose", [](auto& c) { return bool_text(c.analysis.decompose); },
                     [](auto& c, auto& v) { c.analysis.decompose = to_bool(v); }));
  k.push_back(always("analysis.lambda", [](auto& c) { return bool_text(c.analysis.lambda); },
                     [](auto& c, auto& v) { c.analysis.lambda = to_bool(v); }));
  k.push_back(always("analysis.profile", [](auto& c) { return bool_text(c.analysis.profile); },
                     [](auto& c, auto& v) { c.analysis.profile = to_bool(v); }));
  k.push_back(always("analysis.zero_branches",
                     [](auto& c) { return bool_text(c.analysis.zero_branches); },
                     [](auto& c, auto& v) { c.analysis.zero_branches = to_bool(v); }));
  k.push_back(always("analysis.slice_begin",
                     [](auto& c) { return std::to_string(c.analysis.slice_begin); },
                     [](auto& c, auto& v) { c.analysis.slice_begin = to_size(v); }));
  k.push_back(always("analysis.slice_end",
                     [](auto& c) { return std::to_string(c.analysis.slice_end); },
                     [](auto& c, auto& v) { c.analysis.slice_end = to_size(v); }));
  k.push_back(always("analysis.batch", [](auto& c) { return std::to_string(c.analysis.batch); },
                     [](auto& c, auto& v) { c.analysis.batch = to_size(v); }));
  return k;
}

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = build_keys();
  return keys;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& k : key_table()) out.push_back(k.name);
    return out;
  }();
  return names;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string nearest_key(const std::string& key) {
  const auto& keys = config_keys();
  return *std::min_element(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
    return edit_distance(key, a) < edit_distance(key, b);
  });
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  struct Entry {
    std::string value;
    std::size_t line;
  };
  std::map<std::string, Entry> entries;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  const auto& keys = config_keys();
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigFileError(source, lineno, "expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigFileError(source, lineno,
                            "unknown key '" + key + "' (did you mean '" + nearest_key(key) + "'?)");
    }
    if (auto it = entries.find(key); it != entries.end()) {
      throw ConfigFileError(source, lineno,
                            "duplicate key '" + key + "' (first set on line " +
                                std::to_string(it->second.line) + ")");
    }
    entries.emplace(key, Entry{value, lineno});
  }

  // Canonical order sets network.shortcut before its parameters.
  ExperimentConfig cfg;
  for (const auto& k : key_table()) {
    auto it = entries.find(k.name);
    if (it == entries.end()) continue;
    try {
      k.set(cfg, it->second.value);
    } catch (const BadValue& e) {
      throw ConfigFileError(source, it->second.line, k.name + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigFileError(path, 0, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_config(ss.str(), path);
  validate(cfg);
  return cfg;
}

std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : key_table()) {
    if (auto v = k.get(cfg)) out += k.name + " = " + *v + "\n";
  }
  return out;
}

void validate(const ExperimentConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigFileError("config", 0, msg); };
  try {
    units_per_stage(cfg.network);
    ResidualUnitConfig unit;
    unit.shortcut = cfg.network.shortcut;
    unit.order = cfg.network.order;
    unit.branch = cfg.network.branch;
    unit.in_channels = unit.out_channels =
        cfg.network.widths[0] * (cfg.network.branch == BranchShape::Bottleneck ? 4 : 1);
    unit.branch_scale = cfg.network.branch_scale;
    unit.bn_momentum = cfg.network.bn_momentum;
    unit.bn_epsilon = cfg.network.bn_epsilon;
    reslab::validate(unit);
    reslab::validate(cfg.train);
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  const auto& n = cfg.network;
  for (auto w : n.widths) {
    if (w == 0) fail("network.widths must be positive");
  }
  if (n.num_classes < 2) fail("network.classes must be at least 2");
  if (n.input_size < 4) fail("network.input_size must be at least 4");
  if (!(n.bn_momentum >= 0 && n.bn_momentum < 1)) fail("network.bn_momentum must lie in [0, 1)");
  if (!(n.bn_epsilon > 0)) fail("network.bn_epsilon must be positive");
  if (cfg.data.dataset != DatasetKind::Synthetic) {
    const std::size_t classes = cfg.data.dataset == DatasetKind::Cifar10 ? 10 : 100;
    if (n.num_classes != classes) {
      fail("network.classes is " + std::to_string(n.num_classes) + " but the dataset has " +
           std::to_string(classes) + " classes");
    }
    if (n.input_channels != 3 || n.input_size != 32) {
      fail("CIFAR images are 3x32x32; set network.input_channels = 3 and network.input_size = 32");
    }
  } else {
    if (cfg.data.synthetic_classes < 2 || cfg.data.synthetic_classes > n.num_classes) {
      fail("data.synthetic_classes must lie in [2, network.classes]");
    }
    if (cfg.data.synthetic_train == 0 || cfg.data.synthetic_test == 0) {
      fail("synthetic split sizes must be positive");
    }
    if (!(cfg.data.synthetic_noise >= 0)) fail("data.synthetic_noise must be non-negative");
  }
  if (cfg.run.seeds.empty()) fail("run.seeds must list at least one seed");
  if (cfg.run.out_dir.empty()) fail("run.out_dir must not be empty");
  if (cfg.run.checkpoint_every % cfg.train.log_every != 0) {
    fail("run.checkpoint_every must be a multiple of train.log_every");
  }
  if (cfg.analysis.batch == 0) fail("analysis.batch must be positive");
  if (cfg.analysis.slice_end != 0 && cfg.analysis.slice_end < cfg.analysis.slice_begin) {
    fail("analysis.slice_end precedes analysis.slice_begin");
  }
}

namespace {

ExperimentConfig cifar_table_base(int depth, BranchShape branch) {
  ExperimentConfig c;
  c.network.depth = depth;
  c.network.branch = branch;
  c.train.warmup = true;
  c.train.eval_every = 2000;
  c.run.seeds = {0, 1, 2, 3, 4};
  return c;
}

ExperimentConfig table1(const std::string& name, ShortcutKind sc,
                        std::optional<double> branch_scale = std::nullopt) {
  auto c = cifar_table_base(110, BranchShape::Basic);
  c.name = name;
  c.network.order = ActivationOrder::Original;
  c.network.shortcut = sc;
  c.network.branch_scale = branch_scale;
  return c;
}

ExperimentConfig table2(const std::string& name, ActivationOrder order) {
  auto c = cifar_table_base(164, BranchShape::Bottleneck);
  c.name = name;
  c.network.order = order;
  return c;
}

// ResNet-20 at widths 8/16/32 on 16x16 synthetic images, 2000 iterations.
ExperimentConfig desk(const std::string& name, ActivationOrder order, ShortcutKind sc,
                      std::optional<double> branch_scale = std::nullopt) {
  ExperimentConfig c;
  c.name = name;
  c.network.depth = 20;
  c.network.order = order;
  c.network.shortcut = sc;
  c.network.branch_scale = branch_scale;
  c.network.widths = {8, 16, 32};
  c.network.input_size = 16;
  c.train.total_iters = 2000;
  c.train.decay_points = {1000, 1500};
  c.train.batch_size = 32;
  c.train.pad = 2;
  c.train.log_every = 100;
  c.data.dataset = DatasetKind::Synthetic;
  c.data.synthetic_train = 2000;
  c.data.synthetic_test = 1000;
  c.data.synthetic_noise = 3.0;
  c.data.synthetic_seed = 7;
  c.run.seeds = {1, 2, 3};
  c.run.deterministic = true;
  return c;
}

std::vector<Preset> build_presets() {
  std::vector<Preset> p;
  p.push_back({"table1-original", "ResNet-110, identity shortcut, original unit",
               table1("table1-original", Identity{})});
  p.push_back({"table1-scale0", "ResNet-110, shortcut scaled by 0 (a plain net)",
               table1("table1-scale0", ConstantScale{0.0})});
  p.push_back({"table1-scale05", "ResNet-110, shortcut scaled by 0.5, F unscaled",
               table1("table1-scale05", ConstantScale{0.5})});
  p.push_back({"table1-scale05-f05", "ResNet-110, shortcut and F both scaled by 0.5",
               table1("table1-scale05-f05", ConstantScale{0.5}, 0.5)});
  p.push_back({"table1-exclusive-gate-b0", "ResNet-110, exclusive gating, b_g initialised to 0",
               table1("table1-exclusive-gate-b0", ExclusiveGate{0.0})});
  p.push_back({"table1-exclusive-gate-b6", "ResNet-110, exclusive gating, b_g initialised to -6",
               table1("table1-exclusive-gate-b6", ExclusiveGate{-6.0})});
  p.push_back({"table1-exclusive-gate-b7", "ResNet-110, exclusive gating, b_g initialised to -7",
               table1("table1-exclusive-gate-b7", ExclusiveGate{-7.0})});
  p.push_back({"table1-shortcut-gate-b0", "ResNet-110, shortcut-only gating, b_g initialised to 0",
               table1("table1-shortcut-gate-b0", ShortcutOnlyGate{0.0})});
  p.push_back({"table1-shortcut-gate-b6", "ResNet-110, shortcut-only gating, b_g initialised to -6",
               table1("table1-shortcut-gate-b6", ShortcutOnlyGate{-6.0})});
  p.push_back({"table1-conv1x1", "ResNet-110, 1x1 conv shortcut",
               table1("table1-conv1x1", Conv1x1{})});
  p.push_back({"table1-dropout", "ResNet-110, dropout 0.5 on the shortcut",
               table1("table1-dropout", DropoutShortcut{0.5})});

  p.push_back({"table2-original-164", "ResNet-164 bottleneck, original unit",
               table2("table2-original-164", ActivationOrder::Original)});
  p.push_back({"table2-bn-after-add-164", "ResNet-164 bottleneck, BN after addition",
               table2("table2-bn-after-add-164", ActivationOrder::BnAfterAdd)});
  p.push_back({"table2-relu-before-add-164", "ResNet-164 bottleneck, ReLU before addition",
               table2("table2-relu-before-add-164", ActivationOrder::ReluBeforeAdd)});
  p.push_back({"table2-relu-only-preact-164", "ResNet-164 bottleneck, ReLU-only pre-activation",
               table2("table2-relu-only-preact-164", ActivationOrder::ReluOnlyPreAct)});
  p.push_back({"table2-fullpreact-164", "ResNet-164 bottleneck, full pre-activation",
               table2("table2-fullpreact-164", ActivationOrder::FullPreAct)});

  {
    ExperimentConfig c;
    c.name = "smoke";
    c.network.depth = 8;
    c.network.order = ActivationOrder::FullPreAct;
    c.data.dataset = DatasetKind::Synthetic;
    c.data.synthetic_train = 2000;
    c.data.synthetic_test = 500;
    c.train.total_iters = 500;
    c.train.decay_points = {};
    c.train.batch_size = 32;
    c.train.log_every = 50;
    c.train.eval_every = 250;
    c.run.seeds = {0};
    c.run.out_dir = "runs";
    p.push_back({"smoke", "ResNet-8 on synthetic 32x32 data, 500 iterations", c});
  }

  p.push_back({"desk-identity", "ResNet-20-w8, original unit, identity shortcut",
               desk("desk-identity", ActivationOrder::Original, Identity{})});
  p.push_back({"desk-scale05-f05", "ResNet-20-w8, original unit, shortcut and F scaled by 0.5",
               desk("desk-scale05-f05", ActivationOrder::Original, ConstantScale{0.5}, 0.5)});
  p.push_back({"desk-fullpreact", "ResNet-20-w8, full pre-activation",
               desk("desk-fullpreact", ActivationOrder::FullPreAct, Identity{})});
  p.push_back({"desk-bn-after-add", "ResNet-20-w8, BN after addition",
               desk("desk-bn-after-add", ActivationOrder::BnAfterAdd, Identity{})});
  p.push_back({"desk-shortcut-gate-b6", "ResNet-20-w8, shortcut-only gating, b_g = -6",
               desk("desk-shortcut-gate-b6", ActivationOrder::Original, ShortcutOnlyGate{-6.0})});
  p.push_back({"desk-shortcut-gate-b0", "ResNet-20-w8, shortcut-only gating, b_g = 0",
               desk("desk-shortcut-gate-b0", ActivationOrder::Original, ShortcutOnlyGate{0.0})});
  return p;
}

}  // namespace

const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = build_presets();
  return all;
}

const Preset* find_preset(const std::string& name) {
  for (const auto& p : presets()) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::optional<std::string> match_preset(const ExperimentConfig& cfg) {
  for (const auto& p : presets()) {
    if (p.config == cfg) return p.name;
  }
  return std::nullopt;
}

}  // namespace reslab::cli
