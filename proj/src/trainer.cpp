#include "reslab/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace reslab {

void validate(const TrainConfig& cfg) {
  auto bad = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (!std::isfinite(cfg.lr_initial) || cfg.lr_initial <= 0) bad("lr_initial must be positive");
  if (cfg.warmup && (!std::isfinite(cfg.warmup_lr) || cfg.warmup_lr <= 0)) {
    bad("warmup_lr must be positive");
  }
  for (std::size_t i = 1; i < cfg.decay_points.size(); ++i) {
    if (cfg.decay_points[i] <= cfg.decay_points[i - 1]) {
      bad("decay points must be strictly increasing");
    }
  }
  if (!(cfg.decay_factor > 0 && cfg.decay_factor <= 1)) bad("decay_factor must be in (0, 1]");
  if (cfg.total_iters == 0) bad("total_iters must be positive");
  if (cfg.batch_size == 0) bad("batch_size must be positive");
  if (cfg.eval_batch == 0) bad("eval_batch must be positive");
  if (cfg.log_every == 0) bad("log_every must be positive");
  if (!(cfg.weight_decay >= 0) || !std::isfinite(cfg.weight_decay)) {
    bad("weight_decay must be non-negative");
  }
  if (!(cfg.momentum >= 0 && cfg.momentum < 1)) bad("momentum must be in [0, 1)");
}

double lr_at(std::size_t iter, const TrainConfig& cfg) {
  if (cfg.warmup && iter < cfg.warmup_iters) return cfg.warmup_lr;
  const auto k = std::count_if(cfg.decay_points.begin(), cfg.decay_points.end(),
                               [&](std::size_t p) { return iter >= p; });
  // Dividing by an integral reciprocal keeps 0.1 -> 0.01 -> 0.001 exact.
  const double inv = 1.0 / cfg.decay_factor;
  const double r = std::round(inv);
  double lr = cfg.lr_initial;
  for (std::ptrdiff_t i = 0; i < k; ++i) {
    if (std::abs(inv - r) < 1e-9) {
      lr /= r;
    } else {
      lr *= cfg.decay_factor;
    }
  }
  return lr;
}

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& where) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::runtime_error(where + ": cannot parse '" + s + "' as a number");
  }
  return v;
}

}  // namespace

void write_metrics_header(std::ostream& os) { os << kMetricsHeader << '\n'; }

void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << r.iter << ',' << fmt_double(r.epoch) << ',' << fmt_double(r.lr) << ','
     << fmt_double(r.train_loss) << ',' << fmt_double(r.train_err_pct) << ','
     << fmt_double(r.test_err_pct) << ',' << fmt_double(r.wall_ms) << '\n';
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty metrics file");
  if (line != kMetricsHeader) {
    throw std::runtime_error(path + ": unexpected header '" + line + "'");
  }
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    const std::string where = path + ":" + std::to_string(lineno);
    if (f.size() != 7) throw std::runtime_error(where + ": expected 7 fields");
    MetricsRow r;
    r.iter = static_cast<std::size_t>(parse_double(f[0], where));
    r.epoch = parse_double(f[1], where);
    r.lr = parse_double(f[2], where);
    r.train_loss = parse_double(f[3], where);
    r.train_err_pct = parse_double(f[4], where);
    r.test_err_pct = parse_double(f[5], where);
    r.wall_ms = parse_double(f[6], where);
    rows.push_back(r);
  }
  if (rows.empty()) throw std::runtime_error(path + ": no metrics rows");
  return rows;
}

template <typename T>
void sgd_step(std::span<const NamedTensor<T>> params, SgdState<T>& state, double lr,
              double momentum, double weight_decay, bool decay_all) {
  if (!std::isfinite(lr) || lr < 0) {
    throw std::invalid_argument("sgd_step: learning rate must be finite and >= 0, got " +
                                std::to_string(lr));
  }
  if (state.velocity.size() != params.size()) {
    state.velocity.resize(params.size());
  }
  const T m = static_cast<T>(momentum);
  const T lr_t = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    auto& v = state.velocity[i];
    Tensor<T> handle = p.tensor;
    auto data = handle.mutable_data();
    if (v.size() != data.size()) v.assign(data.size(), T(0));
    const T wd = (p.weight_decay || decay_all) ? static_cast<T>(weight_decay) : T(0);
    const bool has_grad = p.tensor.has_grad();
    std::span<const T> grad = has_grad ? p.tensor.grad() : std::span<const T>{};
    for (std::size_t j = 0; j < data.size(); ++j) {
      const T gj = has_grad ? grad[j] : T(0);
      v[j] = m * v[j] + gj + wd * data[j];
      data[j] -= lr_t * v[j];
    }
  }
}

std::vector<float> augment_with(std::span<const float> image, std::size_t channels,
                                std::size_t height, std::size_t width, std::size_t pad,
                                std::size_t oy, std::size_t ox, bool flip) {
  if (image.size() != channels * height * width) {
    throw ShapeError("augment: image has " + std::to_string(image.size()) + " values, expected " +
                     std::to_string(channels * height * width));
  }
  if (oy > 2 * pad || ox > 2 * pad) {
    throw std::out_of_range("augment: crop offset beyond the padded image");
  }
  std::vector<float> out(image.size(), 0.0f);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + oy) - static_cast<std::ptrdiff_t>(pad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
      for (std::size_t x = 0; x < width; ++x) {
        const std::ptrdiff_t sx =
            static_cast<std::ptrdiff_t>(x + ox) - static_cast<std::ptrdiff_t>(pad);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width)) continue;
        const std::size_t dx = flip ? width - 1 - x : x;
        out[(c * height + y) * width + dx] = image[(c * height + sy) * width + sx];
      }
    }
  }
  return out;
}

std::vector<float> augment(std::span<const float> image, std::size_t channels, std::size_t height,
                           std::size_t width, std::size_t pad, Rng& rng) {
  std::uniform_int_distribution<std::size_t> off(0, 2 * pad);
  const std::size_t oy = off(rng);
  const std::size_t ox = off(rng);
  const bool flip = std::bernoulli_distribution(0.5)(rng);
  return augment_with(image, channels, height, width, pad, oy, ox, flip);
}

TrainingDiverged::TrainingDiverged(std::size_t iter, double loss)
    : std::runtime_error("training diverged at iteration " + std::to_string(iter) + ": loss is " +
                         std::to_string(loss)),
      iter_(iter) {}

namespace {

template <typename T>
std::size_t count_errors(const Tensor<T>& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto d = logits.data();
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = d.subspan(i * k, k);
    const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
    if (pred != labels[i]) ++wrong;
  }
  return wrong;
}

void check_compatible(const NetworkConfig& nc, const Dataset& ds, const char* what) {
  if (ds.size() == 0) throw std::invalid_argument(std::string(what) + " set is empty");
  if (ds.channels != nc.input_channels || ds.height != nc.input_size ||
      ds.width != nc.input_size) {
    throw std::invalid_argument(std::string(what) + " images are " + std::to_string(ds.channels) +
                                "x" + std::to_string(ds.height) + "x" + std::to_string(ds.width) +
                                ", network expects " + std::to_string(nc.input_channels) + "x" +
                                std::to_string(nc.input_size) + "x" +
                                std::to_string(nc.input_size));
  }
  if (ds.num_classes > nc.num_classes) {
    throw std::invalid_argument(std::string(what) + " set has " +
                                std::to_string(ds.num_classes) + " classes, network outputs " +
                                std::to_string(nc.num_classes));
  }
}

}  // namespace

template <typename T>
double evaluate(const Network<T>& net, const Dataset& data, std::size_t batch_size) {
  check_compatible(net.config(), data, "evaluation");
  Rng unused(0);
  std::size_t wrong = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Graph<T> g;
    g.set_grad_enabled(false);
    Tensor<T> x;
    if constexpr (std::is_same_v<T, float>) {
      x = data.batch(idx);
    } else {
      x = cast<T>(data.batch(idx));
    }
    auto out = net.forward(g, x, Mode::Eval, unused);
    auto labels = data.batch_labels(idx);
    wrong += count_errors(out.logits, labels);
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(data.size());
}

TrainResult train(Network<float>& net, const Dataset& data, const Dataset* test,
                  const TrainConfig& cfg, const MetricsSink& sink) {
  validate(cfg);
  check_compatible(net.config(), data, "training");
  if (test) check_compatible(net.config(), *test, "test");

  std::seed_seq data_seq{cfg.seed, std::uint64_t{1}};
  std::seed_seq noise_seq{cfg.seed, std::uint64_t{2}};
  Rng data_rng(data_seq);
  Rng noise_rng(noise_seq);

  const auto params = net.parameters();
  SgdState<float> state;
  const auto start = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), data_rng);
  std::size_t cursor = 0;

  const std::size_t B = cfg.batch_size;
  const std::size_t m = data.image_numel();
  std::vector<std::size_t> idx(B);
  std::vector<float> pixels(B * m);

  TrainResult result;
  double window_loss = 0;
  std::size_t window_wrong = 0, window_seen = 0, window_iters = 0;

  for (std::size_t it = 0; it < cfg.total_iters; ++it) {
    for (std::size_t b = 0; b < B; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), data_rng);
        cursor = 0;
      }
      idx[b] = order[cursor++];
    }
    for (std::size_t b = 0; b < B; ++b) {
      auto img = data.image(idx[b]);
      if (cfg.augment) {
        auto a = augment(img, data.channels, data.height, data.width, cfg.pad, data_rng);
        std::copy(a.begin(), a.end(), pixels.begin() + b * m);
      } else {
        std::copy(img.begin(), img.end(), pixels.begin() + b * m);
      }
    }
    Tensor<float> x({B, data.channels, data.height, data.width}, pixels);
    auto labels = data.batch_labels(idx);

    Graph<float> g;
    auto out = net.forward(g, x, Mode::Train, noise_rng);
    auto loss = nn::softmax_xent(g, out.logits, labels);
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw TrainingDiverged(it, lv);

    for (const auto& p : params) {
      if (p.tensor.has_grad()) p.tensor.zero_grad();
    }
    g.backward(loss);
    sgd_step<float>(params, state, lr_at(it, cfg), cfg.momentum, cfg.weight_decay,
                    cfg.decay_norm_params);

    window_loss += lv;
    window_wrong += count_errors(out.logits, labels);
    window_seen += B;
    ++window_iters;

    const bool last = it + 1 == cfg.total_iters;
    const bool eval_now = test && (last || (cfg.eval_every && (it + 1) % cfg.eval_every == 0));
    if (last || (it + 1) % cfg.log_every == 0 || eval_now) {
      MetricsRow row;
      row.iter = it;
      row.epoch = static_cast<double>((it + 1) * B) / static_cast<double>(data.size());
      row.lr = lr_at(it, cfg);
      row.train_loss = window_loss / static_cast<double>(window_iters);
      row.train_err_pct = 100.0 * static_cast<double>(window_wrong) /
                          static_cast<double>(window_seen);
      if (eval_now) row.test_err_pct = evaluate<float>(net, *test, cfg.eval_batch);
      if (!cfg.deterministic) {
        row.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
      }
      result.rows.push_back(row);
      if (sink) sink(row);
      window_loss = 0;
      window_wrong = window_seen = window_iters = 0;
    }
  }
  result.final_train_loss = result.rows.back().train_loss;
  if (test) {
    result.final_test_err_pct = result.rows.back().test_err_pct;
    result.fail = result.final_test_err_pct > kFailThresholdPct;
  }
  return result;
}

SeedSummary summarize(std::span<const double> values) {
  SeedSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  if (n > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return s;
}

template void sgd_step(std::span<const NamedTensor<float>>, SgdState<float>&, double, double,
                       double, bool);
template void sgd_step(std::span<const NamedTensor<double>>, SgdState<double>&, double, double,
                       double, bool);
template double evaluate(const Network<float>&, const Dataset&, std::size_t);
template double evaluate(const Network<double>&, const Dataset&, std::size_t);

}  // namespace reslab
