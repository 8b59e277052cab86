#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "reslab/data.hpp"
#include "reslab/network.hpp"

namespace reslab {

struct TrainConfig {
  double lr_initial = 0.1;
  bool warmup = false;
  double warmup_lr = 0.01;
  std::size_t warmup_iters = 400;
  std::vector<std::size_t> decay_points{32000, 48000};
  double decay_factor = 0.1;
  std::size_t total_iters = 64000;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  /// Apply weight decay to BN affine params and gate biases as well.
  bool decay_norm_params = false;
  bool augment = true;
  std::size_t pad = 4;
  /// A metrics row is emitted every `log_every` iterations and after the last.
  std::size_t log_every = 100;
  /// Test error every `eval_every` iterations; 0 evaluates only after the last.
  std::size_t eval_every = 0;
  std::size_t eval_batch = 500;
  /// Metrics carry wall_ms = 0 so repeated runs produce identical files.
  bool deterministic = false;

  bool operator==(const TrainConfig&) const = default;
};

/// Throws std::invalid_argument on non-increasing decay points, zero batch
/// size and similar.
void validate(const TrainConfig& cfg);

double lr_at(std::size_t iter, const TrainConfig& cfg);

struct MetricsRow {
  std::size_t iter = 0;  // index of the last iteration covered by the row
  double epoch = 0;
  double lr = 0;
  double train_loss = 0;  // mean over the iterations since the previous row
  double train_err_pct = 0;
  double test_err_pct = std::numeric_limits<double>::quiet_NaN();  // NaN when not evaluated
  double wall_ms = 0;
};

inline constexpr const char* kMetricsHeader = "iter,epoch,lr,train_loss,train_err,test_err,wall_ms";
void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const MetricsRow& row);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

template <typename T>
struct SgdState {
  std::vector<std::vector<T>> velocity;  // one buffer per parameter, by position
};

/// v <- momentum v + grad + wd param (wd only where `decay` is set),
/// param <- param - lr v. A parameter without a gradient buffer is treated
/// as having zero gradient. Negative or non-finite lr throws.
template <typename T>
void sgd_step(std::span<const NamedTensor<T>> params, SgdState<T>& state, double lr,
              double momentum, double weight_decay, bool decay_all = false);

/// Zero-pads `pad` pixels per side, crops an H x W window whose top-left
/// corner is (oy, ox) in padded coordinates, then optionally mirrors it.
std::vector<float> augment_with(std::span<const float> image, std::size_t channels,
                                std::size_t height, std::size_t width, std::size_t pad,
                                std::size_t oy, std::size_t ox, bool flip);

/// Random crop offset in [0, 2 pad] and a fair-coin horizontal flip.
std::vector<float> augment(std::span<const float> image, std::size_t channels, std::size_t height,
                           std::size_t width, std::size_t pad, Rng& rng);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t iter, double loss);
  std::size_t iter() const { return iter_; }

 private:
  std::size_t iter_;
};

inline constexpr double kFailThresholdPct = 20.0;

struct TrainResult {
  std::vector<MetricsRow> rows;
  double final_test_err_pct = std::numeric_limits<double>::quiet_NaN();
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  bool fail = false;
};

using MetricsSink = std::function<void(const MetricsRow&)>;

/// SGD over `train` for cfg.total_iters iterations. `test` may be null, in
/// which case no test error is reported. Each emitted row is also passed to
/// `sink`. A non-finite loss throws TrainingDiverged.
TrainResult train(Network<float>& net, const Dataset& train, const Dataset* test,
                  const TrainConfig& cfg, const MetricsSink& sink = {});

/// Percent misclassified, BN in eval mode, no augmentation.
template <typename T>
double evaluate(const Network<T>& net, const Dataset& data, std::size_t batch_size = 500);

struct SeedSummary {
  double median = 0;
  double mean = 0;
  double stddev = 0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};

SeedSummary summarize(std::span<const double> values);

}  // namespace reslab
