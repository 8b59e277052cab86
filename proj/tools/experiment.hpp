#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "reslab/network.hpp"
#include "reslab/trainer.hpp"

namespace reslab::cli {

/// Bad config text or values. Carries the 1-based line when known.
class ConfigFileError : public std::invalid_argument {
 public:
  ConfigFileError(const std::string& source, std::size_t line, const std::string& msg);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class DatasetKind { Cifar10, Cifar100, Synthetic };

struct DataConfig {
  DatasetKind dataset = DatasetKind::Cifar10;
  std::string dir = "data/cifar-10-batches-bin";
  /// Stratified training subset; 0 keeps the full split.
  std::size_t subset = 0;
  std::uint64_t subset_seed = 7;
  std::size_t synthetic_train = 2000;
  std::size_t synthetic_test = 1000;
  std::size_t synthetic_classes = 10;
  double synthetic_noise = 0.5;
  std::uint64_t synthetic_seed = 1;

  bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "runs";
  bool deterministic = false;
  /// Checkpoint every this many iterations (a multiple of train.log_every); 0 saves only the final net.
  std::size_t checkpoint_every = 0;

  bool operator==(const RunConfig&) const = default;
};

struct AnalysisConfig {
  bool telescope = true;
  bool decompose = true;
  bool lambda = true;
  bool profile = true;
  /// Zero the last conv of every branch before analysing.
  bool zero_branches = false;
  /// Unit slice [begin, end); end 0 picks the longest slice of stage 1.
  std::size_t slice_begin = 0;
  std::size_t slice_end = 0;
  std::size_t batch = 8;

  bool operator==(const AnalysisConfig&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  NetworkConfig network;
  TrainConfig train;
  DataConfig data;
  RunConfig run;
  AnalysisConfig analysis;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Every accepted key, in canonical order.
const std::vector<std::string>& config_keys();

/// The key with the smallest edit distance to `key`.
std::string nearest_key(const std::string& key);

/// Parses `key = value` lines over the defaults. `#` starts a comment.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::string& path);

/// Canonical text listing every key; parse_config(to_text(c)) == c.
std::string to_text(const ExperimentConfig& cfg);

/// Throws ConfigFileError (line 0) for values no component accepts.
void validate(const ExperimentConfig& cfg);

struct Preset {
  std::string name;
  std::string description;
  ExperimentConfig config;
};

const std::vector<Preset>& presets();
const Preset* find_preset(const std::string& name);
/// Name of the preset whose config equals `cfg`, if any.
std::optional<std::string> match_preset(const ExperimentConfig& cfg);

std::size_t edit_distance(const std::string& a, const std::string& b);

}  // namespace reslab::cli
