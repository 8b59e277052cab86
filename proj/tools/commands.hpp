#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "experiment.hpp"

namespace reslab::cli {

struct SeedOutcome {
  std::uint64_t seed = 0;
  double final_test_err_pct = 0;  // NaN when the run diverged
  double final_train_loss = 0;
  bool fail = false;
  /// Iteration at which the loss went non-finite, if it did.
  std::optional<std::size_t> diverged_at;
};

struct RunSummary {
  std::string name;
  std::vector<SeedOutcome> seeds;
  SeedSummary test_err;  // over the seeds that finished
  bool fail = false;     // median run above the fail threshold, or every seed diverged
};

std::pair<Dataset, Dataset> load_data(const ExperimentConfig& cfg);

/// Trains every seed, writing <out>/<name>/seed-<s>/{metrics.csv,model.ckpt}
/// and <out>/<name>/summary.json. Progress lines go to `log`.
RunSummary run_experiment(const ExperimentConfig& cfg, std::ostream& log);

std::string summary_json(const RunSummary& s);

/// Writes telescope.csv, decompose.csv, lambda.csv, profile.csv and
/// report.txt into `out_dir`; the report is also printed to `log`.
void analyze(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
             const std::filesystem::path& out_dir, std::uint64_t seed, std::ostream& log);

/// Dual-axis SVG: training loss (dashed, left axis) and test error (solid,
/// right axis) against iteration, one colour per file.
std::string plot_svg(const std::vector<std::filesystem::path>& csvs);

void print_fetch_instructions(std::ostream& os);

/// Entry point of the reslab-cli executable. Returns the process exit code.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace reslab::cli
