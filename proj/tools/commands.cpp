#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "reslab/propagation.hpp"

namespace reslab::cli {

namespace fs = std::filesystem;

std::pair<Dataset, Dataset> load_data(const ExperimentConfig& cfg) {
  std::pair<Dataset, Dataset> d;
  switch (cfg.data.dataset) {
    case DatasetKind::Cifar10: d = load_cifar10(cfg.data.dir); break;
    case DatasetKind::Cifar100: d = load_cifar100(cfg.data.dir); break;
    case DatasetKind::Synthetic: {
      SyntheticOptions opt;
      opt.channels = cfg.network.input_channels;
      opt.noise = cfg.data.synthetic_noise;
      const auto& s = cfg.data;
      d.first = synthetic(s.synthetic_train, s.synthetic_classes, cfg.network.input_size,
                          s.synthetic_seed, Split::Train, opt);
      d.second = synthetic(s.synthetic_test, s.synthetic_classes, cfg.network.input_size,
                           s.synthetic_seed, Split::Test, opt);
      break;
    }
  }
  if (cfg.data.subset) d.first = subset(d.first, cfg.data.subset, cfg.data.subset_seed);
  return d;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::ordered_json number_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace

std::string summary_json(const RunSummary& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& o : s.seeds) {
    nlohmann::ordered_json r;
    r["seed"] = o.seed;
    r["final_test_err"] = number_or_null(o.final_test_err_pct);
    r["final_train_loss"] = number_or_null(o.final_train_loss);
    r["fail"] = o.fail;
    r["diverged_at"] = o.diverged_at ? nlohmann::ordered_json(*o.diverged_at) : nullptr;
    j["runs"].push_back(r);
  }
  j["test_err"] = {{"median", number_or_null(s.test_err.median)},
                   {"mean", number_or_null(s.test_err.mean)},
                   {"std", number_or_null(s.test_err.stddev)},
                   {"count", s.test_err.count}};
  j["fail_threshold"] = kFailThresholdPct;
  j["fail"] = s.fail;
  return j.dump(2) + "\n";
}

RunSummary run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  validate(cfg);
  auto [train_set, test_set] = load_data(cfg);
  const fs::path root = fs::path(cfg.run.out_dir) / cfg.name;
  fs::create_directories(root);
  {
    std::ofstream(root / "config.txt") << to_text(cfg);
  }

  RunSummary summary;
  summary.name = cfg.name;
  std::vector<double> finished;
  for (auto seed : cfg.run.seeds) {
    const fs::path dir = root / ("seed-" + std::to_string(seed));
    fs::create_directories(dir);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.deterministic = cfg.run.deterministic;

    Rng rng(seed);
    auto net = Network<float>::build(cfg.network, rng);
    std::ofstream csv(dir / "metrics.csv");
    write_metrics_header(csv);
    log << cfg.name << " seed " << seed << ": " << net.count_params() << " parameters, "
        << tc.total_iters << " iterations\n";

    SeedOutcome o;
    o.seed = seed;
    auto sink = [&](const MetricsRow& row) {
      write_metrics_row(csv, row);
      csv.flush();
      const std::size_t done = row.iter + 1;
      if (cfg.run.checkpoint_every && done % cfg.run.checkpoint_every == 0 &&
          done != tc.total_iters) {
        save_checkpoint(dir / ("model-" + std::to_string(done) + ".ckpt"), net);
      }
    };
    try {
      auto r = train(net, train_set, &test_set, tc, sink);
      save_checkpoint(dir / "model.ckpt", net);
      o.final_test_err_pct = r.final_test_err_pct;
      o.final_train_loss = r.final_train_loss;
      o.fail = r.fail;
      finished.push_back(o.final_test_err_pct);
      log << cfg.name << " seed " << seed << ": test error " << o.final_test_err_pct
          << "%, train loss " << o.final_train_loss << (o.fail ? " [fail]" : "") << "\n";
    } catch (const TrainingDiverged& e) {
      o.final_test_err_pct = kNaN;
      o.final_train_loss = kNaN;
      o.fail = true;
      o.diverged_at = e.iter();
      log << cfg.name << " seed " << seed << ": " << e.what() << " [fail]\n";
    }
    summary.seeds.push_back(o);
  }

  summary.test_err = summarize(finished);
  if (finished.empty()) {
    summary.test_err.median = summary.test_err.mean = summary.test_err.stddev = kNaN;
    summary.fail = true;
  } else {
    // A diverged seed counts as an infinitely bad run for the median.
    std::vector<double> all = finished;
    all.resize(summary.seeds.size(), std::numeric_limits<double>::infinity());
    const double median = summarize(all).median;
    summary.fail = !(median <= kFailThresholdPct);
  }
  std::ofstream(root / "summary.json") << summary_json(summary);
  log << cfg.name << ": median test error " << summary.test_err.median << "%, mean "
      << summary.test_err.mean << " +- " << summary.test_err.stddev << " over "
      << summary.test_err.count << " of " << summary.seeds.size() << " seeds"
      << (summary.fail ? " [fail]" : "") << "\n";
  return summary;
}

namespace {

std::pair<std::size_t, std::size_t> default_slice(const Network<double>& net,
                                                  const AnalysisConfig& a) {
  const std::size_t n = net.units().size();
  if (a.slice_end != 0) return {a.slice_begin, a.slice_end};
  std::size_t b = a.slice_begin;
  while (b < n && net.is_boundary(b)) ++b;
  if (b >= n) throw SliceError("no unit at or after analysis.slice_begin keeps its shape");
  std::size_t e = b + 1;
  while (e < n && net.stage_of(e) == net.stage_of(b) && !net.is_boundary(e)) ++e;
  return {b, e};
}

std::string expectation_note(const NetworkConfig& nc) {
  if (!std::holds_alternative<Identity>(nc.shortcut)) return "expected: h=" + to_string(nc.shortcut);
  if (nc.order == ActivationOrder::Original) return "expected: f=ReLU";
  if (nc.order == ActivationOrder::BnAfterAdd) return "expected: f=BN+ReLU";
  return "";
}

std::string g(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

void analyze(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir,
             std::uint64_t seed, std::ostream& log) {
  validate(cfg);
  Rng rng(seed);
  auto net = Network<double>::build(cfg.network, rng);
  if (!checkpoint.empty()) net.load_state(read_checkpoint(checkpoint));
  if (cfg.analysis.zero_branches) {
    for (auto& u : net.units()) u.zero_last_branch_conv();
  }

  auto [train_set, test_set] = load_data(cfg);
  const std::size_t m = std::min(cfg.analysis.batch, test_set.size());
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = i;
  const auto x = cast<double>(test_set.batch(idx));
  const auto labels = test_set.batch_labels(idx);

  const auto [l, L] = default_slice(net, cfg.analysis);
  fs::create_directories(out_dir);
  std::ostringstream report;
  const std::string note = expectation_note(cfg.network);
  report << cfg.name << ": " << cfg.network.depth << " layers, order "
         << to_string(cfg.network.order) << ", shortcut " << to_string(cfg.network.shortcut)
         << (checkpoint.empty() ? ", fresh weights" : ", weights " + checkpoint.string())
         << (cfg.analysis.zero_branches ? ", branches zeroed" : "") << "\n";
  report << "slice [" << l << ", " << L << ") = " << net.unit_name(l) << " .. "
         << net.unit_name(L - 1) << "\n";

  if (cfg.analysis.telescope) {
    std::ofstream csv(out_dir / "telescope.csv");
    csv << "l,L,relative_residual\n";
    double worst = 0;
    for (std::size_t e = l + 1; e <= L; ++e) {
      const double r = telescope_check(net, x, l, e, rng);
      worst = std::max(worst, r);
      csv << l << "," << e << "," << g(r) << "\n";
    }
    report << "telescope: max relative residual " << g(worst);
    if (!note.empty()) report << "  (" << note << ")";
    report << "\n";
  }
  if (cfg.analysis.decompose) {
    auto d = gradient_decompose(net, x, labels, l, L, rng);
    double sum_err = 0;
    for (std::size_t i = 0; i < d.total.numel(); ++i) {
      sum_err = std::max(sum_err,
                         std::abs(d.direct.at(i) + d.through_weights.at(i) - d.total.at(i)));
    }
    std::ofstream csv(out_dir / "decompose.csv");
    csv << "l,L,total_norm,direct_norm,through_weights_norm,grad_at_L_norm,max_sum_error\n";
    csv << l << "," << L << "," << g(l2_norm<double>(d.total.data())) << ","
        << g(l2_norm<double>(d.direct.data())) << ","
        << g(l2_norm<double>(d.through_weights.data())) << ","
        << g(l2_norm<double>(d.grad_at_L.data())) << "," << g(sum_err) << "\n";
    report << "decompose: |total| " << g(l2_norm<double>(d.total.data())) << ", |direct| "
           << g(l2_norm<double>(d.direct.data())) << ", |through weights| "
           << g(l2_norm<double>(d.through_weights.data())) << ", max sum error " << g(sum_err)
           << "\n";
  }
  if (cfg.analysis.lambda) {
    if (!std::holds_alternative<ConstantScale>(cfg.network.shortcut)) {
      report << "lambda: skipped, needs network.shortcut = scale\n";
    } else if (!cfg.analysis.zero_branches) {
      report << "lambda: skipped, needs analysis.zero_branches = true\n";
    } else {
      std::ofstream csv(out_dir / "lambda.csv");
      csv << "l,L,lambda,expected,measured,relative_error\n";
      LambdaReport last;
      for (std::size_t e = l + 1; e <= L; ++e) {
        last = lambda_product_check(net, x, labels, l, e, rng);
        csv << l << "," << e << "," << g(last.lambda) << "," << g(last.expected) << ","
            << g(last.measured) << "," << g(last.relative_error()) << "\n";
      }
      report << "lambda: ratio over " << last.span << " units " << g(last.measured)
             << ", expected " << g(last.expected) << ", relative error "
             << g(last.relative_error()) << "\n";
    }
  }
  if (cfg.analysis.profile) {
    auto rows = signal_magnitude_profile(net, x, labels, rng);
    std::ofstream csv(out_dir / "profile.csv");
    write_profile_csv(csv, rows);
    report << "profile: " << rows.size() << " units written to profile.csv\n";
  }
  std::ofstream(out_dir / "report.txt") << report.str();
  log << report.str();
}

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

double nice_ceiling(double v) {
  if (!(v > 0)) return 1;
  const double p = std::pow(10.0, std::floor(std::log10(v)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (m * p >= v) return m * p;
  }
  return 10 * p;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string plot_svg(const std::vector<fs::path>& csvs) {
  if (csvs.empty()) throw std::invalid_argument("plot needs at least one metrics CSV");
  std::vector<std::vector<MetricsRow>> series;
  std::vector<std::string> labels;
  for (const auto& p : csvs) {
    series.push_back(read_metrics_csv(p.string()));
    labels.push_back(p.stem().string());
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (std::count(labels.begin(), labels.end(), labels[i]) > 1) {
      labels[i] = (csvs[i].parent_path().filename() / csvs[i].stem()).string();
    }
  }

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double loss_hi = 0, err_hi = 0;
  for (const auto& rows : series) {
    for (const auto& r : rows) {
      const double it = static_cast<double>(r.iter + 1);
      x_lo = std::min(x_lo, it);
      x_hi = std::max(x_hi, it);
      if (std::isfinite(r.train_loss)) loss_hi = std::max(loss_hi, r.train_loss);
      if (std::isfinite(r.test_err_pct)) err_hi = std::max(err_hi, r.test_err_pct);
    }
  }
  if (x_hi == x_lo) {
    x_lo -= 1;
    x_hi += 1;
  }
  loss_hi = nice_ceiling(loss_hi);
  err_hi = std::min(100.0, nice_ceiling(err_hi));

  const double W = 800, H = 480, ml = 70, mr = 70, mt = 30, mb = 60;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto sx = [&](double it) { return ml + (it - x_lo) / (x_hi - x_lo) * pw; };
  auto sy_loss = [&](double v) { return mt + ph - v / loss_hi * ph; };
  auto sy_err = [&](double v) { return mt + ph - v / err_hi * ph; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<rect x=\"" << num(ml) << "\" y=\"" << num(mt) << "\" width=\"" << num(pw)
    << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double f = i / 5.0;
    const double y = mt + ph - f * ph;
    s << "<line x1=\"" << num(ml) << "\" y1=\"" << num(y) << "\" x2=\"" << num(ml + pw)
      << "\" y2=\"" << num(y) << "\" stroke=\"#dddddd\"/>\n";
    s << "<text x=\"" << num(ml - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">"
      << tick(f * loss_hi) << "</text>\n";
    s << "<text x=\"" << num(ml + pw + 6) << "\" y=\"" << num(y + 4) << "\">" << tick(f * err_hi)
      << "</text>\n";
    const double xv = x_lo + f * (x_hi - x_lo);
    s << "<text x=\"" << num(sx(xv)) << "\" y=\"" << num(mt + ph + 18)
      << "\" text-anchor=\"middle\">" << tick(std::round(xv)) << "</text>\n";
  }
  s << "<text x=\"" << num(ml + pw / 2) << "\" y=\"" << num(H - 12)
    << "\" text-anchor=\"middle\">iterations</text>\n";
  s << "<text transform=\"translate(18," << num(mt + ph / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">training loss (dashed)</text>\n";
  s << "<text transform=\"translate(" << num(W - 14) << "," << num(mt + ph / 2)
    << ") rotate(90)\" text-anchor=\"middle\">test error % (solid)</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* colour = kPalette[k % std::size(kPalette)];
    std::string loss_d, err_d;
    std::size_t loss_n = 0, err_n = 0;
    std::ostringstream markers;
    for (const auto& r : series[k]) {
      const double x = sx(static_cast<double>(r.iter + 1));
      if (std::isfinite(r.train_loss)) {
        loss_d += (loss_n++ ? " L" : "M") + num(x) + " " + num(sy_loss(r.train_loss));
      }
      if (std::isfinite(r.test_err_pct)) {
        err_d += (err_n++ ? " L" : "M") + num(x) + " " + num(sy_err(r.test_err_pct));
      }
    }
    auto marker = [&](const std::string& d, const char* cls) {
      const auto sp = d.find(' ');
      markers << "<circle class=\"" << cls << "\" cx=\"" << d.substr(1, sp - 1) << "\" cy=\""
              << d.substr(sp + 1) << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
    };
    if (loss_n) {
      s << "<path class=\"train-loss\" d=\"" << loss_d << "\" fill=\"none\" stroke=\"" << colour
        << "\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"/>\n";
      if (loss_n == 1) marker(loss_d, "train-loss-point");
    }
    if (err_n) {
      s << "<path class=\"test-err\" d=\"" << err_d << "\" fill=\"none\" stroke=\"" << colour
        << "\" stroke-width=\"2\"/>\n";
      if (err_n == 1) marker(err_d, "test-err-point");
    }
    s << markers.str();
    const double ly = mt + 14 + 16 * static_cast<double>(k);
    s << "<line x1=\"" << num(ml + pw - 170) << "\" y1=\"" << num(ly - 4) << "\" x2=\""
      << num(ml + pw - 146) << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << colour
      << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << num(ml + pw - 140) << "\" y=\"" << num(ly) << "\">"
      << xml_escape(labels[k]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void print_fetch_instructions(std::ostream& os) {
  os << "CIFAR-10 (binary version)\n"
        "  url: https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz\n"
        "  md5: c32a1d4ab5d03f1284b67883e8d87530\n"
        "  unpacks to cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin\n"
        "CIFAR-100 (binary version)\n"
        "  url: https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz\n"
        "  md5: 03b5dce01913d631647c71ecec9e9cb8\n"
        "  unpacks to cifar-100-binary/{train,test}.bin\n"
        "\n"
        "mkdir -p data && cd data\n"
        "curl -LO https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz\n"
        "echo 'c32a1d4ab5d03f1284b67883e8d87530  cifar-10-binary.tar.gz' | md5sum -c -\n"
        "tar xzf cifar-10-binary.tar.gz\n";
}

namespace {

struct ConfigSource {
  std::string path;
  std::string preset;
};

ExperimentConfig resolve(const ConfigSource& src) {
  if (!src.path.empty() && !src.preset.empty()) {
    throw ConfigFileError("command line", 0, "give either --config or --preset, not both");
  }
  if (!src.preset.empty()) {
    const auto* p = find_preset(src.preset);
    if (!p) {
      std::string best;
      std::size_t dist = std::numeric_limits<std::size_t>::max();
      for (const auto& q : presets()) {
        if (auto d = edit_distance(src.preset, q.name); d < dist) {
          dist = d;
          best = q.name;
        }
      }
      throw ConfigFileError("command line", 0,
                            "unknown preset '" + src.preset + "' (did you mean '" + best + "'?)");
    }
    return p->config;
  }
  if (src.path.empty()) throw ConfigFileError("command line", 0, "--config or --preset is required");
  return load_config(src.path);
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Residual network experiments: training, propagation analysis and plotting",
               "reslab-cli"};
  app.require_subcommand(1);

  ConfigSource src;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out_dir;
  std::string checkpoint;
  std::vector<std::string> csvs;
  std::string svg_path;
  std::string preset_name;

  auto add_source = [&](CLI::App* sub) {
    sub->add_option("--config", src.path, "Experiment config file (key = value)");
    sub->add_option("--preset", src.preset, "Named preset instead of a config file");
    sub->add_option("--seed", seed, "Run this single seed");
  };
  auto* run = app.add_subcommand("run", "Train every configured seed and summarise");
  add_source(run);
  run->add_flag("--deterministic", deterministic, "Bit-reproducible metrics (wall_ms = 0)");
  run->add_option("--out", out_dir, "Output directory (overrides run.out_dir)");

  auto* an = app.add_subcommand("analyze", "Propagation checks on a fresh or saved network");
  add_source(an);
  an->add_option("--checkpoint", checkpoint, "Checkpoint to load");
  an->add_option("--out", out_dir, "Directory for the report and CSVs")->required();

  auto* plot = app.add_subcommand("plot", "Plot metrics CSVs as an SVG");
  plot->add_option("csv", csvs, "Metrics CSV files")->required();
  plot->add_option("--out", svg_path, "SVG file to write")->required();

  auto* pre = app.add_subcommand("presets", "List presets, or print one as config text");
  pre->add_option("name", preset_name, "Preset to print");

  auto* fetch = app.add_subcommand("fetch-data", "Print dataset URLs and checksums");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  ExperimentConfig cfg;
  try {
    if (run->parsed() || an->parsed()) {
      cfg = resolve(src);
      if (seed) cfg.run.seeds = {*seed};
      if (deterministic) cfg.run.deterministic = true;
      if (run->parsed() && !out_dir.empty()) cfg.run.out_dir = out_dir;
      validate(cfg);
    }
    if (pre->parsed() && !preset_name.empty() && !find_preset(preset_name)) {
      resolve({"", preset_name});
    }
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (run->parsed()) {
      auto summary = run_experiment(cfg, out);
      const bool diverged = std::any_of(summary.seeds.begin(), summary.seeds.end(),
                                        [](const SeedOutcome& o) { return o.diverged_at; });
      if (diverged) {
        err << "error: at least one seed diverged; see summary.json\n";
        return 1;
      }
    } else if (an->parsed()) {
      analyze(cfg, checkpoint, out_dir, seed.value_or(0), out);
    } else if (plot->parsed()) {
      std::vector<fs::path> paths(csvs.begin(), csvs.end());
      const auto svg = plot_svg(paths);
      std::ofstream f(svg_path, std::ios::binary);
      if (!f) throw std::runtime_error("cannot write " + svg_path);
      f << svg;
    } else if (pre->parsed()) {
      if (preset_name.empty()) {
        for (const auto& p : presets()) out << p.name << "  " << p.description << "\n";
      } else {
        out << "# " << find_preset(preset_name)->description << "\n"
            << to_text(find_preset(preset_name)->config);
      }
    } else if (fetch->parsed()) {
      print_fetch_instructions(out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace reslab::cli
