#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace reslab;
using namespace reslab::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("reslab_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& s) const { return path / s; }
};

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "reslab-cli");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tiny_config(const fs::path& out, const std::string& extra = "",
                        const std::string& seeds = "3,4,5", const std::string& widths = "4,8,16") {
  return "name = tiny\n"
         "network.depth = 8\n"
         "network.order = full_preact\n"
         "network.widths = " + widths + "\n"
         "network.input_size = 8\n"
         "train.total_iters = 20\n"
         "train.batch_size = 8\n"
         "train.log_every = 5\n"
         "train.eval_every = 10\n"
         "train.decay_points = 10\n"
         "train.pad = 1\n"
         "data.dataset = synthetic\n"
         "data.synthetic_train = 60\n"
         "data.synthetic_test = 30\n"
         "run.seeds = " + seeds + "\n"
         "run.out_dir = " + out.string() + "\n" + extra;
}

int run_binary(const std::string& args) {
  const int status = std::system((std::string(RESLAB_CLI_PATH) + " " + args).c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("every preset round-trips through config text") {
  std::set<std::string> names;
  for (const auto& p : presets()) {
    INFO(p.name);
    CHECK(names.insert(p.name).second);
    CHECK(p.config.name == p.name);
    CHECK_NOTHROW(validate(p.config));
    const auto text = to_text(p.config);
    const auto back = parse_config(text);
    CHECK(back == p.config);
    CHECK(match_preset(back) == p.name);
    CHECK(to_text(back) == text);
  }
}

TEST_CASE("catalog covers the shortcut and activation tables") {
  const std::vector<std::pair<std::string, ShortcutKind>> table1{
      {"table1-original", Identity{}},
      {"table1-scale0", ConstantScale{0.0}},
      {"table1-scale05", ConstantScale{0.5}},
      {"table1-scale05-f05", ConstantScale{0.5}},
      {"table1-exclusive-gate-b0", ExclusiveGate{0.0}},
      {"table1-exclusive-gate-b6", ExclusiveGate{-6.0}},
      {"table1-exclusive-gate-b7", ExclusiveGate{-7.0}},
      {"table1-shortcut-gate-b0", ShortcutOnlyGate{0.0}},
      {"table1-shortcut-gate-b6", ShortcutOnlyGate{-6.0}},
      {"table1-conv1x1", Conv1x1{}},
      {"table1-dropout", DropoutShortcut{0.5}}};
  for (const auto& [name, sc] : table1) {
    const auto* p = find_preset(name);
    REQUIRE(p);
    CHECK(p->config.network.depth == 110);
    CHECK(p->config.network.order == ActivationOrder::Original);
    CHECK(p->config.network.shortcut == sc);
    CHECK(p->config.train.warmup);
    CHECK(p->config.run.seeds.size() == 5);
  }
  CHECK(find_preset("table1-scale05-f05")->config.network.branch_scale == 0.5);
  CHECK_FALSE(find_preset("table1-scale05")->config.network.branch_scale.has_value());

  std::set<ActivationOrder> orders;
  for (const auto& p : presets()) {
    if (p.name.rfind("table2-", 0) != 0) continue;
    CHECK(p.config.network.depth == 164);
    CHECK(p.config.network.branch == BranchShape::Bottleneck);
    CHECK(std::holds_alternative<Identity>(p.config.network.shortcut));
    CHECK(orders.insert(p.config.network.order).second);
  }
  CHECK(orders.size() == 5);
  REQUIRE(find_preset("table2-fullpreact-164"));
  CHECK(find_preset("table2-fullpreact-164")->config.network.order == ActivationOrder::FullPreAct);

  const auto& smoke = find_preset("smoke")->config;
  CHECK(smoke.network.depth == 8);
  CHECK(smoke.train.total_iters == 500);
  CHECK(smoke.data.dataset == DatasetKind::Synthetic);
}

TEST_CASE("config parsing") {
  auto c = parse_config(
      "# a comment\n"
      "\n"
      "network.shortcut_scale = 0.25   # parameter before its kind\n"
      "network.shortcut = scale\n"
      "  network.depth=  56  \n"
      "network.branch_scale = 0.5\n"
      "train.decay_points = \n"
      "run.seeds = 1, 2 ,3\n");
  CHECK(c.network.depth == 56);
  CHECK(c.network.shortcut == ShortcutKind{ConstantScale{0.25}});
  CHECK(c.network.branch_scale == 0.5);
  CHECK(c.train.decay_points.empty());
  CHECK(c.run.seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(parse_config("") == ExperimentConfig{});
}

TEST_CASE("config diagnostics carry line numbers") {
  auto msg = [](const std::string& text) -> std::string {
    try {
      parse_config(text, "x.cfg");
    } catch (const ConfigFileError& e) {
      return e.what();
    }
    return "";
  };
  auto m = msg("name = a\n\nnetwork.depht = 20\n");
  CHECK(m.find("x.cfg:3") != std::string::npos);
  CHECK(m.find("network.depth") != std::string::npos);
  CHECK(msg("train.lr = fast\n").find("x.cfg:1: train.lr") != std::string::npos);
  CHECK(msg("network.depth = 20\nnetwork.depth = 56\n").find("line 1") != std::string::npos);
  CHECK(msg("network.gate_bias = -6\n").find("exclusive_gate or shortcut_gate") != std::string::npos);
  CHECK(msg("network.order = sideways\n").find("full_preact") != std::string::npos);
  CHECK(msg("just words\n").find("x.cfg:1") != std::string::npos);
  CHECK(msg("network.widths = 1,2\n").find("three widths") != std::string::npos);
  CHECK(nearest_key("trian.lr") == "train.lr");
  CHECK(edit_distance("kitten", "sitting") == 3);
}

TEST_CASE("semantic validation") {
  ExperimentConfig c;
  CHECK_NOTHROW(validate(c));
  c.network.depth = 21;
  CHECK_THROWS_AS(validate(c), ConfigFileError);
  c = ExperimentConfig{};
  c.network.num_classes = 100;
  CHECK_THROWS_AS(validate(c), ConfigFileError);
  c = ExperimentConfig{};
  c.network.shortcut = Projection{};
  CHECK_THROWS_AS(validate(c), ConfigFileError);
  c = ExperimentConfig{};
  c.run.seeds.clear();
  CHECK_THROWS_AS(validate(c), ConfigFileError);
  c = ExperimentConfig{};
  c.run.checkpoint_every = 150;
  CHECK_THROWS_AS(validate(c), ConfigFileError);
  c = ExperimentConfig{};
  c.train.decay_points = {5, 3};
  CHECK_THROWS_AS(validate(c), ConfigFileError);
}

TEST_CASE("unknown key exits 2 naming the nearest key") {
  TempDir dir;
  write(dir / "bad.cfg", "network.depht = 20\n");
  auto r = invoke({"run", "--config", (dir / "bad.cfg").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("network.depth") != std::string::npos);
  CHECK(r.err.find(":1:") != std::string::npos);

  CHECK(invoke({"run", "--preset", "tabel1-original"}).code == 2);
  CHECK(invoke({"run", "--preset", "tabel1-original"}).err.find("table1-original") != std::string::npos);
  CHECK(invoke({"run"}).code == 2);
  CHECK(invoke({"run", "--config", (dir / "missing.cfg").string()}).code == 2);
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("run writes metrics, checkpoints and a consistent summary") {
  TempDir dir;
  write(dir / "t.cfg", tiny_config(dir / "runs", "run.checkpoint_every = 10\n"));
  auto r = invoke({"run", "--config", (dir / "t.cfg").string(), "--deterministic"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const fs::path root = dir / "runs/tiny";
  CHECK(parse_config(slurp(root / "config.txt")).name == "tiny");

  std::vector<double> finals;
  for (int seed : {3, 4, 5}) {
    const fs::path sd = root / ("seed-" + std::to_string(seed));
    auto rows = read_metrics_csv((sd / "metrics.csv").string());
    REQUIRE(rows.size() == 4);
    CHECK(rows.back().iter == 19);
    CHECK(rows[2].lr == doctest::Approx(0.01));
    CHECK(rows[0].wall_ms == 0);
    finals.push_back(rows.back().test_err_pct);
    CHECK(fs::exists(sd / "model.ckpt"));
    CHECK(fs::exists(sd / "model-10.ckpt"));
    CHECK_FALSE(fs::exists(sd / "model-20.ckpt"));
    CHECK(read_checkpoint(sd / "model.ckpt").count("head.fc.weight") == 1);
  }

  auto j = nlohmann::json::parse(slurp(root / "summary.json"));
  const auto s = summarize(finals);
  CHECK(j["test_err"]["median"].get<double>() == s.median);
  CHECK(j["test_err"]["mean"].get<double>() == doctest::Approx(s.mean).epsilon(1e-15));
  CHECK(j["test_err"]["std"].get<double>() == doctest::Approx(s.stddev).epsilon(1e-15));
  CHECK(j["runs"].size() == 3);
  CHECK(j["runs"][1]["seed"] == 4);
  CHECK(j["runs"][1]["final_test_err"].get<double>() == finals[1]);
  CHECK(j["fail"].get<bool>() == (s.median > 20.0));

  const auto first = slurp(root / "seed-4/metrics.csv");
  REQUIRE(invoke({"run", "--config", (dir / "t.cfg").string(), "--deterministic", "--seed", "4"})
              .code == 0);
  CHECK(slurp(root / "seed-4/metrics.csv") == first);
  j = nlohmann::json::parse(slurp(root / "summary.json"));
  CHECK(j["runs"].size() == 1);
}

TEST_CASE("--out overrides the output directory") {
  TempDir dir;
  write(dir / "t.cfg", tiny_config(dir / "ignored", "", "1"));
  auto r = invoke({"run", "--config", (dir / "t.cfg").string(), "--out", (dir / "elsewhere").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "elsewhere/tiny/seed-1/metrics.csv"));
  CHECK_FALSE(fs::exists(dir / "ignored"));
}

TEST_CASE("divergence is reported with its iteration and exit 1") {
  TempDir dir;
  write(dir / "n.cfg", tiny_config(dir / "runs", "train.lr = 1e30\n"));
  auto r = invoke({"run", "--config", (dir / "n.cfg").string(), "--seed", "0"});
  CHECK(r.code == 1);
  CHECK(r.out.find("diverged at iteration") != std::string::npos);
  auto j = nlohmann::json::parse(slurp(dir / "runs/tiny/summary.json"));
  CHECK(j["fail"].get<bool>());
  CHECK(j["runs"][0]["fail"].get<bool>());
  CHECK(j["runs"][0]["diverged_at"].is_number());
  CHECK(j["runs"][0]["final_test_err"].is_null());
}

TEST_CASE("analyze reports the propagation checks") {
  TempDir dir;
  write(dir / "lam.cfg",
        "name = lam\nnetwork.depth = 62\nnetwork.order = full_preact\n"
        "network.shortcut = scale\nnetwork.shortcut_scale = 0.5\nnetwork.widths = 4,8,16\n"
        "network.input_size = 8\ndata.dataset = synthetic\ndata.synthetic_test = 20\n"
        "analysis.zero_branches = true\n");
  auto r = invoke({"analyze", "--config", (dir / "lam.cfg").string(), "--out", (dir / "a").string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  std::ifstream lam(dir / "a/lambda.csv");
  std::string line, last;
  while (std::getline(lam, line)) last = line;
  CHECK(last.rfind("0,10,0.5,0.0009765625,", 0) == 0);
  CHECK(r.out.find("lambda: ratio over 10 units 0.0009765625") != std::string::npos);

  write(dir / "pre.cfg",
        "name = pre\nnetwork.depth = 20\nnetwork.order = full_preact\nnetwork.widths = 4,8,16\n"
        "network.input_size = 8\ndata.dataset = synthetic\ndata.synthetic_test = 20\n");
  r = invoke({"analyze", "--config", (dir / "pre.cfg").string(), "--out", (dir / "b").string()});
  REQUIRE(r.code == 0);
  std::ifstream tel(dir / "b/telescope.csv");
  std::getline(tel, line);
  CHECK(line == "l,L,relative_residual");
  int n = 0;
  while (std::getline(tel, line)) {
    ++n;
    CHECK(std::stod(line.substr(line.rfind(',') + 1)) < 1e-6);
  }
  CHECK(n == 3);
  CHECK(r.out.find("expected:") == std::string::npos);
  for (auto f : {"decompose.csv", "profile.csv", "report.txt"}) CHECK(fs::exists(dir / "b" / f));

  write(dir / "orig.cfg",
        "name = orig\nnetwork.depth = 20\nnetwork.widths = 4,8,16\n"
        "network.input_size = 8\ndata.dataset = synthetic\ndata.synthetic_test = 20\n");
  r = invoke({"analyze", "--config", (dir / "orig.cfg").string(), "--out", (dir / "c").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("(expected: f=ReLU)") != std::string::npos);
  std::ifstream tel2(dir / "c/telescope.csv");
  std::getline(tel2, line);
  std::getline(tel2, line);
  CHECK(std::stod(line.substr(line.rfind(',') + 1)) > 1e-3);

  write(dir / "cross.cfg", slurp(dir / "pre.cfg") + "analysis.slice_end = 5\n");
  r = invoke({"analyze", "--config", (dir / "cross.cfg").string(), "--out", (dir / "d").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("stage") != std::string::npos);
}

TEST_CASE("analyze loads a trained checkpoint") {
  TempDir dir;
  write(dir / "t.cfg", tiny_config(dir / "runs"));
  REQUIRE(invoke({"run", "--config", (dir / "t.cfg").string(), "--seed", "3"}).code == 0);
  const auto ckpt = (dir / "runs/tiny/seed-3/model.ckpt").string();
  auto r = invoke({"analyze", "--config", (dir / "t.cfg").string(), "--checkpoint", ckpt, "--out",
                (dir / "a").string()});
  INFO(r.err);
  CHECK(r.code == 0);
  CHECK(r.out.find("weights " + ckpt) != std::string::npos);
  write(dir / "wide.cfg", tiny_config(dir / "runs", "", "3", "4,8,32"));
  r = invoke({"analyze", "--config", (dir / "wide.cfg").string(), "--checkpoint", ckpt, "--out",
           (dir / "b").string()});
  CHECK(r.code == 1);
}

TEST_CASE("plot output") {
  TempDir dir;
  const auto a = dir / "a.csv", b = dir / "b.csv", one = dir / "one.csv", empty = dir / "empty.csv";
  write(a, "iter,epoch,lr,train_loss,train_err,test_err,wall_ms\n99,1,0.1,2.1,70,,0\n"
           "199,2,0.1,1.5,50,45,0\n299,3,0.1,1.1,40,38.5,0\n");
  write(b, "iter,epoch,lr,train_loss,train_err,test_err,wall_ms\n99,1,0.1,2.3,75,60,0\n"
           "199,2,0.1,1.9,60,55,0\n");
  write(one, "iter,epoch,lr,train_loss,train_err,test_err,wall_ms\n9,0.1,0.1,2.3,90,88,0\n");
  write(empty, "");

  const auto svg = plot_svg({a, b});
  auto count = [&](const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
  };
  CHECK(count(svg, "class=\"train-loss\"") == 2);
  CHECK(count(svg, "class=\"test-err\"") == 2);
  CHECK(count(svg, "stroke-dasharray") == 2);
  CHECK(svg.find(">a</text>") != std::string::npos);
  CHECK(svg.find(">b</text>") != std::string::npos);
  CHECK(plot_svg({a, b}) == svg);

  const auto single = plot_svg({one});
  CHECK(count(single, "<circle") == 2);

  CHECK(invoke({"plot", "--out", (dir / "p.svg").string(), a.string(), b.string()}).code == 0);
  CHECK(slurp(dir / "p.svg") == svg);
  auto r = invoke({"plot", "--out", (dir / "e.svg").string(), empty.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("empty") != std::string::npos);
}

TEST_CASE("presets and fetch-data verbs") {
  auto r = invoke({"presets"});
  CHECK(r.code == 0);
  for (const auto& p : presets()) CHECK(r.out.find(p.name + "  ") != std::string::npos);
  r = invoke({"presets", "table1-shortcut-gate-b0"});
  CHECK(r.code == 0);
  CHECK(parse_config(r.out) == find_preset("table1-shortcut-gate-b0")->config);
  CHECK(invoke({"presets", "nope"}).code == 2);

  r = invoke({"fetch-data"});
  CHECK(r.code == 0);
  CHECK(r.out.find("c32a1d4ab5d03f1284b67883e8d87530") != std::string::npos);
  CHECK(r.out.find("cifar-100-binary.tar.gz") != std::string::npos);
}

TEST_CASE("executable exit codes and the smoke preset") {
  TempDir dir;
  write(dir / "bad.cfg", "network.depht = 20\n");
  CHECK(run_binary("run --config " + (dir / "bad.cfg").string() + " 2>/dev/null") == 2);
  CHECK(run_binary("fetch-data >/dev/null") == 0);

  const auto t0 = std::chrono::steady_clock::now();
  const int code = run_binary("run --preset smoke --deterministic --out " +
                              (dir / "runs").string() + " >/dev/null");
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("smoke preset took ", secs, " s");
  CHECK(code == 0);
  CHECK(secs < 300);
  auto rows = read_metrics_csv((dir / "runs/smoke/seed-0/metrics.csv").string());
  CHECK(rows.back().train_loss < std::log(10.0));
}
