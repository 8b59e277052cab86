#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "reslab/trainer.hpp"

using namespace reslab;

namespace {

NetworkConfig resnet8(std::size_t size = 16) {
  NetworkConfig c;
  c.depth = 8;
  c.order = ActivationOrder::FullPreAct;
  c.widths = {8, 16, 32};
  c.input_size = size;
  return c;
}

TrainConfig quick(std::size_t iters) {
  TrainConfig t;
  t.total_iters = iters;
  t.batch_size = 32;
  t.decay_points = {};
  t.pad = 2;
  t.log_every = 10;
  t.seed = 5;
  return t;
}

std::vector<NamedTensor<double>> scalar_params(std::vector<double> values, bool decay = true) {
  std::vector<NamedTensor<double>> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.push_back({"p" + std::to_string(i), Tensor<double>::vector({values[i]}, true), decay});
  }
  return out;
}

void set_grad(const NamedTensor<double>& p, double g) {
  p.tensor.ensure_grad();
  p.tensor.mutable_grad()[0] = g;
}

std::string csv_of(const TrainResult& r) {
  std::ostringstream os;
  write_metrics_header(os);
  for (const auto& row : r.rows) write_metrics_row(os, row);
  return os.str();
}

}  // namespace

TEST_CASE("learning-rate schedule boundaries") {
  TrainConfig c;
  c.warmup = true;
  const std::vector<std::pair<std::size_t, double>> table{
      {0, 0.01},     {100, 0.01},   {399, 0.01},    {400, 0.1},    {31999, 0.1},
      {32000, 0.01}, {47999, 0.01}, {48000, 0.001}, {63999, 0.001}};
  for (auto [iter, lr] : table) {
    INFO("iter ", iter);
    CHECK(lr_at(iter, c) == lr);
  }
  c.warmup = false;
  CHECK(lr_at(0, c) == 0.1);
  CHECK(lr_at(399, c) == 0.1);
}

TEST_CASE("schedule with a non-reciprocal decay factor") {
  TrainConfig c;
  c.decay_factor = 0.2;
  c.decay_points = {10, 20};
  CHECK(lr_at(9, c) == 0.1);
  CHECK(lr_at(10, c) == doctest::Approx(0.02));
  CHECK(lr_at(25, c) == doctest::Approx(0.004));
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(validate(c));
  c.decay_points = {48000, 32000};
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = TrainConfig{};
  c.decay_points = {100, 100};
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = TrainConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = TrainConfig{};
  c.lr_initial = 0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
}

TEST_CASE("plain SGD step") {
  auto p = scalar_params({1.0});
  set_grad(p[0], 1.0);
  SgdState<double> s;
  sgd_step<double>(p, s, 0.1, 0.0, 0.0);
  CHECK(p[0].tensor.at(0) == 1.0 - 0.1);
}

TEST_CASE("two momentum steps unroll to 1 + 1.9") {
  auto p = scalar_params({5.0});
  SgdState<double> s;
  for (int i = 0; i < 2; ++i) {
    set_grad(p[0], 1.0);
    sgd_step<double>(p, s, 1.0, 0.9, 0.0);
  }
  CHECK(std::abs(p[0].tensor.at(0) - (5.0 - 2.9)) < 1e-15);
}

TEST_CASE("weight decay alone scales by 1 - lr wd") {
  auto p = scalar_params({3.0, 3.0});
  p[1].weight_decay = false;
  SgdState<double> s;
  double expect = 3.0;
  for (int i = 0; i < 5; ++i) {
    set_grad(p[0], 0.0);
    set_grad(p[1], 0.0);
    sgd_step<double>(p, s, 0.1, 0.0, 1e-4);
    expect *= 1 - 1e-5;
    CHECK(p[0].tensor.at(0) == doctest::Approx(expect).epsilon(1e-14));
  }
  CHECK(p[1].tensor.at(0) == 3.0);

  sgd_step<double>(p, s, 0.1, 0.0, 1e-4, true);
  CHECK(p[1].tensor.at(0) == doctest::Approx(3.0 * (1 - 1e-5)).epsilon(1e-14));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  auto p = scalar_params({0.3, -1.7, 1e-30});
  SgdState<double> s;
  for (auto& q : p) set_grad(q, 123.0);
  const auto before = std::vector<double>{p[0].tensor.at(0), p[1].tensor.at(0), p[2].tensor.at(0)};
  sgd_step<double>(p, s, 0.0, 0.9, 1e-4);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p[i].tensor.at(0) == before[i]);
}

TEST_CASE("negative or non-finite learning rate is rejected") {
  auto p = scalar_params({1.0});
  SgdState<double> s;
  CHECK_THROWS_AS(sgd_step<double>(p, s, -0.1, 0.9, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(sgd_step<double>(p, s, std::numeric_limits<double>::quiet_NaN(), 0.9, 0.0),
                  std::invalid_argument);
}

TEST_CASE("a parameter without gradient only feels weight decay") {
  auto p = scalar_params({2.0});
  SgdState<double> s;
  sgd_step<double>(p, s, 0.5, 0.9, 0.0);
  CHECK(p[0].tensor.at(0) == 2.0);
}

TEST_CASE("augmentation geometry") {
  const std::size_t C = 3, H = 32, W = 32;
  std::vector<float> img(C * H * W);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i % 97) + 1.0f;

  auto centre = augment_with(img, C, H, W, 4, 4, 4, false);
  CHECK(centre == img);

  auto once = augment_with(img, C, H, W, 4, 4, 4, true);
  CHECK(once != img);
  CHECK(once[5] == img[W - 1 - 5]);
  CHECK(augment_with(once, C, H, W, 4, 4, 4, true) == img);

  auto corner = augment_with(img, C, H, W, 4, 0, 0, false);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const float v = corner[(c * H + y) * W + x];
        if (y < 4 || x < 4) {
          REQUIRE(v == 0.0f);
        } else {
          REQUIRE(v == img[(c * H + y - 4) * W + x - 4]);
        }
      }
    }
  }

  Rng rng(3);
  int flips = 0;
  for (int i = 0; i < 400; ++i) {
    auto a = augment(img, C, H, W, 0, rng);
    if (a != img) ++flips;
  }
  CHECK(flips > 150);
  CHECK(flips < 250);
}

TEST_CASE("metrics CSV round trip") {
  auto dir = std::filesystem::temp_directory_path() / "reslab_metrics_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "m.csv").string();
  std::vector<MetricsRow> rows(2);
  rows[0] = {9, 0.5, 0.1, 2.25, 80.0, std::numeric_limits<double>::quiet_NaN(), 12.5};
  rows[1] = {19, 1.0, 0.01, 1.125, 40.5, 37.25, 0};
  {
    std::ofstream out(path);
    write_metrics_header(out);
    for (const auto& r : rows) write_metrics_row(out, r);
  }
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "iter,epoch,lr,train_loss,train_err,test_err,wall_ms");
  CHECK(first == "9,0.5,0.1,2.25,80,,12.5");
  auto back = read_metrics_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].iter == 9);
  CHECK(std::isnan(back[0].test_err_pct));
  CHECK(back[1].test_err_pct == 37.25);
  CHECK(back[1].lr == 0.01);

  std::ofstream(path) << "";
  CHECK_THROWS(read_metrics_csv(path));
  std::ofstream(path) << "iter,lr\n1,2\n";
  CHECK_THROWS(read_metrics_csv(path));
  std::filesystem::remove_all(dir);
}

TEST_CASE("seed summaries") {
  std::vector<double> v{7.0, 6.5, 9.0, 6.0, 8.0};
  auto s = summarize(v);
  CHECK(s.count == 5);
  CHECK(s.median == 7.0);
  CHECK(s.mean == doctest::Approx(7.3));
  CHECK(s.stddev == doctest::Approx(std::sqrt((0.09 + 0.64 + 2.89 + 1.69 + 0.49) / 4)));
  std::vector<double> two{1.0, 2.0};
  CHECK(summarize(two).median == 1.5);
  std::vector<double> one{4.0};
  CHECK(summarize(one).stddev == 0);
}

TEST_CASE("untrained network sits at chance") {
  Rng rng(1);
  auto net = Network<float>::build(resnet8(), rng);
  auto test = synthetic(1000, 10, 16, 2, Split::Test);
  const double err = evaluate(net, test);
  MESSAGE("untrained error ", err);
  CHECK(err == doctest::Approx(90.0).epsilon(3.0 / 90.0));
}

TEST_CASE("deterministic runs produce identical metric streams") {
  auto data = synthetic(256, 10, 16, 3);
  auto test = synthetic(100, 10, 16, 3, Split::Test);
  auto cfg = quick(30);
  cfg.deterministic = true;
  cfg.eval_every = 15;
  std::string first;
  for (int run = 0; run < 2; ++run) {
    Rng rng(cfg.seed);
    auto net = Network<float>::build(resnet8(), rng);
    auto r = train(net, data, &test, cfg);
    CHECK(r.rows.size() == 4);  // 9, 14 (eval), 19, 29
    CHECK(r.rows[0].wall_ms == 0);
    CHECK_FALSE(std::isnan(r.rows[1].test_err_pct));
    if (run == 0) {
      first = csv_of(r);
    } else {
      CHECK(csv_of(r) == first);
    }
  }
}

TEST_CASE("non-finite loss aborts naming the iteration") {
  auto data = synthetic(64, 10, 16, 4);
  Rng rng(2);
  auto net = Network<float>::build(resnet8(), rng);
  auto cfg = quick(10);
  cfg.log_every = 1;
  auto params = net.parameters();
  try {
    train(net, data, nullptr, cfg, [&](const MetricsRow& row) {
      if (row.iter == 2) params.back().tensor.mutable_data()[0] = std::nanf("");
    });
    FAIL("no throw");
  } catch (const TrainingDiverged& e) {
    CHECK(e.iter() == 3);
    CHECK(std::string(e.what()).find("iteration 3") != std::string::npos);
  }
}

TEST_CASE("mismatched data is rejected before training") {
  auto data = synthetic(64, 10, 8, 4);
  Rng rng(2);
  auto net = Network<float>::build(resnet8(), rng);
  CHECK_THROWS_AS(train(net, data, nullptr, quick(1)), std::invalid_argument);
}

TEST_CASE("ResNet-8 smoke run learns") {
  auto full = synthetic(4000, 10, 16, 7);
  auto data = subset(full, 2000, 7);
  auto cfg = quick(500);
  cfg.log_every = 100;
  Rng rng(cfg.seed);
  auto net = Network<float>::build(resnet8(), rng);
  std::vector<double> losses;
  auto r = train(net, data, nullptr, cfg, [&](const MetricsRow& row) { losses.push_back(row.train_loss); });
  REQUIRE(r.rows.size() == 5);
  MESSAGE("window losses ", losses[0], " ", losses[1], " ", losses[4]);
  CHECK(r.final_train_loss < std::log(10.0));
  CHECK(losses[1] < losses[0]);
  CHECK(r.rows[4].iter == 499);
  CHECK(r.rows[4].epoch == doctest::Approx(8.0));
  CHECK_FALSE(r.fail);
}
