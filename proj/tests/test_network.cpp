#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "reslab/network.hpp"

using namespace reslab;
using reslab::testing::randn;

namespace {

NetworkConfig small(int depth, ActivationOrder order, ShortcutKind sc = Identity{},
                    BranchShape branch = BranchShape::Basic) {
  NetworkConfig c;
  c.depth = depth;
  c.order = order;
  c.shortcut = sc;
  c.branch = branch;
  c.widths = {4, 8, 16};
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("reslab_test_network_" + name);
}

// Trainable scalars of a CIFAR network computed from the layer arithmetic alone.
std::size_t expected_params(const NetworkConfig& c) {
  const std::size_t n = units_per_stage(c);
  const bool bottleneck = c.branch == BranchShape::Bottleneck;
  const bool preact = is_preactivation(c.order);
  const bool full = c.order == ActivationOrder::FullPreAct;
  std::size_t total = 9 * c.input_channels * c.widths[0] + 2 * c.widths[0];
  std::size_t in = c.widths[0];
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t w = c.widths[s];
    const std::size_t out = bottleneck ? 4 * w : w;
    for (std::size_t u = 0; u < n; ++u) {
      if (full && !(s == 0 && u == 0)) total += 2 * in;
      if (bottleneck) {
        total += in * w + 2 * w + 9 * w * w + 2 * w + w * out;
      } else {
        total += 9 * in * out + 2 * out + 9 * out * out;
      }
      // last BN of the branch
      if (c.order == ActivationOrder::Original || c.order == ActivationOrder::ReluBeforeAdd ||
          c.order == ActivationOrder::ReluOnlyPreAct)
        total += 2 * out;
      if (c.order == ActivationOrder::BnAfterAdd) total += 2 * out;
      if (in != out || (s > 0 && u == 0)) total += in * out;
      in = out;
    }
  }
  if (preact) total += 2 * in;
  return total + in * c.num_classes + c.num_classes;
}

}  // namespace

TEST_CASE("depth rules give the unit counts") {
  NetworkConfig c;
  c.depth = 110;
  CHECK(units_per_stage(c) == 18);
  c.depth = 20;
  CHECK(units_per_stage(c) == 3);
  c.branch = BranchShape::Bottleneck;
  c.depth = 164;
  CHECK(units_per_stage(c) == 18);
  c.depth = 1001;
  CHECK(units_per_stage(c) == 111);
  c.branch = BranchShape::SingleLayer;
  c.depth = 110;
  CHECK(units_per_stage(c) == 36);
}

TEST_CASE("invalid depth names the rule") {
  NetworkConfig c;
  c.depth = 21;
  try {
    units_per_stage(c);
    FAIL("no throw");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("6n+2") != std::string::npos);
  }
  c.branch = BranchShape::Bottleneck;
  c.depth = 111;
  try {
    units_per_stage(c);
    FAIL("no throw");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("9n+2") != std::string::npos);
  }
  c.depth = 2;
  CHECK_THROWS_AS(units_per_stage(c), ConfigError);
  Rng rng(1);
  c.branch = BranchShape::Basic;
  c.depth = 56;
  c.num_classes = 1;
  CHECK_THROWS_AS(Network<float>::build(c, rng), ConfigError);
}

TEST_CASE("ResNet-110 and ResNet-164 layouts and parameter counts") {
  Rng rng(2);
  NetworkConfig basic;
  basic.depth = 110;
  auto net110 = Network<float>::build(basic, rng);
  CHECK(net110.units().size() == 54);
  CHECK(net110.count_params() == expected_params(basic));
  MESSAGE("ResNet-110 parameters: ", net110.count_params());
  CHECK(net110.count_params() == doctest::Approx(1.7e6).epsilon(0.05));

  NetworkConfig bottleneck;
  bottleneck.depth = 164;
  bottleneck.branch = BranchShape::Bottleneck;
  bottleneck.order = ActivationOrder::FullPreAct;
  auto net164 = Network<float>::build(bottleneck, rng);
  CHECK(net164.units().size() == 54);
  CHECK(net164.count_params() == expected_params(bottleneck));
  MESSAGE("ResNet-164 parameters: ", net164.count_params());
  CHECK(net164.count_params() == doctest::Approx(1.7e6).epsilon(0.05));
  MESSAGE("forward MACs per image: basic-110 ", net110.forward_macs(), ", bottleneck-164 ",
          net164.forward_macs());

  NetworkConfig d20;
  d20.depth = 20;
  CHECK(Network<float>::build(d20, rng).units().size() == 9);
}

TEST_CASE("parameter summation oracle across variants") {
  Rng rng(3);
  for (auto order : {ActivationOrder::Original, ActivationOrder::BnAfterAdd,
                     ActivationOrder::ReluBeforeAdd, ActivationOrder::ReluOnlyPreAct,
                     ActivationOrder::FullPreAct}) {
    for (auto branch : {BranchShape::Basic, BranchShape::Bottleneck}) {
      auto c = small(branch == BranchShape::Basic ? 14 : 20, order, Identity{}, branch);
      INFO(to_string(order), " ", to_string(branch));
      auto net = Network<double>::build(c, rng);
      CHECK(net.count_params() == expected_params(c));
      std::size_t summed = 0;
      for (const auto& row : net.param_summary()) summed += row.count;
      CHECK(summed == net.count_params());
    }
  }
}

TEST_CASE("stem and first batchnorm parameter counts") {
  Rng rng(4);
  NetworkConfig c;
  c.depth = 20;
  auto net = Network<float>::build(c, rng);
  auto rows = net.param_summary();
  REQUIRE(rows.size() > 3);
  CHECK(rows[0].name == "stem.conv.weight");
  CHECK(rows[0].count == 432);
  CHECK(rows[1].name == "stem.bn.gamma");
  CHECK(rows[1].count + rows[2].count == 32);
}

TEST_CASE("gate parameters are counted") {
  Rng rng(5);
  auto plain = Network<double>::build(small(8, ActivationOrder::Original), rng);
  auto gated = Network<double>::build(small(8, ActivationOrder::Original, ExclusiveGate{}), rng);
  // one non-boundary unit in stage 1 only, 4 channels: 4x4 weight + 4 bias
  CHECK(gated.count_params() - plain.count_params() == 20);
}

TEST_CASE("same seed rebuilds bit-identical parameters") {
  auto c = small(14, ActivationOrder::FullPreAct, ShortcutOnlyGate{});
  Rng a(42), b(42), other(43);
  auto na = Network<float>::build(c, a);
  auto nb = Network<float>::build(c, b);
  auto nc = Network<float>::build(c, other);
  auto pa = na.parameters(), pb = nb.parameters(), pc = nc.parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(max_abs_diff<float>(pa[i].tensor.data(), pb[i].tensor.data()) == 0);
    any_diff = any_diff || max_abs_diff<float>(pa[i].tensor.data(), pc[i].tensor.data()) > 0;
  }
  CHECK(any_diff);
}

TEST_CASE("forward shape contract for every variant") {
  Rng rng(6);
  const std::vector<ShortcutKind> shortcuts{Identity{},          ConstantScale{0.5},
                                            ExclusiveGate{-6.0},  ShortcutOnlyGate{-6.0},
                                            Conv1x1{},           DropoutShortcut{0.5}};
  auto x = randn({2, 3, 32, 32}, rng);
  auto check = [&](const NetworkConfig& c) {
    INFO(to_string(c.shortcut), " ", to_string(c.order), " ", to_string(c.branch));
    auto net = Network<double>::build(c, rng);
    Graph<double> g;
    g.set_grad_enabled(false);
    auto out = net.forward(g, x, Mode::Train, rng);
    const std::size_t m = c.branch == BranchShape::Bottleneck ? 4 : 1;
    CHECK(out.stage_outputs[0].shape() == Shape{2, m * c.widths[0], 32, 32});
    CHECK(out.stage_outputs[1].shape() == Shape{2, m * c.widths[1], 16, 16});
    CHECK(out.stage_outputs[2].shape() == Shape{2, m * c.widths[2], 8, 8});
    CHECK(out.logits.shape() == Shape{2, c.num_classes});
    CHECK(out.traces.size() == net.units().size());
  };
  for (const auto& sc : shortcuts) {
    for (auto order : {ActivationOrder::Original, ActivationOrder::BnAfterAdd,
                       ActivationOrder::ReluBeforeAdd, ActivationOrder::ReluOnlyPreAct,
                       ActivationOrder::FullPreAct}) {
      check(small(8, order, sc));
    }
  }
  check(small(11, ActivationOrder::FullPreAct, Identity{}, BranchShape::Bottleneck));
  check(small(11, ActivationOrder::Original, Identity{}, BranchShape::Bottleneck));
  check(small(5, ActivationOrder::FullPreAct, Identity{}, BranchShape::SingleLayer));
  auto padded = small(8, ActivationOrder::Original);
  padded.zero_pad_shortcuts = true;
  check(padded);
  auto cifar100 = small(8, ActivationOrder::FullPreAct);
  cifar100.num_classes = 100;
  check(cifar100);
}

TEST_CASE("reduced 16x16 input shortens every stage") {
  Rng rng(7);
  auto c = small(8, ActivationOrder::FullPreAct);
  c.input_size = 16;
  auto net = Network<float>::build(c, rng);
  std::vector<float> xs(2 * 3 * 16 * 16, 0.5f);
  Graph<float> g;
  auto out = net.forward(g, Tensor<float>({2, 3, 16, 16}, xs), Mode::Eval, rng);
  CHECK(out.stage_outputs[0].dim(2) == 16);
  CHECK(out.stage_outputs[1].dim(2) == 8);
  CHECK(out.stage_outputs[2].dim(2) == 4);
}

TEST_CASE("stage bookkeeping and naming") {
  Rng rng(8);
  auto net = Network<float>::build(small(20, ActivationOrder::FullPreAct), rng);
  CHECK(net.unit_name(0) == "stage1.unit1");
  CHECK(net.unit_name(3) == "stage2.unit1");
  CHECK(net.unit_name(8) == "stage3.unit3");
  CHECK(net.stage_of(5) == 1);
  CHECK_FALSE(net.is_boundary(0));
  CHECK(net.is_boundary(3));
  CHECK(net.is_boundary(6));
  CHECK_FALSE(net.is_boundary(7));
  // first unit reads the stem activation directly
  CHECK(net.units()[0].preact().empty());
  CHECK(net.units()[1].preact().size() == 2);
  bool head_bn = false;
  for (const auto& p : net.parameters()) head_bn = head_bn || p.name == "head.bn.gamma";
  CHECK(head_bn);

  auto orig = Network<float>::build(small(8, ActivationOrder::Original), rng);
  for (const auto& p : orig.parameters()) CHECK(p.name.rfind("head.bn", 0) != 0);
  CHECK_THROWS(net.unit_name(9));
}

TEST_CASE("input channel mismatch is a shape error") {
  Rng rng(9);
  auto net = Network<float>::build(small(8, ActivationOrder::Original), rng);
  Graph<float> g;
  CHECK_THROWS_AS(net.forward(g, Tensor<float>::zeros({1, 1, 32, 32}), Mode::Eval, rng),
                  ShapeError);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(10);
  auto c = small(8, ActivationOrder::FullPreAct, ExclusiveGate{});
  auto src = Network<double>::build(c, rng);
  // make the buffers non-trivial
  Graph<double> g;
  src.forward(g, randn({4, 3, 32, 32}, rng), Mode::Train, rng);
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(path, src);

  auto state = read_checkpoint(path);
  CHECK(state.size() == src.parameters().size() + src.buffers().size());
  CHECK(state.count("stage1.unit1.conv1.weight") == 1);

  Rng other(11);
  auto dst = Network<double>::build(c, other);
  dst.load_state(state);
  auto a = src.parameters(), b = dst.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(max_abs_diff<double>(a[i].tensor.data(), b[i].tensor.data()) == 0);
  }
  auto ab = src.buffers(), bb = dst.buffers();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    CHECK(max_abs_diff<double>(ab[i].tensor.data(), bb[i].tensor.data()) == 0);
  }

  // float networks survive the float64 records exactly
  Rng f1(12), f2(13);
  auto fs = Network<float>::build(c, f1);
  auto fd = Network<float>::build(c, f2);
  save_checkpoint(path, fs);
  fd.load_state(read_checkpoint(path));
  auto fa = fs.parameters(), fb = fd.parameters();
  for (std::size_t i = 0; i < fa.size(); ++i) {
    CHECK(max_abs_diff<float>(fa[i].tensor.data(), fb[i].tensor.data()) == 0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint header layout") {
  Rng rng(14);
  auto net = Network<float>::build(small(8, ActivationOrder::Original), rng);
  const auto path = temp_file("layout.ckpt");
  save_checkpoint(path, net);
  std::ifstream is(path, std::ios::binary);
  std::array<char, 8> magic{};
  is.read(magic.data(), 8);
  CHECK(magic == kCheckpointMagic);
  char version = 0;
  is.read(&version, 1);
  CHECK(version == static_cast<char>(kCheckpointVersion));
  std::uint64_t count = 0;
  is.read(reinterpret_cast<char*>(&count), 8);
  CHECK(count == net.parameters().size() + net.buffers().size());
  std::uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), 4);
  std::string name(len, '\0');
  is.read(name.data(), len);
  CHECK(name == "stem.conv.weight");
  is.close();
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint errors") {
  Rng rng(15);
  const auto path = temp_file("bad.ckpt");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTACKPT";
  }
  CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);
  CHECK_THROWS_AS(read_checkpoint(temp_file("missing.ckpt")), CheckpointError);

  auto net = Network<float>::build(small(8, ActivationOrder::Original), rng);
  save_checkpoint(path, net);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 5);
  CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);

  save_checkpoint(path, net);
  auto state = read_checkpoint(path);
  auto wider = small(8, ActivationOrder::Original);
  wider.widths = {8, 8, 16};
  auto other = Network<float>::build(wider, rng);
  try {
    other.load_state(state);
    FAIL("no throw");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("stem.conv.weight") != std::string::npos);
  }
  state.erase("head.fc.bias");
  CHECK_THROWS_AS(net.load_state(state), CheckpointError);
  std::filesystem::remove(path);
}
