#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fgc/error.hpp"
#include "fgc/fixtures.hpp"
#include "fgc/flops.hpp"
#include "fgc/scheduler.hpp"
#include "oracles.hpp"

using namespace fgc;
namespace fs = std::filesystem;

namespace {

const fs::path kPresets = FGC_PRESET_DIR;

double within(double value, double target) { return std::abs(value - target) / target; }

std::vector<std::size_t> stage_targets(const CompressionPlan& p) {
  std::vector<std::size_t> out;
  for (const auto& s : p.stages) out.push_back(s.skip ? 0 : s.target_n);
  return out;
}

CompressionPlan preset_plan(const NetworkSpec& net, const std::string& name) {
  return build_plan(net, load_preset(kPresets / (name + ".json")).options);
}

}  // namespace

TEST_CASE("schedule degree names") {
  CHECK(schedule_degree_from_string("quarter") == ScheduleDegree::quarter);
  CHECK(degree_ratio(ScheduleDegree::constant) == 1);
  CHECK(degree_ratio(ScheduleDegree::half) == 2);
  CHECK(degree_ratio(ScheduleDegree::quarter) == 4);
  CHECK_THROWS_AS(schedule_degree_from_string("third"), PlanError);
}

TEST_CASE("divisor clamping") {
  CHECK(clamp_to_divisor(64, 32) == 32);
  CHECK(clamp_to_divisor(48, 32) == 24);
  CHECK(clamp_to_divisor(3, 128) == 3);
  CHECK(clamp_to_divisor(7, 5) == 1);
}

TEST_CASE("resnet-34 plan A stages and flops") {
  const NetworkSpec net = make_resnet34();
  const CompressionPlan p = preset_plan(net, "resnet34_a");
  CHECK(stage_targets(p) == std::vector<std::size_t>{8, 32, 128, 0});
  CHECK(within(static_cast<double>(p.predicted_flops), 3.98e9) <= 0.02);
  for (const auto& l : p.layers) CHECK(l.stage != p.stages[3].stage);
}

TEST_CASE("resnet-34 plans B, C and D") {
  const NetworkSpec net = make_resnet34();
  CHECK(within(static_cast<double>(preset_plan(net, "resnet34_b").predicted_flops), 2.58e9) <= 0.02);
  const CompressionPlan c = preset_plan(net, "resnet34_c");
  CHECK(stage_targets(c) == std::vector<std::size_t>{1, 4, 16, 64});
  CHECK(within(static_cast<double>(c.predicted_flops), 1.44e9) <= 0.02);
  const CompressionPlan d = preset_plan(net, "resnet34_d");
  CHECK(stage_targets(d) == std::vector<std::size_t>{1, 1, 1, 1});
  for (const auto& l : d.layers) CHECK(l.n == 1);
  CHECK(within(static_cast<double>(d.predicted_flops), 1.11e9) <= 0.02);
}

TEST_CASE("stem, 1x1 and fc layers are skipped") {
  const NetworkSpec net = make_resnet34();
  const CompressionPlan p = preset_plan(net, "resnet34_d");
  CHECK(p.find("conv1") == nullptr);
  CHECK(p.find("conv3_1_proj") == nullptr);
  CHECK(p.find("fc") == nullptr);
  bool stem_reported = false;
  for (const auto& s : p.skipped) stem_reported |= s.id == "conv1";
  CHECK(stem_reported);
  PlanOptions forced = load_preset(kPresets / "resnet34_d.json").options;
  forced.force_1x1 = true;
  CHECK(build_plan(net, forced).find("conv3_1_proj") != nullptr);
}

TEST_CASE("half schedule is geometric") {
  const NetworkSpec net = make_resnet34();
  PlanOptions o;
  o.degree = ScheduleDegree::half;
  o.base_n = 4;
  CHECK(stage_targets(build_plan(net, o)) == std::vector<std::size_t>{4, 8, 16, 32});
}

TEST_CASE("quarter plans multiply by four between stages before clamping") {
  oracle::Rng rng(1);
  const NetworkSpec net = make_vgg16();
  for (int trial = 0; trial < 20; ++trial) {
    PlanOptions o;
    o.base_n = oracle::uniform(rng, 1, 6);
    const CompressionPlan p = build_plan(net, o);
    for (std::size_t s = 1; s < p.stages.size(); ++s) {
      CHECK(p.stages[s].target_n == 4 * p.stages[s - 1].target_n);
    }
    for (const auto& l : p.layers) {
      CHECK(net.find(l.id)->conv().shape.c_in % l.n == 0);
    }
  }
}

TEST_CASE("divisor adjustments are reported, not fatal") {
  ToyCnnOptions opts;
  opts.channels = {6, 6, 6, 6};
  NetworkSpec net = make_toy_cnn(opts);
  PlanOptions o;
  o.degree = ScheduleDegree::constant;
  o.base_n = 4;
  const CompressionPlan p = build_plan(net, o);
  REQUIRE_FALSE(p.layers.empty());
  for (const auto& l : p.layers) {
    CHECK(l.target_n == 4);
    CHECK(l.n == 3);
  }
  CHECK_FALSE(p.adjustments.empty());
}

TEST_CASE("stage caps") {
  const NetworkSpec net = make_resnet34();
  PlanOptions o;
  o.base_n = 2;
  o.stage_caps = {StageCap{}, StageCap{true, {}}, StageCap{false, 4}};
  const CompressionPlan p = build_plan(net, o);
  CHECK(p.stages[1].skip);
  for (const auto& l : p.layers) {
    CHECK(l.stage_index != 1);
    if (l.stage_index == 2) CHECK(l.n <= 4);
  }
}

TEST_CASE("empty plan predicts the original flops") {
  const NetworkSpec net = make_resnet34();
  CompressionPlan empty;
  CHECK(predict_flops(net, empty) == network_flops(net));
}

TEST_CASE("single-layer prediction matches the ratio formula") {
  NetworkSpec net;
  net.name = "single";
  net.input_shape = Shape3{512, 7, 7};
  LayerSpec l;
  l.id = "c";
  l.kind = LayerKind::conv;
  ConvWeights w;
  w.shape = ConvShape{512, 512, 3, 1, 1, 1};
  l.params = w;
  net.layers.push_back(l);
  PlanOptions o;
  o.skip_stem = false;
  const CompressionPlan p = build_plan(net, o);
  REQUIRE(p.layers.size() == 1);
  const double ratio = static_cast<double>(p.predicted_flops) / static_cast<double>(network_flops(net));
  CHECK(ratio == doctest::Approx(1.0 / 9 + 1.0 / 512).epsilon(1e-12));
}

TEST_CASE("constant <= half <= quarter for a fixed base") {
  for (const NetworkSpec& net : {make_resnet34(), make_vgg16()}) {
    for (std::size_t base : {1u, 2u, 4u, 8u}) {
      PlanOptions o;
      o.base_n = base;
      o.degree = ScheduleDegree::constant;
      const auto c = build_plan(net, o).predicted_flops;
      o.degree = ScheduleDegree::half;
      const auto h = build_plan(net, o).predicted_flops;
      o.degree = ScheduleDegree::quarter;
      const auto q = build_plan(net, o).predicted_flops;
      CHECK(c <= h);
      CHECK(h <= q);
    }
  }
}

TEST_CASE("vgg16 presets hit the reported reductions") {
  const NetworkSpec net = make_vgg16();
  const double base = static_cast<double>(network_flops(net));
  const std::vector<std::pair<std::string, double>> targets{
      {"vgg16_a", 0.5699}, {"vgg16_b", 0.7786}, {"vgg16_c", 0.8135}, {"vgg16_d", 0.8580}};
  for (const auto& [name, reduction] : targets) {
    CAPTURE(name);
    const double remaining = static_cast<double>(preset_plan(net, name).predicted_flops) / base;
    CHECK(within(remaining, 1.0 - reduction) <= 0.02);
  }
}

TEST_CASE("plan file round trip") {
  const fs::path dir = fs::temp_directory_path() / "fgc_test_scheduler";
  fs::create_directories(dir);
  const CompressionPlan p = preset_plan(make_resnet34(), "resnet34_b");
  save_plan(p, dir / "plan.json");
  const CompressionPlan back = load_plan(dir / "plan.json");
  CHECK(back.layers == p.layers);
  CHECK(back.stages == p.stages);
  CHECK(back.skipped == p.skipped);
  CHECK(back.predicted_flops == p.predicted_flops);
  CHECK(back.degree == p.degree);
  std::ofstream(dir / "bad.json") << R"({"format_version": 1})";
  CHECK_THROWS_AS(load_plan(dir / "bad.json"), FormatError);
}

TEST_CASE("preset files parse") {
  const Preset p = load_preset(kPresets / "resnet34_a.json");
  CHECK(p.options.degree == ScheduleDegree::quarter);
  CHECK(p.options.base_n == 8);
  REQUIRE(p.options.stage_caps.size() == 4);
  CHECK(p.options.stage_caps[3].skip);
  CHECK_THROWS_AS(load_preset(kPresets / "absent.json"), FormatError);
}
