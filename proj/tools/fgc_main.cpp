// fgc: group-conv + pointwise compression of CNN convolutions.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "fgc/error.hpp"
#include "fgc/fixtures.hpp"
#include "fgc/flops.hpp"
#include "fgc/model_io.hpp"
#include "fgc/pipeline.hpp"
#include "fgc/reconstructor.hpp"
#include "fgc/scheduler.hpp"

namespace fs = std::filesystem;
using namespace fgc;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kFormat = 2, kPlan = 3, kNumerical = 4, kShape = 5 };

// Comma separated caps: empty or "null" for none, "-" to skip the stage, or an integer.
std::vector<StageCap> parse_stage_caps(const std::string& text) {
  std::vector<StageCap> caps;
  if (text.empty()) return caps;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    StageCap cap;
    if (item == "-") {
      cap.skip = true;
    } else if (!item.empty() && item != "null") {
      std::size_t used = 0;
      unsigned long v = 0;
      try {
        v = std::stoul(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size() || v == 0) throw PlanError("invalid stage cap '" + item + "'");
      cap.max_n = v;
    }
    caps.push_back(cap);
  }
  return caps;
}

struct PlanArgs {
  std::string preset;
  std::string plan_file;
  std::string degree = "quarter";
  std::size_t base_n = 0;
  std::string stage_caps;
  std::vector<std::string> skip_layers;
  bool force_1x1 = false;
  bool include_stem = false;

  void add_to(CLI::App* cmd, bool allow_plan_file) {
    if (allow_plan_file) cmd->add_option("--plan", plan_file, "Plan file from `fgc plan`");
    cmd->add_option("--preset", preset, "Preset JSON (degree, base_n, stage caps)");
    cmd->add_option("--degree", degree, "Schedule degree: constant, half or quarter");
    cmd->add_option("--base-n", base_n, "Rank n in the first compressed stage");
    cmd->add_option("--stage-caps", stage_caps, "Per-stage caps, e.g. null,null,16,-");
    cmd->add_option("--skip-layer", skip_layers, "Leave this conv uncompressed (repeatable)");
    cmd->add_flag("--force-1x1", force_1x1, "Also decompose 1x1 convolutions");
    cmd->add_flag("--include-stem", include_stem, "Also compress the first convolution");
  }

  PlanOptions options() const {
    PlanOptions opts;
    if (!preset.empty()) opts = load_preset(preset).options;
    if (preset.empty() || degree != "quarter") opts.degree = schedule_degree_from_string(degree);
    if (base_n != 0) opts.base_n = base_n;
    if (preset.empty() && base_n == 0) throw PlanError("--base-n (or --preset) is required");
    if (!stage_caps.empty()) opts.stage_caps = parse_stage_caps(stage_caps);
    opts.skip_layers.insert(opts.skip_layers.end(), skip_layers.begin(), skip_layers.end());
    opts.force_1x1 = opts.force_1x1 || force_1x1;
    if (include_stem) opts.skip_stem = false;
    return opts;
  }
};

struct CalibArgs {
  std::string file;
  std::size_t samples = 32;
  std::uint64_t seed = 0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--calib", file, "Calibration header JSON");
    cmd->add_option("--calib-samples", samples, "Synthetic calibration inputs when --calib is absent");
    cmd->add_option("--seed", seed, "Seed for synthetic calibration");
  }

  CalibrationSet load(const Shape3& shape) const {
    if (!file.empty()) return load_calibration(file);
    return synthetic_calibration(shape, samples, seed);
  }
};

void print_plan(const NetworkSpec& net, const CompressionPlan& plan) {
  std::printf("network %s  degree %s  base_n %zu\n", plan.network.c_str(),
              std::string(to_string(plan.degree)).c_str(), plan.base_n);
  for (const auto& s : plan.stages) {
    if (s.skip) {
      std::printf("  stage %-10s skipped\n", s.stage.c_str());
    } else {
      std::printf("  stage %-10s target n %zu\n", s.stage.c_str(), s.target_n);
    }
  }
  for (const auto& l : plan.layers) {
    std::printf("  %-24s %-10s n=%zu%s\n", l.id.c_str(), l.stage.c_str(), l.n,
                l.n != l.target_n ? " (adjusted)" : "");
  }
  for (const auto& s : plan.skipped) {
    std::printf("  %-24s skipped: %s\n", s.id.c_str(), s.reason.c_str());
  }
  for (const auto& a : plan.adjustments) std::printf("  note: %s\n", a.c_str());
  const std::uint64_t base = network_flops(net);
  std::printf("flops: %llu -> %llu (%.2f%% reduction)\n", static_cast<unsigned long long>(base),
              static_cast<unsigned long long>(plan.predicted_flops),
              100.0 * (1.0 - static_cast<double>(plan.predicted_flops) / static_cast<double>(base)));
}

int run(int argc, char** argv) {
  CLI::App app{"Compress CNN convolutions into group + pointwise pairs"};
  app.require_subcommand(1);

  std::string model;
  std::string out;

  auto* inspect = app.add_subcommand("inspect", "Print layers, stages and FLOPs of a model");
  inspect->add_option("model", model, "Model manifest")->required();

  PlanArgs plan_args;
  std::string plan_out;
  auto* plan = app.add_subcommand("plan", "Derive per-layer ranks from a schedule");
  plan->add_option("--model", model, "Model manifest")->required();
  plan_args.add_to(plan, false);
  plan->add_option("-o,--out", plan_out, "Write the plan JSON here");

  PlanArgs compress_plan;
  CalibArgs compress_calib;
  std::optional<double> ridge;
  bool no_reconstruct = false;
  bool no_intercept = false;
  bool symmetric = false;
  auto* compress = app.add_subcommand("compress", "Decompose, reconstruct and save a model");
  compress->add_option("--model", model, "Model manifest")->required();
  compress_plan.add_to(compress, true);
  compress_calib.add_to(compress);
  compress->add_option("--ridge", ridge, "Ridge strength for the response fit");
  compress->add_flag("--no-reconstruct", no_reconstruct, "Skip the response regression");
  compress->add_flag("--no-intercept", no_intercept, "Fit A without a bias correction");
  compress->add_flag("--symmetric", symmetric, "Feed layers original activations when fitting");
  compress->add_option("--out", out, "Output directory")->required();

  std::string compressed_model;
  CalibArgs analyze_calib;
  bool correlation = false;
  bool pre_activation = false;
  bool sigma_mode = false;
  bool synthetic_calib = false;
  auto* analyze = app.add_subcommand("analyze", "Energy curves, rank report and filter correlation");
  analyze->add_option("--model", model, "Original model manifest")->required();
  analyze->add_option("--compressed", compressed_model, "Compressed model manifest");
  analyze_calib.add_to(analyze);
  analyze->add_flag("--synthetic-calib", synthetic_calib,
                    "Use synthetic calibration inputs when --calib is absent");
  analyze->add_flag("--correlation", correlation, "Compute pointwise/group filter correlation");
  analyze->add_flag("--pre-activation", pre_activation,
                    "Correlate the pointwise output before the activation");
  analyze->add_flag("--energy-sigma-mode", sigma_mode, "Report saturation on cumulative sigma, not sigma^2");
  analyze->add_option("--out", out, "Output directory")->required();

  std::uint64_t fixture_seed = 0;
  std::size_t calib_count = 64;
  auto* gen = app.add_subcommand("gen-fixtures", "Write toy and reference models plus calibration data");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", fixture_seed, "Weight and calibration seed");
  gen->add_option("--calib-samples", calib_count, "Calibration samples for the toy models");

  CLI11_PARSE(app, argc, argv);

  if (inspect->parsed()) {
    const NetworkSpec net = load_model(model, LoadOptions{.load_weights = false});
    std::cout << format_inspect_table(net);
    return kOk;
  }

  if (plan->parsed()) {
    const NetworkSpec net = load_model(model, LoadOptions{.load_weights = false});
    const CompressionPlan p = build_plan(net, plan_args.options());
    print_plan(net, p);
    if (!plan_out.empty()) save_plan(p, plan_out);
    return kOk;
  }

  if (compress->parsed()) {
    const NetworkSpec net = load_model(model);
    CompressConfig config;
    if (!compress_plan.plan_file.empty()) {
      config.plan = load_plan(compress_plan.plan_file);
    } else {
      config.plan_options = compress_plan.options();
    }
    config.decompose.force_1x1 =
        compress_plan.force_1x1 || (config.plan ? false : config.plan_options.force_1x1);
    config.reconstruct = !no_reconstruct;
    config.reconstruction.ridge = ridge;
    config.reconstruction.intercept = !no_intercept;
    config.responses.symmetric = symmetric;
    std::optional<CalibrationSet> calib;
    if (config.reconstruct) calib = compress_calib.load(net.input_shape);
    const CompressResult result = compress_network(net, config, calib ? &*calib : nullptr);
    write_compress_outputs(result, out);
    std::printf("compressed %zu layers: flops %llu -> %llu\n", result.plan.layers.size(),
                static_cast<unsigned long long>(result.report.at("flops_before").get<std::uint64_t>()),
                static_cast<unsigned long long>(result.report.at("flops_after").get<std::uint64_t>()));
    return kOk;
  }

  if (analyze->parsed()) {
    const NetworkSpec net = load_model(model);
    std::optional<NetworkSpec> comp;
    if (!compressed_model.empty()) comp = load_model(compressed_model);
    std::optional<CalibrationSet> calib;
    if (!analyze_calib.file.empty()) {
      calib = load_calibration(analyze_calib.file);
    } else if (synthetic_calib) {
      calib = synthetic_calibration(net.input_shape, analyze_calib.samples, analyze_calib.seed);
    }
    AnalyzeConfig config;
    config.correlation = correlation;
    config.pre_activation = pre_activation;
    config.energy_mode = sigma_mode ? EnergyMode::linear : EnergyMode::squared;
    const auto summary =
        analyze_networks(net, comp ? &*comp : nullptr, calib ? &*calib : nullptr, config, out);
    std::printf("analyzed %zu layers into %s\n", summary.at("layers").size(), out.c_str());
    return kOk;
  }

  if (gen->parsed()) {
    const fs::path dir(out);
    fs::create_directories(dir);
    NetworkSpec toy = make_toy_cnn();
    toy.name = "toy4";
    initialize_weights(toy, fixture_seed);
    save_model(toy, dir / "toy4.json");

    ToyCnnOptions linear;
    linear.relu = false;
    NetworkSpec toy_linear = make_toy_cnn(linear);
    toy_linear.name = "toy4_linear";
    initialize_weights(toy_linear, fixture_seed + 1);
    save_model(toy_linear, dir / "toy4_linear.json");

    ToyCnnOptions small;
    small.input = Shape3{8, 8, 8};
    small.channels = {8, 8, 8};
    small.strides = {1, 1, 1};
    NetworkSpec toy3 = make_toy_cnn(small);
    toy3.name = "toy3";
    initialize_weights(toy3, fixture_seed + 2);
    save_model(toy3, dir / "toy3.json");

    save_calibration(synthetic_calibration(toy.input_shape, calib_count, fixture_seed),
                     dir / "toy_calib.json");
    save_model_architecture(make_resnet34(), dir / "resnet34.json", fixture_seed);
    save_model_architecture(make_vgg16(), dir / "vgg16.json", fixture_seed);
    std::printf("wrote fixtures to %s\n", dir.string().c_str());
    return kOk;
  }
  return kOther;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kFormat;
  } catch (const PlanError& e) {
    std::cerr << "plan error: " << e.what() << "\n";
    return kPlan;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kShape;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
