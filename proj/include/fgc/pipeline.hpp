#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "fgc/degeneracy.hpp"
#include "fgc/model.hpp"
#include "fgc/reconstructor.hpp"
#include "fgc/scheduler.hpp"

namespace fgc {

// Layer table with stages, shapes and FLOPs, followed by the network total.
std::string format_inspect_table(const NetworkSpec& net);

struct CompressConfig {
  // Explicit plan; when unset one is built from plan_options.
  std::optional<CompressionPlan> plan;
  PlanOptions plan_options;
  bool reconstruct = true;
  ReconstructionOptions reconstruction;
  ResponseOptions responses;
  DecomposeOptions decompose;
};

struct CompressResult {
  NetworkSpec compressed;
  CompressionPlan plan;
  nlohmann::json report;  // {"layers": [...], totals}
};

// Plan -> decompose -> (optional) front-to-back reconstruction. `calib` is
// required when reconstruction is enabled. Errors carry the layer and stage.
CompressResult compress_network(const NetworkSpec& net, const CompressConfig& config,
                                const CalibrationSet* calib);

// Writes model.json/model.bin, plan.json, report.json and reports/<layer>.json.
void write_compress_outputs(const CompressResult& result, const std::filesystem::path& out_dir);

struct AnalyzeConfig {
  EnergyMode energy_mode = EnergyMode::squared;
  bool correlation = false;
  // Correlate the pointwise output itself rather than the activation feeding the group conv.
  bool pre_activation = false;
};

// Writes energy curves, rank_report.csv, correlation matrices and
// summary.json into out_dir, and returns the summary.
nlohmann::json analyze_networks(const NetworkSpec& original, const NetworkSpec* compressed,
                                const CalibrationSet* calib, const AnalyzeConfig& config,
                                const std::filesystem::path& out_dir);

}  // namespace fgc
