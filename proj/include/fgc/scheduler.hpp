#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fgc/model.hpp"

namespace fgc {

// Ratio of n between adjacent stages: 1:1, 1:2 or 1:4 (shallow : deep).
enum class ScheduleDegree { constant, half, quarter };

std::string_view to_string(ScheduleDegree d);
ScheduleDegree schedule_degree_from_string(std::string_view name);
std::size_t degree_ratio(ScheduleDegree d);

// Per-stage override, indexed by stage order among compressible stages.
struct StageCap {
  bool skip = false;
  std::optional<std::size_t> max_n;
  friend bool operator==(const StageCap&, const StageCap&) = default;
};

struct PlanOptions {
  ScheduleDegree degree = ScheduleDegree::quarter;
  std::size_t base_n = 1;
  std::vector<StageCap> stage_caps;
  bool force_1x1 = false;
  bool skip_stem = true;  // leave the first conv of the network uncompressed
  std::vector<std::string> skip_layers;
};

struct PlannedLayer {
  std::string id;
  std::string stage;
  std::size_t stage_index = 0;
  std::size_t target_n = 0;  // schedule value before caps and divisor clamping
  std::size_t n = 0;
  friend bool operator==(const PlannedLayer&, const PlannedLayer&) = default;
};

struct SkippedLayer {
  std::string id;
  std::string reason;
  friend bool operator==(const SkippedLayer&, const SkippedLayer&) = default;
};

struct PlannedStage {
  std::string stage;
  bool skip = false;
  std::size_t target_n = 0;
  friend bool operator==(const PlannedStage&, const PlannedStage&) = default;
};

struct CompressionPlan {
  std::string network;
  ScheduleDegree degree = ScheduleDegree::quarter;
  std::size_t base_n = 1;
  std::vector<PlannedStage> stages;
  std::vector<PlannedLayer> layers;  // network order
  std::vector<SkippedLayer> skipped;
  std::vector<std::string> adjustments;
  std::uint64_t predicted_flops = 0;

  const PlannedLayer* find(std::string_view id) const;
};

// Largest divisor of c_in not exceeding target (at least 1).
std::size_t clamp_to_divisor(std::size_t c_in, std::size_t target);

CompressionPlan build_plan(const NetworkSpec& net, const PlanOptions& options);

// FLOPs of the network with every planned layer replaced by its D/P pair,
// computed from shapes alone.
std::uint64_t predict_flops(const NetworkSpec& net, const CompressionPlan& plan);

// Plan file (JSON) round trip.
void save_plan(const CompressionPlan& plan, const std::filesystem::path& path);
CompressionPlan load_plan(const std::filesystem::path& path);

// Named preset: schedule degree, base n and stage caps.
//   {"name": "...", "network": "resnet34", "degree": "quarter", "base_n": 8,
//    "stage_caps": [null, null, null, "-"], "note": "..."}
// A cap entry is null (none), "-" (skip the stage) or an integer upper bound on n.
struct Preset {
  std::string name;
  std::string network;
  PlanOptions options;
  std::string note;
};
Preset load_preset(const std::filesystem::path& path);

}  // namespace fgc
