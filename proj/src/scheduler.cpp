#include "fgc/scheduler.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>

#include "fgc/error.hpp"
#include "fgc/flops.hpp"

namespace fgc {

using nlohmann::json;

std::string_view to_string(ScheduleDegree d) {
  switch (d) {
    case ScheduleDegree::constant: return "constant";
    case ScheduleDegree::half: return "half";
    case ScheduleDegree::quarter: return "quarter";
  }
  return "unknown";
}

ScheduleDegree schedule_degree_from_string(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (auto d : {ScheduleDegree::constant, ScheduleDegree::half, ScheduleDegree::quarter}) {
    if (to_string(d) == lower) return d;
  }
  throw PlanError("unknown schedule degree '" + std::string(name) +
                  "' (expected constant, half or quarter)");
}

std::size_t degree_ratio(ScheduleDegree d) {
  switch (d) {
    case ScheduleDegree::constant: return 1;
    case ScheduleDegree::half: return 2;
    case ScheduleDegree::quarter: return 4;
  }
  return 1;
}

const PlannedLayer* CompressionPlan::find(std::string_view id) const {
  for (const auto& l : layers) {
    if (l.id == id) return &l;
  }
  return nullptr;
}

std::size_t clamp_to_divisor(std::size_t c_in, std::size_t target) {
  std::size_t n = std::clamp<std::size_t>(target, 1, c_in);
  while (c_in % n != 0) --n;
  return n;
}

CompressionPlan build_plan(const NetworkSpec& net, const PlanOptions& options) {
  if (options.base_n == 0) throw PlanError("base_n must be at least 1");
  infer_shapes(net);

  CompressionPlan plan;
  plan.network = net.name;
  plan.degree = options.degree;
  plan.base_n = options.base_n;

  struct Candidate {
    std::size_t index;
    std::string stage;
  };
  std::vector<Candidate> candidates;
  bool stem_seen = false;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    if (l.kind != LayerKind::conv) continue;
    const ConvShape& s = l.conv().shape;
    const bool is_stem = !stem_seen;
    stem_seen = true;
    std::string reason;
    if (is_stem && options.skip_stem) {
      reason = "stem convolution";
    } else if (std::find(options.skip_layers.begin(), options.skip_layers.end(), l.id) !=
               options.skip_layers.end()) {
      reason = "listed in skip_layers";
    } else if (s.groups != 1) {
      reason = "already grouped";
    } else if (l.conv().provenance) {
      reason = "already decomposed";
    } else if (s.k == 1 && !options.force_1x1) {
      reason = "1x1 convolution";
    }
    if (!reason.empty()) {
      plan.skipped.push_back({l.id, reason});
      continue;
    }
    candidates.push_back({i, l.stage});
  }

  for (const auto& c : candidates) {
    const bool known = std::any_of(plan.stages.begin(), plan.stages.end(),
                                   [&](const PlannedStage& s) { return s.stage == c.stage; });
    if (!known) plan.stages.push_back({c.stage, false, 0});
  }
  if (options.stage_caps.size() > plan.stages.size()) {
    plan.adjustments.push_back("stage_caps has " + std::to_string(options.stage_caps.size()) +
                               " entries but the network has " +
                               std::to_string(plan.stages.size()) +
                               " compressible stages; extra entries ignored");
  }
  std::optional<std::size_t> first_compressed;
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    if (s < options.stage_caps.size() && options.stage_caps[s].skip) {
      plan.stages[s].skip = true;
    } else if (!first_compressed) {
      first_compressed = s;
    }
  }
  const std::size_t ratio = degree_ratio(options.degree);
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    if (plan.stages[s].skip || !first_compressed) continue;
    std::size_t target = options.base_n;
    for (std::size_t e = *first_compressed; e < s; ++e) target *= ratio;
    plan.stages[s].target_n = target;
  }

  for (const auto& c : candidates) {
    const LayerSpec& l = net.layers[c.index];
    const auto it = std::find_if(plan.stages.begin(), plan.stages.end(),
                                 [&](const PlannedStage& s) { return s.stage == c.stage; });
    const auto stage_index = static_cast<std::size_t>(it - plan.stages.begin());
    if (it->skip) {
      plan.skipped.push_back({l.id, "stage " + c.stage + " skipped"});
      continue;
    }
    const std::size_t c_in = l.conv().shape.c_in;
    std::size_t wanted = it->target_n;
    if (stage_index < options.stage_caps.size() && options.stage_caps[stage_index].max_n) {
      wanted = std::min(wanted, *options.stage_caps[stage_index].max_n);
    }
    const std::size_t n = clamp_to_divisor(c_in, wanted);
    if (n != it->target_n) {
      plan.adjustments.push_back(l.id + ": n " + std::to_string(it->target_n) + " -> " +
                                 std::to_string(n) + " (c_in=" + std::to_string(c_in) + ")");
    }
    plan.layers.push_back({l.id, c.stage, stage_index, it->target_n, n});
  }
  // Skipped entries were appended in two passes; report them in network order.
  std::stable_sort(plan.skipped.begin(), plan.skipped.end(),
                   [&](const SkippedLayer& a, const SkippedLayer& b) {
                     return net.index_of(a.id) < net.index_of(b.id);
                   });
  plan.predicted_flops = predict_flops(net, plan);
  return plan;
}

std::uint64_t predict_flops(const NetworkSpec& net, const CompressionPlan& plan) {
  const ShapeTrace trace = infer_shapes(net);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    const Shape3& out = trace.outputs[i];
    if (l.kind == LayerKind::fc) {
      total += flops_of_fc(l.fc().in_features, l.fc().out_features);
    } else if (l.kind == LayerKind::conv) {
      const ConvShape& s = l.conv().shape;
      if (const PlannedLayer* p = plan.find(l.id)) {
        total += flops_of_layer(group_conv_shape(s, p->n), out.height, out.width) +
                 flops_of_layer(pointwise_conv_shape(s), out.height, out.width);
      } else {
        total += flops_of_layer(s, out.height, out.width);
      }
    }
  }
  return total;
}

void save_plan(const CompressionPlan& plan, const std::filesystem::path& path) {
  json stages = json::array();
  for (const auto& s : plan.stages) {
    stages.push_back({{"stage", s.stage}, {"skip", s.skip}, {"target_n", s.target_n}});
  }
  json layers = json::array();
  for (const auto& l : plan.layers) {
    layers.push_back({{"id", l.id},
                      {"stage", l.stage},
                      {"stage_index", l.stage_index},
                      {"target_n", l.target_n},
                      {"n", l.n}});
  }
  json skipped = json::array();
  for (const auto& s : plan.skipped) skipped.push_back({{"id", s.id}, {"reason", s.reason}});
  const json doc = {{"format_version", 1},
                    {"network", plan.network},
                    {"degree", std::string(to_string(plan.degree))},
                    {"base_n", plan.base_n},
                    {"stages", stages},
                    {"layers", layers},
                    {"skip", skipped},
                    {"adjustments", plan.adjustments},
                    {"predicted_flops", plan.predicted_flops}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write plan " + path.string());
  out << doc.dump(2) << "\n";
}

namespace {

json read_json(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw FormatError(std::string("cannot open ") + what + " " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string(what) + " " + path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace

CompressionPlan load_plan(const std::filesystem::path& path) {
  const json doc = read_json(path, "plan");
  try {
    CompressionPlan plan;
    plan.network = doc.value("network", "");
    plan.degree = schedule_degree_from_string(doc.at("degree").get<std::string>());
    plan.base_n = doc.at("base_n").get<std::size_t>();
    for (const auto& s : doc.value("stages", json::array())) {
      plan.stages.push_back({s.at("stage").get<std::string>(), s.value("skip", false),
                             s.value("target_n", std::size_t{0})});
    }
    for (const auto& l : doc.at("layers")) {
      const std::size_t n = l.at("n").get<std::size_t>();
      plan.layers.push_back({l.at("id").get<std::string>(), l.value("stage", ""),
                             l.value("stage_index", std::size_t{0}), l.value("target_n", n), n});
    }
    for (const auto& s : doc.value("skip", json::array())) {
      plan.skipped.push_back({s.at("id").get<std::string>(), s.value("reason", "")});
    }
    plan.adjustments = doc.value("adjustments", std::vector<std::string>{});
    plan.predicted_flops = doc.value("predicted_flops", std::uint64_t{0});
    return plan;
  } catch (const json::exception& e) {
    throw FormatError("plan " + path.string() + ": " + e.what());
  }
}

Preset load_preset(const std::filesystem::path& path) {
  const json doc = read_json(path, "preset");
  try {
    Preset p;
    p.name = doc.at("name").get<std::string>();
    p.network = doc.value("network", "");
    p.note = doc.value("note", "");
    p.options.degree = schedule_degree_from_string(doc.at("degree").get<std::string>());
    p.options.base_n = doc.at("base_n").get<std::size_t>();
    for (const auto& cap : doc.value("stage_caps", json::array())) {
      StageCap c;
      if (cap.is_string()) {
        if (cap.get<std::string>() != "-") {
          throw FormatError("preset " + path.string() + ": stage cap strings must be \"-\"");
        }
        c.skip = true;
      } else if (cap.is_number_integer()) {
        c.max_n = cap.get<std::size_t>();
      } else if (!cap.is_null()) {
        throw FormatError("preset " + path.string() + ": invalid stage cap " + cap.dump());
      }
      p.options.stage_caps.push_back(c);
    }
    return p;
  } catch (const json::exception& e) {
    throw FormatError("preset " + path.string() + ": " + e.what());
  }
}

}  // namespace fgc
