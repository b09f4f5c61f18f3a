#include "fgc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>

#include "fgc/decomposer.hpp"
#include "fgc/error.hpp"
#include "fgc/flops.hpp"
#include "fgc/forward.hpp"
#include "fgc/linalg.hpp"
#include "fgc/model_io.hpp"

namespace fgc {

using nlohmann::json;

namespace {

std::string with_context(const std::string& layer, const char* stage, const std::exception& e) {
  return "layer '" + layer + "' (" + stage + "): " + e.what();
}

// Re-throws `e` as the same error category with layer/stage context.
[[noreturn]] void rethrow_with_context(const std::string& layer, const char* stage,
                                       const std::exception& e) {
  const std::string msg = with_context(layer, stage, e);
  if (dynamic_cast<const NumericalError*>(&e)) throw NumericalError(msg);
  if (dynamic_cast<const PlanError*>(&e)) throw PlanError(msg);
  if (dynamic_cast<const FormatError*>(&e)) throw FormatError(msg);
  if (dynamic_cast<const ShapeError*>(&e)) throw ShapeError(msg);
  throw Error(msg);
}

std::string format_count(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4e", static_cast<double>(v));
  return buf;
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

void validate_plan(const NetworkSpec& net, const CompressionPlan& plan,
                   const DecomposeOptions& options) {
  for (const auto& p : plan.layers) {
    const LayerSpec* l = net.find(p.id);
    if (!l) throw PlanError("plan references unknown layer '" + p.id + "'");
    if (l->kind != LayerKind::conv) throw PlanError("plan layer '" + p.id + "' is not a conv");
    const ConvShape& s = l->conv().shape;
    if (s.groups != 1) throw PlanError("plan layer '" + p.id + "' is a grouped conv");
    if (p.n == 0 || s.c_in % p.n != 0) {
      throw PlanError("plan layer '" + p.id + "': n=" + std::to_string(p.n) +
                      " does not divide c_in=" + std::to_string(s.c_in));
    }
    if (s.k == 1 && !options.force_1x1) {
      throw PlanError("plan layer '" + p.id + "' is 1x1; decomposition needs force_1x1");
    }
  }
}

}  // namespace

std::string format_inspect_table(const NetworkSpec& net) {
  const ShapeTrace trace = infer_shapes(net);
  const auto rows = layer_flops(net);
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-24s %-15s %-10s %-14s %-14s %14s\n", "layer", "kind",
                "stage", "input", "output", "flops");
  os << line;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::snprintf(line, sizeof(line), "%-24s %-15s %-10s %-14s %-14s %14s\n", rows[i].id.c_str(),
                  rows[i].kind.c_str(), rows[i].stage.c_str(),
                  trace.inputs[i].to_string().c_str(), rows[i].output.to_string().c_str(),
                  rows[i].flops ? format_count(rows[i].flops).c_str() : "-");
    os << line;
  }
  const std::uint64_t total = network_flops(net);
  os << "total flops: " << total << " (" << format_count(total) << ")\n";
  return os.str();
}

CompressResult compress_network(const NetworkSpec& net, const CompressConfig& config,
                                const CalibrationSet* calib) {
  CompressResult result;
  result.plan = config.plan ? *config.plan : build_plan(net, config.plan_options);
  validate_plan(net, result.plan, config.decompose);
  if (config.reconstruct && !result.plan.layers.empty() && !calib) {
    throw PlanError("reconstruction requires a calibration set");
  }
  if (!net.materialized()) throw PlanError("network '" + net.name + "' has no weights loaded");

  const ShapeTrace trace = infer_shapes(net);
  std::vector<std::future<GroupDecomposition>> jobs;
  jobs.reserve(result.plan.layers.size());
  for (const auto& p : result.plan.layers) {
    const ConvWeights& w = net.layers[net.index_of(p.id)].conv();
    jobs.push_back(std::async(std::launch::async, [&w, &p, &config] {
      return decompose_layer(w, p.n, config.decompose, p.id);
    }));
  }

  NetworkSpec compressed = net;
  json layer_reports = json::array();
  for (std::size_t j = 0; j < result.plan.layers.size(); ++j) {
    const PlannedLayer& p = result.plan.layers[j];
    GroupDecomposition decomp;
    try {
      decomp = jobs[j].get();
    } catch (const std::exception& e) {
      rethrow_with_context(p.id, "decompose", e);
    }
    const std::size_t idx = net.index_of(p.id);
    const ConvWeights& w = net.layers[idx].conv();
    const Shape3& out = trace.outputs[idx];
    double w_norm = 0.0;
    for (double v : w.weights) w_norm += v * v;
    w_norm = std::sqrt(w_norm);
    json entry = {
        {"layer", p.id},
        {"stage", p.stage},
        {"n", p.n},
        {"c_in", w.shape.c_in},
        {"c_out", w.shape.c_out},
        {"k", w.shape.k},
        {"truncation_error", decomp.truncation_error},
        {"relative_truncation_error", w_norm > 0.0 ? decomp.truncation_error / w_norm : 0.0},
        {"block_truncation_errors", decomp.block_truncation_error},
        {"flops_before", flops_of_layer(w.shape, out.height, out.width)},
        {"flops_after", flops_of_layer(decomp.d_layer.shape, out.height, out.width) +
                            flops_of_layer(decomp.p_layer.shape, out.height, out.width)},
        {"flops_ratio", flops_ratio_decomposed(w.shape.c_in, w.shape.c_out, w.shape.k, p.n)}};
    layer_reports.push_back(std::move(entry));
    try {
      compressed = replace_with_decomposition(compressed, p.id, decomp);
    } catch (const std::exception& e) {
      rethrow_with_context(p.id, "assemble", e);
    }
  }

  // Front-to-back: every earlier layer is already merged when a layer is fitted.
  if (config.reconstruct) {
    for (std::size_t j = 0; j < result.plan.layers.size(); ++j) {
      const std::string& id = result.plan.layers[j].id;
      try {
        const ResponsePair resp = collect_responses(net, compressed, *calib, id, config.responses);
        const ReconstructionResult rec =
            solve_reconstruction(resp.original, resp.approximated, config.reconstruction);
        merge_into_network(compressed, id, rec.a, rec.bias_delta);
        layer_reports[j]["reconstruction"] = {
            {"residual_before", rec.residual_before},
            {"residual_after", rec.residual_after},
            {"ridge", rec.ridge},
            {"sample_rows", rec.sample_rows},
            {"calibration_samples", calib->samples.size()},
            {"intercept", config.reconstruction.intercept},
            {"symmetric", config.responses.symmetric},
            {"rank_deficient", rec.rank_deficient},
            {"warnings", rec.warnings}};
      } catch (const std::exception& e) {
        rethrow_with_context(id, "reconstruct", e);
      }
    }
  }

  const std::uint64_t after = network_flops(compressed);
  result.report = {{"network", net.name},
                   {"degree", std::string(to_string(result.plan.degree))},
                   {"base_n", result.plan.base_n},
                   {"flops_before", network_flops(net)},
                   {"flops_after", after},
                   {"predicted_flops", predict_flops(net, result.plan)},
                   {"reconstructed", config.reconstruct},
                   {"calibration",
                    calib ? json{{"source", calib->source},
                                 {"seed", calib->seed},
                                 {"samples", calib->samples.size()}}
                          : json(nullptr)},
                   {"skipped", json::array()},
                   {"layers", std::move(layer_reports)}};
  for (const auto& s : result.plan.skipped) {
    result.report["skipped"].push_back({{"layer", s.id}, {"reason", s.reason}});
  }
  result.compressed = std::move(compressed);
  return result;
}

void write_compress_outputs(const CompressResult& result, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "reports");
  save_model(result.compressed, out_dir / "model.json");
  save_plan(result.plan, out_dir / "plan.json");
  write_json(out_dir / "report.json", result.report);
  for (const auto& layer : result.report.at("layers")) {
    write_json(out_dir / "reports" / (layer.at("layer").get<std::string>() + ".json"), layer);
  }
}

namespace {

// Walks back from the group conv's input through elementwise layers to the
// pointwise conv feeding it. Returns its index or npos.
std::size_t feeding_pointwise(const NetworkSpec& net, std::size_t group_index) {
  std::size_t idx = resolve_input(net, group_index);
  while (idx != kFromInput) {
    const LayerSpec& l = net.layers[idx];
    if (l.kind == LayerKind::relu || l.kind == LayerKind::channel_affine) {
      idx = resolve_input(net, idx);
      continue;
    }
    if (l.kind == LayerKind::conv && l.conv().provenance &&
        l.conv().provenance->role == "pointwise") {
      return idx;
    }
    return kFromInput;
  }
  return kFromInput;
}

}  // namespace

json analyze_networks(const NetworkSpec& original, const NetworkSpec* compressed,
                      const CalibrationSet* calib, const AnalyzeConfig& config,
                      const std::filesystem::path& out_dir) {
  if (config.correlation && !calib) {
    throw PlanError("correlation analysis requires calibration data (--calib or --calib-samples)");
  }
  if (config.correlation && !compressed) {
    throw PlanError("correlation analysis requires a compressed model");
  }
  std::filesystem::create_directories(out_dir);
  json summary = {{"network", original.name},
                  {"energy_mode",
                   config.energy_mode == EnergyMode::squared ? "sigma_squared" : "sigma"},
                  {"layers", json::array()}};
  std::ofstream ranks(out_dir / "rank_report.csv", std::ios::trunc);
  if (!ranks) throw FormatError("cannot write rank_report.csv");
  ranks << "layer,strategy,c_in,c_out,k,n,width,rank_analytic,rank_numerical,flops_ratio\n";

  if (!compressed) {
    for (const auto& l : original.layers) {
      if (l.kind != LayerKind::conv || !l.conv().materialized()) continue;
      const EnergyCurve curve = jacobian_energy_curve(weight_matrix(l.conv()));
      write_energy_csv(out_dir / ("energy_" + l.id + "_original.csv"), curve);
      summary["layers"].push_back(
          {{"layer", l.id},
           {"original_saturation_index", curve.saturation_index(config.energy_mode)}});
    }
    write_json(out_dir / "summary.json", summary);
    return summary;
  }

  // One task per decomposed layer; each writes only its own files.
  auto analyze_layer = [&](std::size_t gi) -> std::pair<json, std::string> {
    const LayerSpec& g = compressed->layers[gi];
    std::ostringstream ranks;
    const std::string& src = g.conv().provenance->source_layer;
    const LayerSpec* orig = original.find(src);
    if (!orig || orig->kind != LayerKind::conv) {
      throw PlanError("compressed layer '" + g.id + "' names unknown source '" + src + "'");
    }
    const LayerSpec& p = compressed->layers.at(compressed->index_of(pointwise_layer_id(src)));
    const ConvShape& s = orig->conv().shape;
    const std::size_t n = g.conv().provenance->n;

    const Matrix w = weight_matrix(orig->conv());
    const Matrix dp = matmul(assemble_group_matrix(g.conv()), pointwise_matrix(p.conv()));
    const StrategyRankReport rep = equal_flops_ranks(s.c_in, s.c_out, s.k, n);
    const EnergyCurve e_orig = jacobian_energy_curve(w);
    const EnergyCurve e_group = jacobian_energy_curve(dp);
    const EnergyCurve e_svd = jacobian_energy_curve(svd_strategy_product(w, rep.rank_svd));
    write_energy_csv(out_dir / ("energy_" + src + "_original.csv"), e_orig);
    write_energy_csv(out_dir / ("energy_" + src + "_group.csv"), e_group);
    write_energy_csv(out_dir / ("energy_" + src + "_svd.csv"), e_svd);

    const double rank_tol = 1e-8;
    const std::size_t num_group = numerical_rank(e_group.singular_values, rank_tol);
    const std::size_t num_svd = numerical_rank(e_svd.singular_values, rank_tol);
    auto row = [&](const char* strategy, double width, std::size_t analytic, std::string numerical) {
      ranks << src << ',' << strategy << ',' << s.c_in << ',' << s.c_out << ',' << s.k << ','
            << n << ',' << width << ',' << analytic << ',' << numerical << ','
            << rep.flops_ratio << '\n';
    };
    row("svd", rep.c_d, rep.rank_svd, std::to_string(num_svd));
    row("spatial", rep.c_d_prime_k, rep.rank_spatial, "");
    row("group", static_cast<double>(n), rep.rank_group, std::to_string(num_group));

    json entry = {{"layer", src},
                  {"n", n},
                  {"c_d", rep.c_d},
                  {"c_d_prime_k", rep.c_d_prime_k},
                  {"rank_svd", rep.rank_svd},
                  {"rank_spatial", rep.rank_spatial},
                  {"rank_group", rep.rank_group},
                  {"numerical_rank_svd", num_svd},
                  {"numerical_rank_group", num_group},
                  {"typical_regime", rep.typical_regime},
                  {"saturation_index",
                   {{"original", e_orig.saturation_index(config.energy_mode)},
                    {"svd", e_svd.saturation_index(config.energy_mode)},
                    {"group", e_group.saturation_index(config.energy_mode)}}}};

    if (config.correlation) {
      const std::size_t pw = feeding_pointwise(*compressed, gi);
      if (pw == kFromInput) {
        entry["correlation"] = nullptr;
      } else {
        const LayerSpec& pw_layer = compressed->layers[pw];
        TapRequest taps;
        taps.inputs.insert(g.id);
        taps.outputs.insert(g.id);
        if (config.pre_activation) taps.outputs.insert(pw_layer.id);
        taps.stop_after = g.id;
        CorrelationAccumulator acc(pw_layer.conv().shape.c_out, g.conv().shape.c_out);
        for (const auto& sample : calib->samples) {
          const ForwardTrace t = forward(*compressed, sample, taps);
          const FeatureMap& pmap =
              config.pre_activation ? t.outputs.at(pw_layer.id) : t.inputs.at(g.id);
          const FeatureMap& gmap = t.outputs.at(g.id);
          if (pmap.height() != gmap.height() || pmap.width() != gmap.width()) {
            // Strided group convs change resolution; correlate the top-left aligned grid.
            Matrix prow(gmap.height() * gmap.width(), pmap.channels());
            const std::size_t sy = pmap.height() / gmap.height();
            const std::size_t sx = pmap.width() / gmap.width();
            for (std::size_t y = 0; y < gmap.height(); ++y) {
              for (std::size_t x = 0; x < gmap.width(); ++x) {
                for (std::size_t c = 0; c < pmap.channels(); ++c) {
                  prow(y * gmap.width() + x, c) = pmap.at(c, y * sy, x * sx);
                }
              }
            }
            acc.add(prow, to_response_rows(gmap));
          } else {
            acc.add(to_response_rows(pmap), to_response_rows(gmap));
          }
        }
        const CorrelationReport corr = acc.finish(g.conv().shape.groups);
        write_matrix_csv(out_dir / ("correlation_" + src + ".csv"), corr.correlation);
        entry["correlation"] = {{"pointwise_layer", pw_layer.id},
                                {"groups", corr.groups},
                                {"samples", corr.samples},
                                {"mean_in_block", corr.mean_in_block},
                                {"mean_out_of_block", corr.mean_out_of_block},
                                {"zero_variance_entries", corr.zero_variance.size()}};
      }
    }
    return {std::move(entry), ranks.str()};
  };

  std::vector<std::future<std::pair<json, std::string>>> jobs;
  for (std::size_t gi = 0; gi < compressed->layers.size(); ++gi) {
    const LayerSpec& g = compressed->layers[gi];
    if (g.kind != LayerKind::conv || !g.conv().provenance || g.conv().provenance->role != "group") {
      continue;
    }
    jobs.push_back(std::async(std::launch::async, analyze_layer, gi));
  }
  for (auto& job : jobs) {
    auto [entry, rows] = job.get();
    ranks << rows;
    summary["layers"].push_back(std::move(entry));
  }
  write_json(out_dir / "summary.json", summary);
  return summary;
}

}  // namespace fgc
