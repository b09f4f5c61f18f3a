#include "fgc/reconstructor.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>

#include "fgc/error.hpp"
#include "fgc/forward.hpp"
#include "fgc/linalg.hpp"
#include "fgc/model_io.hpp"

namespace fgc {

using nlohmann::json;

CalibrationSet synthetic_calibration(const Shape3& shape, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw PlanError("calibration sample count must be positive");
  CalibrationSet calib;
  calib.source = "synthetic";
  calib.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  calib.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    FeatureMap fm(shape);
    for (double& v : fm.data()) v = normal(rng);
    calib.samples.push_back(std::move(fm));
  }
  return calib;
}

CalibrationSet load_calibration(const std::filesystem::path& header) {
  std::ifstream in(header);
  if (!in) throw FormatError("cannot open calibration header " + header.string());
  try {
    const json doc = json::parse(in);
    if (doc.at("format_version").get<int>() != 1) {
      throw FormatError("calibration " + header.string() + ": unsupported format_version");
    }
    const std::size_t count = doc.at("count").get<std::size_t>();
    const auto dims = doc.at("shape").get<std::vector<std::size_t>>();
    if (dims.size() != 3 || dims[0] == 0 || dims[1] == 0 || dims[2] == 0 || count == 0) {
      throw FormatError("calibration " + header.string() + ": invalid count or shape");
    }
    const Shape3 shape{dims[0], dims[1], dims[2]};
    const auto values =
        read_f32_blob(header.parent_path() / doc.at("data_file").get<std::string>());
    if (values.size() != count * shape.elements()) {
      throw FormatError("calibration " + header.string() + ": blob holds " +
                        std::to_string(values.size()) + " floats, expected " +
                        std::to_string(count * shape.elements()));
    }
    CalibrationSet calib;
    calib.source = header.string();
    for (std::size_t i = 0; i < count; ++i) {
      const auto begin = values.begin() + static_cast<std::ptrdiff_t>(i * shape.elements());
      calib.samples.emplace_back(
          shape, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(shape.elements())));
    }
    return calib;
  } catch (const json::exception& e) {
    throw FormatError("calibration " + header.string() + ": " + e.what());
  }
}

void save_calibration(const CalibrationSet& calib, const std::filesystem::path& header) {
  if (calib.samples.empty()) throw FormatError("cannot save an empty calibration set");
  const Shape3 shape = calib.samples.front().shape();
  std::vector<float> values;
  values.reserve(calib.samples.size() * shape.elements());
  for (const auto& s : calib.samples) {
    if (!(s.shape() == shape)) throw ShapeError("calibration samples differ in shape");
    for (double v : s.data()) values.push_back(static_cast<float>(v));
  }
  auto blob = header;
  blob.replace_extension(".bin");
  write_f32_blob(blob, values);
  const json doc = {{"format_version", 1},
                    {"count", calib.samples.size()},
                    {"shape", {shape.channels, shape.height, shape.width}},
                    {"data_file", blob.filename().string()}};
  std::ofstream out(header, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + header.string());
  out << doc.dump(2) << "\n";
}

namespace {

const LayerSpec& decomposed_pointwise(const NetworkSpec& compressed, const std::string& layer_id) {
  const LayerSpec* p = compressed.find(pointwise_layer_id(layer_id));
  if (!p || p->kind != LayerKind::conv || !p->conv().provenance ||
      p->conv().provenance->source_layer != layer_id) {
    throw PlanError("layer '" + layer_id + "' is not decomposed in the compressed network");
  }
  return *p;
}

}  // namespace

ResponsePair collect_responses(const NetworkSpec& original, const NetworkSpec& compressed,
                               const CalibrationSet& calib, const std::string& layer_id,
                               const ResponseOptions& options) {
  const LayerSpec* layer = original.find(layer_id);
  if (!layer || layer->kind != LayerKind::conv) {
    throw PlanError("layer '" + layer_id + "' is not a convolution of the original network");
  }
  const LayerSpec& p_layer = decomposed_pointwise(compressed, layer_id);
  const LayerSpec& d_layer = compressed.layers.at(compressed.index_of(group_layer_id(layer_id)));
  if (!(original.input_shape == compressed.input_shape)) {
    throw ShapeError("original and compressed networks have different input shapes");
  }
  if (calib.samples.empty()) throw PlanError("calibration set is empty");

  std::vector<Matrix> ys;
  std::vector<Matrix> ystars;
  ys.reserve(calib.samples.size());
  ystars.reserve(calib.samples.size());
  TapRequest orig_taps;
  orig_taps.outputs.insert(layer_id);
  if (options.symmetric) orig_taps.inputs.insert(layer_id);
  orig_taps.stop_after = layer_id;
  TapRequest comp_taps;
  comp_taps.stop_after = p_layer.id;

  for (const auto& sample : calib.samples) {
    ForwardTrace t = forward(original, sample, orig_taps);
    ys.push_back(to_response_rows(t.output));
    if (options.symmetric) {
      const FeatureMap hidden = conv_forward(d_layer.conv(), t.inputs.at(layer_id));
      ystars.push_back(to_response_rows(conv_forward(p_layer.conv(), hidden)));
    } else {
      ystars.push_back(to_response_rows(forward(compressed, sample, comp_taps).output));
    }
  }
  return ResponsePair{vstack(ys), vstack(ystars)};
}

double default_ridge(const Matrix& approximated) {
  double trace = 0.0;
  for (double v : approximated.data()) trace += v * v;
  return 1e-6 * trace / static_cast<double>(approximated.cols());
}

ReconstructionResult solve_reconstruction(const Matrix& original, const Matrix& approximated,
                                          const ReconstructionOptions& options) {
  if (original.rows() != approximated.rows() || original.cols() != approximated.cols()) {
    throw ShapeError("response matrices must be row-aligned with equal channel counts");
  }
  const std::size_t rows = original.rows();
  const std::size_t c = original.cols();
  const std::size_t unknowns = c + (options.intercept ? 1 : 0);
  if (rows < unknowns) {
    throw NumericalError("reconstruction has " + std::to_string(rows) + " response rows for " +
                         std::to_string(unknowns) +
                         " unknowns per channel; use more calibration samples");
  }

  ReconstructionResult res{Matrix::identity(c), std::vector<double>(c, 0.0)};
  res.sample_rows = rows;
  res.ridge = options.ridge.value_or(default_ridge(approximated));
  if (res.ridge < 0.0) throw NumericalError("ridge must be nonnegative");
  if (rows < 10 * c) {
    res.warnings.push_back("only " + std::to_string(rows) + " response rows for " +
                           std::to_string(c) + " channels (recommended >= " +
                           std::to_string(10 * c) + ")");
  }
  res.residual_before = frobenius_norm(original - approximated);

  std::vector<double> mean_y(c, 0.0);
  std::vector<double> mean_ys(c, 0.0);
  Matrix design = approximated;
  Matrix target = original;
  if (options.intercept) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        mean_y[j] += original(r, j);
        mean_ys[j] += approximated(r, j);
      }
    }
    for (std::size_t j = 0; j < c; ++j) {
      mean_y[j] /= static_cast<double>(rows);
      mean_ys[j] /= static_cast<double>(rows);
    }
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        design(r, j) -= mean_ys[j];
        target(r, j) -= mean_y[j];
      }
    }
  }

  // A = I + B with B = argmin ||(T - Z) - Z B||^2 + ridge ||B||^2.
  const LeastSquaresSolution sol = solve_least_squares(design, target - design, res.ridge);
  res.rank_deficient = sol.rank_deficient;
  if (sol.rank_deficient) res.warnings.push_back("compressed responses are rank deficient");
  Matrix a = sol.coefficients + Matrix::identity(c);

  std::vector<double> delta(c, 0.0);
  if (options.intercept) {
    for (std::size_t j = 0; j < c; ++j) {
      double s = mean_y[j];
      for (std::size_t i = 0; i < c; ++i) s -= mean_ys[i] * a(i, j);
      delta[j] = s;
    }
  }
  Matrix fitted = matmul(approximated, a);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) fitted(r, j) += delta[j];
  }
  const double after = frobenius_norm(original - fitted);
  if (!(after <= res.residual_before) || !a.all_finite()) {
    res.warnings.push_back("regression did not improve the residual; keeping the identity");
    res.residual_after = res.residual_before;
    return res;
  }
  res.a = std::move(a);
  res.bias_delta = std::move(delta);
  res.residual_after = after;
  return res;
}

namespace {

void merge_pointwise(ConvWeights& p, const Matrix& a, const std::vector<double>& bias_delta) {
  const std::size_t c_out = p.shape.c_out;
  if (a.rows() != c_out || a.cols() != c_out) {
    throw ShapeError("merge matrix must be " + std::to_string(c_out) + "x" +
                     std::to_string(c_out));
  }
  if (!bias_delta.empty() && bias_delta.size() != c_out) {
    throw ShapeError("bias delta must have " + std::to_string(c_out) + " entries");
  }
  const Matrix merged = matmul(pointwise_matrix(p), a);  // c_in x c_out
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t c = 0; c < p.shape.c_in; ++c) p.weights[o * p.shape.c_in + c] = merged(c, o);
  }
  std::vector<double> bias(c_out, 0.0);
  bool any = !p.bias.empty();
  for (std::size_t j = 0; j < c_out; ++j) {
    double s = bias_delta.empty() ? 0.0 : bias_delta[j];
    if (!p.bias.empty()) {
      for (std::size_t i = 0; i < c_out; ++i) s += p.bias[i] * a(i, j);
    }
    bias[j] = s;
    any = any || s != 0.0;
  }
  if (any) p.bias = std::move(bias);
}

}  // namespace

GroupDecomposition merge_into_pointwise(const GroupDecomposition& decomp, const Matrix& a,
                                        const std::vector<double>& bias_delta) {
  GroupDecomposition out = decomp;
  merge_pointwise(out.p_layer, a, bias_delta);
  return out;
}

void merge_into_network(NetworkSpec& compressed, const std::string& layer_id, const Matrix& a,
                        const std::vector<double>& bias_delta) {
  decomposed_pointwise(compressed, layer_id);
  LayerSpec& p = compressed.layers[compressed.index_of(pointwise_layer_id(layer_id))];
  merge_pointwise(p.conv(), a, bias_delta);
}

}  // namespace fgc
