#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fgc/decomposer.hpp"
#include "fgc/matrix.hpp"
#include "fgc/model.hpp"
#include "fgc/tensor.hpp"

namespace fgc {

// Calibration inputs for the response regression.
struct CalibrationSet {
  std::vector<FeatureMap> samples;
  std::string source;  // "synthetic" or a file path
  std::uint64_t seed = 0;
};

// i.i.d. standard normal inputs from a fixed seed.
CalibrationSet synthetic_calibration(const Shape3& shape, std::size_t count, std::uint64_t seed);

// Calibration file: JSON header
//   {"format_version": 1, "count": N, "shape": [C, H, W], "data_file": "calib.bin"}
// plus a little-endian float32 blob of N*C*H*W values, sample-major.
CalibrationSet load_calibration(const std::filesystem::path& header);
void save_calibration(const CalibrationSet& calib, const std::filesystem::path& header);

struct ResponseOptions {
  // Feed D/P with the original network's activations instead of the
  // compressed prefix (no upstream error compensation).
  bool symmetric = false;
};

// Y (original layer output) and Y* (pointwise output of its decomposition),
// row-aligned: one row per sample and spatial position, one column per channel.
struct ResponsePair {
  Matrix original;
  Matrix approximated;
};

ResponsePair collect_responses(const NetworkSpec& original, const NetworkSpec& compressed,
                               const CalibrationSet& calib, const std::string& layer_id,
                               const ResponseOptions& options = {});

struct ReconstructionOptions {
  // Defaults to 1e-6 * trace(Y*^T Y*) / c_out when unset.
  std::optional<double> ridge;
  bool intercept = true;
};

struct ReconstructionResult {
  Matrix a;                         // c_out x c_out
  std::vector<double> bias_delta;   // c_out entries, zero without intercept
  double ridge = 0.0;
  double residual_before = 0.0;     // ||Y - Y*||_F
  double residual_after = 0.0;      // ||Y - Y* A - 1 delta^T||_F
  std::size_t sample_rows = 0;
  bool rank_deficient = false;
  std::vector<std::string> warnings;
};

double default_ridge(const Matrix& approximated);

// Solves min ||Y - Y* A - 1 delta^T||^2 + ridge ||A - I||^2. The penalty pulls
// toward the identity so the fit never ends worse than leaving P unchanged.
ReconstructionResult solve_reconstruction(const Matrix& original, const Matrix& approximated,
                                          const ReconstructionOptions& options = {});

// P' = P A and bias' = A^T bias + delta; the layer count is unchanged.
GroupDecomposition merge_into_pointwise(const GroupDecomposition& decomp, const Matrix& a,
                                        const std::vector<double>& bias_delta);

// Applies the same merge to the pointwise layer of `layer_id` inside a network.
void merge_into_network(NetworkSpec& compressed, const std::string& layer_id, const Matrix& a,
                        const std::vector<double>& bias_delta);

}  // namespace fgc
