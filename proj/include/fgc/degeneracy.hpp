#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fgc/decomposer.hpp"
#include "fgc/matrix.hpp"

namespace fgc {

// Jacobian ranks of three two-layer factorizations at equal FLOPs:
//   svd     - W ~ W1 W2 with C_d intermediate channels,
//   spatial - k x 1 then 1 x k with C_d' intermediate channels,
//   group   - group conv D then pointwise P at rank n.
struct StrategyRankReport {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t k = 0;
  std::size_t n = 0;
  double flops_ratio = 0.0;   // group strategy cost / original cost
  double c_d = 0.0;           // (c_in k^2 n + c_in c_out) / (c_in k^2 + c_out)
  double c_d_prime_k = 0.0;   // (c_in k^2 n + c_in c_out) / (c_in + c_out)
  std::size_t rank_svd = 0;      // min(floor(C_d), c_in, c_out), at least 1
  std::size_t rank_spatial = 0;  // min(floor(C_d' k), c_out), at least 1
  std::size_t rank_group = 0;    // min(c_in, c_out)
  // c_in <= c_out < c_in k^2 with k > 1, where the rank ordering is guaranteed.
  bool typical_regime = false;
};

StrategyRankReport equal_flops_ranks(std::size_t c_in, std::size_t c_out, std::size_t k,
                                     std::size_t n);

enum class EnergyMode { squared, linear };

struct EnergyCurve {
  std::vector<double> singular_values;
  std::vector<double> cumulative_energy;  // normalized cumulative sum of sigma^2
  std::vector<double> cumulative_sigma;   // normalized cumulative sum of sigma

  const std::vector<double>& curve(EnergyMode mode) const {
    return mode == EnergyMode::squared ? cumulative_energy : cumulative_sigma;
  }
  // First index whose cumulative value is >= 1 - tol.
  std::size_t saturation_index(EnergyMode mode = EnergyMode::squared, double tol = 1e-12) const;
};

EnergyCurve energy_curve(std::vector<double> singular_values);
// Singular spectrum of a linear layer's Jacobian, i.e. its weight matrix.
EnergyCurve jacobian_energy_curve(const Matrix& weights);
EnergyCurve jacobian_energy_curve(const GroupDecomposition& decomp);

// The SVD-strategy baseline: best rank-`rank` approximation W1 W2 of w.
Matrix svd_strategy_product(const Matrix& w, std::size_t rank);

struct CorrelationReport {
  Matrix correlation;  // |Pearson| between pointwise channel i and group channel j
  std::vector<std::pair<std::size_t, std::size_t>> zero_variance;  // entries forced to 0
  double mean_in_block = 0.0;
  double mean_out_of_block = 0.0;
  std::size_t groups = 1;
  std::size_t samples = 0;
};

// Streams paired activation rows (samples x channels) of a pointwise layer
// and the following group conv into running sums.
class CorrelationAccumulator {
 public:
  CorrelationAccumulator(std::size_t pointwise_channels, std::size_t group_channels);

  void add(const Matrix& pointwise_rows, const Matrix& group_rows);
  // `groups` defines the block-diagonal mask: pointwise channel i and group
  // channel j are in-block when i / (Cp/groups) == j / (Cg/groups).
  CorrelationReport finish(std::size_t groups) const;

 private:
  std::size_t cp_;
  std::size_t cg_;
  std::size_t count_ = 0;
  std::vector<double> sum_p_;
  std::vector<double> sum_g_;
  std::vector<double> sq_p_;
  std::vector<double> sq_g_;
  Matrix cross_;
};

CorrelationReport filter_correlation(const Matrix& pointwise_rows, const Matrix& group_rows,
                                     std::size_t groups);

// CSV writers: energy (index,sigma,cumulative_energy,cumulative_sigma) and a
// plain matrix with a header row of column indices.
void write_energy_csv(const std::filesystem::path& path, const EnergyCurve& curve);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);

}  // namespace fgc
