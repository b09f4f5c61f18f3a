#include "fgc/degeneracy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>

#include "fgc/error.hpp"
#include "fgc/flops.hpp"
#include "fgc/linalg.hpp"

namespace fgc {

StrategyRankReport equal_flops_ranks(std::size_t c_in, std::size_t c_out, std::size_t k,
                                     std::size_t n) {
  if (c_in == 0 || c_out == 0 || k == 0 || n == 0) {
    throw PlanError("rank report dimensions must be positive");
  }
  StrategyRankReport r{c_in, c_out, k, n};
  const double ci = static_cast<double>(c_in);
  const double co = static_cast<double>(c_out);
  const double kk = static_cast<double>(k * k);
  const double group_cost = ci * kk * static_cast<double>(n) + ci * co;
  r.flops_ratio = group_cost / (ci * kk * co);
  r.c_d = group_cost / (ci * kk + co);
  r.c_d_prime_k = group_cost / (ci + co);
  // Floors in exact integer arithmetic so integral C_d values are not rounded down.
  const std::uint64_t cost = static_cast<std::uint64_t>(c_in) * k * k * n +
                             static_cast<std::uint64_t>(c_in) * c_out;
  const auto floor_div = [](std::uint64_t num, std::uint64_t den) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(num / den));
  };
  r.rank_svd = std::min({floor_div(cost, static_cast<std::uint64_t>(c_in) * k * k + c_out),
                         c_in, c_out});
  r.rank_spatial = std::min(floor_div(cost, static_cast<std::uint64_t>(c_in) + c_out), c_out);
  r.rank_group = decomposed_jacobian_rank(c_in, c_out, n);
  r.typical_regime = k > 1 && c_in <= c_out && c_out < c_in * k * k;
  return r;
}

std::size_t EnergyCurve::saturation_index(EnergyMode mode, double tol) const {
  const auto& c = curve(mode);
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i] >= 1.0 - tol) return i;
  }
  return c.empty() ? 0 : c.size() - 1;
}

EnergyCurve energy_curve(std::vector<double> singular_values) {
  std::sort(singular_values.begin(), singular_values.end(), std::greater<>());
  EnergyCurve curve;
  double total_sq = 0.0;
  double total = 0.0;
  for (double s : singular_values) {
    total_sq += s * s;
    total += s;
  }
  double acc_sq = 0.0;
  double acc = 0.0;
  for (double s : singular_values) {
    acc_sq += s * s;
    acc += s;
    curve.cumulative_energy.push_back(total_sq > 0.0 ? acc_sq / total_sq : 1.0);
    curve.cumulative_sigma.push_back(total > 0.0 ? acc / total : 1.0);
  }
  // Pin the endpoint against rounding in the running sums.
  if (!singular_values.empty()) {
    curve.cumulative_energy.back() = 1.0;
    curve.cumulative_sigma.back() = 1.0;
  }
  curve.singular_values = std::move(singular_values);
  return curve;
}

EnergyCurve jacobian_energy_curve(const Matrix& weights) {
  return energy_curve(svd(weights).singular_values);
}

EnergyCurve jacobian_energy_curve(const GroupDecomposition& decomp) {
  return jacobian_energy_curve(assembled_product(decomp));
}

Matrix svd_strategy_product(const Matrix& w, std::size_t rank) {
  return truncated_product(svd(w), rank);
}

CorrelationAccumulator::CorrelationAccumulator(std::size_t pointwise_channels,
                                               std::size_t group_channels)
    : cp_(pointwise_channels),
      cg_(group_channels),
      sum_p_(pointwise_channels, 0.0),
      sum_g_(group_channels, 0.0),
      sq_p_(pointwise_channels, 0.0),
      sq_g_(group_channels, 0.0),
      cross_(pointwise_channels, group_channels) {}

void CorrelationAccumulator::add(const Matrix& pointwise_rows, const Matrix& group_rows) {
  if (pointwise_rows.rows() != group_rows.rows() || pointwise_rows.cols() != cp_ ||
      group_rows.cols() != cg_) {
    throw ShapeError("correlation inputs must be row-aligned with " + std::to_string(cp_) +
                     " and " + std::to_string(cg_) + " channels");
  }
  for (std::size_t r = 0; r < pointwise_rows.rows(); ++r) {
    auto p = pointwise_rows.row(r);
    auto g = group_rows.row(r);
    for (std::size_t i = 0; i < cp_; ++i) {
      sum_p_[i] += p[i];
      sq_p_[i] += p[i] * p[i];
      auto cross_row = cross_.row(i);
      for (std::size_t j = 0; j < cg_; ++j) cross_row[j] += p[i] * g[j];
    }
    for (std::size_t j = 0; j < cg_; ++j) {
      sum_g_[j] += g[j];
      sq_g_[j] += g[j] * g[j];
    }
  }
  count_ += pointwise_rows.rows();
}

CorrelationReport CorrelationAccumulator::finish(std::size_t groups) const {
  if (count_ < 2) throw NumericalError("correlation needs at least two samples");
  if (groups == 0 || cp_ % groups != 0 || cg_ % groups != 0) {
    throw ShapeError("groups must divide both channel counts");
  }
  const double n = static_cast<double>(count_);
  CorrelationReport rep{Matrix(cp_, cg_)};
  rep.groups = groups;
  rep.samples = count_;
  std::vector<double> var_p(cp_);
  std::vector<double> var_g(cg_);
  for (std::size_t i = 0; i < cp_; ++i) var_p[i] = sq_p_[i] - sum_p_[i] * sum_p_[i] / n;
  for (std::size_t j = 0; j < cg_; ++j) var_g[j] = sq_g_[j] - sum_g_[j] * sum_g_[j] / n;
  // Variances below this fraction of the raw second moment are treated as zero.
  constexpr double kRelVar = 1e-12;
  double in_sum = 0.0;
  double out_sum = 0.0;
  std::size_t in_count = 0;
  std::size_t out_count = 0;
  const std::size_t bp = cp_ / groups;
  const std::size_t bg = cg_ / groups;
  for (std::size_t i = 0; i < cp_; ++i) {
    for (std::size_t j = 0; j < cg_; ++j) {
      double corr = 0.0;
      const bool flat_p = var_p[i] <= kRelVar * std::max(sq_p_[i], 1e-300);
      const bool flat_g = var_g[j] <= kRelVar * std::max(sq_g_[j], 1e-300);
      if (flat_p || flat_g) {
        rep.zero_variance.emplace_back(i, j);
      } else {
        const double cov = cross_(i, j) - sum_p_[i] * sum_g_[j] / n;
        corr = std::min(1.0, std::abs(cov) / std::sqrt(var_p[i] * var_g[j]));
      }
      rep.correlation(i, j) = corr;
      if (i / bp == j / bg) {
        in_sum += corr;
        ++in_count;
      } else {
        out_sum += corr;
        ++out_count;
      }
    }
  }
  rep.mean_in_block = in_count ? in_sum / static_cast<double>(in_count) : 0.0;
  rep.mean_out_of_block = out_count ? out_sum / static_cast<double>(out_count) : 0.0;
  return rep;
}

CorrelationReport filter_correlation(const Matrix& pointwise_rows, const Matrix& group_rows,
                                     std::size_t groups) {
  CorrelationAccumulator acc(pointwise_rows.cols(), group_rows.cols());
  acc.add(pointwise_rows, group_rows);
  return acc.finish(groups);
}

void write_energy_csv(const std::filesystem::path& path, const EnergyCurve& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "index,sigma,cumulative_energy,cumulative_sigma\n" << std::setprecision(17);
  for (std::size_t i = 0; i < curve.singular_values.size(); ++i) {
    out << i << ',' << curve.singular_values[i] << ',' << curve.cumulative_energy[i] << ','
        << curve.cumulative_sigma[i] << '\n';
  }
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "row";
  for (std::size_t c = 0; c < m.cols(); ++c) out << ',' << c;
  out << '\n' << std::setprecision(10);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out << r;
    for (std::size_t c = 0; c < m.cols(); ++c) out << ',' << m(r, c);
    out << '\n';
  }
}

}  // namespace fgc
