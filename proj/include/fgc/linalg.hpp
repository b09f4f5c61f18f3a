#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fgc/matrix.hpp"
#include "fgc/tensor.hpp"

namespace fgc {

// Thin SVD a = u * diag(singular_values) * vt with r = min(rows, cols).
struct SvdResult {
  Matrix u;                             // m x r, orthonormal columns
  std::vector<double> singular_values;  // descending, nonnegative
  Matrix vt;                            // r x n, orthonormal rows
};

// One-sided Jacobi SVD (tall inputs are first reduced by Householder QR).
// Throws NumericalError if the sweep cap is hit or the input is not finite.
SvdResult svd(const Matrix& a);

// u_r * diag(s_r) * vt_r using the leading `rank` triplets.
Matrix truncated_product(const SvdResult& s, std::size_t rank);

// Number of singular values strictly above rel_tol * sigma_max.
std::size_t numerical_rank(std::span<const double> singular_values, double rel_tol);

struct LeastSquaresSolution {
  Matrix coefficients;
  std::size_t rank = 0;
  bool rank_deficient = false;
  // Fewer design rows than columns; the result is the minimum-norm solution.
  bool underdetermined = false;
};

// argmin_X ||targets - design * X||_F^2 + ridge * ||X||_F^2.
// Uses column-pivoted Householder QR; at ridge == 0 a rank-deficient or
// underdetermined design falls back to the SVD minimum-norm solution.
LeastSquaresSolution solve_least_squares(const Matrix& design, const Matrix& targets,
                                         double ridge = 0.0);

// Sliding-window patches of one sample, N x (C*k*k) with N = H_out * W_out.
// Column index is (c * k + ky) * k + kx; row index is oy * W_out + ox.
Matrix im2col(const FeatureMap& input, std::size_t k, std::size_t stride, std::size_t pad);

// Output extent of a k-window with the given stride and padding; throws ShapeError if empty.
std::size_t conv_output_extent(std::size_t extent, std::size_t k, std::size_t stride,
                               std::size_t pad);

}  // namespace fgc
