#include "fgc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fgc/error.hpp"

namespace fgc {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr int kMaxJacobiSweeps = 80;

// Column-major dense buffer used by the factorizations; columns are contiguous.
struct ColumnMajor {
  std::size_t rows;
  std::size_t cols;
  std::vector<double> data;

  explicit ColumnMajor(const Matrix& m) : rows(m.rows()), cols(m.cols()), data(rows * cols) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) data[c * rows + r] = m(r, c);
    }
  }
  ColumnMajor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double* col(std::size_t c) { return data.data() + c * rows; }
  const double* col(std::size_t c) const { return data.data() + c * rows; }

  Matrix to_matrix() const {
    Matrix m(rows, cols);
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t r = 0; r < rows; ++r) m(r, c) = data[c * rows + r];
    }
    return m;
  }
};

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Householder QR, optionally with column pivoting. Reflector k acts on rows k..m-1.
struct HouseholderQr {
  ColumnMajor a;  // R in the upper triangle after factorization
  std::vector<std::vector<double>> reflectors;
  std::vector<double> tau;
  std::vector<std::size_t> perm;

  HouseholderQr(const Matrix& m, bool pivot) : a(m), perm(m.cols()) {
    std::iota(perm.begin(), perm.end(), 0);
    const std::size_t rows = a.rows;
    const std::size_t cols = a.cols;
    const std::size_t steps = std::min(rows, cols);
    for (std::size_t k = 0; k < steps; ++k) {
      if (pivot) {
        std::size_t best = k;
        double best_norm = -1.0;
        for (std::size_t j = k; j < cols; ++j) {
          const double nrm = dot(a.col(j) + k, a.col(j) + k, rows - k);
          if (nrm > best_norm) {
            best_norm = nrm;
            best = j;
          }
        }
        if (best != k) {
          std::swap_ranges(a.col(k), a.col(k) + rows, a.col(best));
          std::swap(perm[k], perm[best]);
        }
      }
      double* x = a.col(k) + k;
      const std::size_t len = rows - k;
      const double norm_x = std::sqrt(dot(x, x, len));
      std::vector<double> v(x, x + len);
      if (norm_x == 0.0) {
        reflectors.push_back(std::move(v));
        tau.push_back(0.0);
        continue;
      }
      const double alpha = x[0] > 0.0 ? -norm_x : norm_x;
      v[0] -= alpha;
      const double vv = dot(v.data(), v.data(), len);
      const double t = vv > 0.0 ? 2.0 / vv : 0.0;
      x[0] = alpha;
      std::fill(x + 1, x + len, 0.0);
      for (std::size_t j = k + 1; j < cols; ++j) {
        double* y = a.col(j) + k;
        const double s = t * dot(v.data(), y, len);
        for (std::size_t i = 0; i < len; ++i) y[i] -= s * v[i];
      }
      reflectors.push_back(std::move(v));
      tau.push_back(t);
    }
  }

  // b <- Q^T b for a column-major b with a.rows rows.
  void apply_qt(ColumnMajor& b) const {
    for (std::size_t k = 0; k < reflectors.size(); ++k) {
      if (tau[k] == 0.0) continue;
      const auto& v = reflectors[k];
      for (std::size_t j = 0; j < b.cols; ++j) {
        double* y = b.col(j) + k;
        const double s = tau[k] * dot(v.data(), y, v.size());
        for (std::size_t i = 0; i < v.size(); ++i) y[i] -= s * v[i];
      }
    }
  }

  // Thin Q (rows x min(rows, cols)).
  ColumnMajor thin_q() const {
    const std::size_t r = std::min(a.rows, a.cols);
    ColumnMajor q(a.rows, r);
    for (std::size_t j = 0; j < r; ++j) q.col(j)[j] = 1.0;
    for (std::size_t k = reflectors.size(); k-- > 0;) {
      if (tau[k] == 0.0) continue;
      const auto& v = reflectors[k];
      for (std::size_t j = 0; j < r; ++j) {
        double* y = q.col(j) + k;
        const double s = tau[k] * dot(v.data(), y, v.size());
        for (std::size_t i = 0; i < v.size(); ++i) y[i] -= s * v[i];
      }
    }
    return q;
  }

  double r_at(std::size_t i, std::size_t j) const { return a.col(j)[i]; }
};

// Completes column j of q (already holding garbage) to a unit vector orthogonal
// to the columns listed in `filled`, trying standard basis vectors in turn.
void complete_orthonormal(ColumnMajor& q, std::size_t j, const std::vector<std::size_t>& filled) {
  std::vector<double> cand(q.rows);
  for (std::size_t e = 0; e < q.rows; ++e) {
    std::fill(cand.begin(), cand.end(), 0.0);
    cand[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t f : filled) {
        const double s = dot(q.col(f), cand.data(), q.rows);
        for (std::size_t i = 0; i < q.rows; ++i) cand[i] -= s * q.col(f)[i];
      }
    }
    const double nrm = std::sqrt(dot(cand.data(), cand.data(), q.rows));
    if (nrm > 0.5) {
      for (std::size_t i = 0; i < q.rows; ++i) q.col(j)[i] = cand[i] / nrm;
      return;
    }
  }
  throw NumericalError("failed to complete orthonormal basis of dimension " +
                       std::to_string(q.rows));
}

// One-sided Jacobi on a tall-or-square matrix (rows >= cols).
SvdResult jacobi_svd(const Matrix& m) {
  ColumnMajor g(m);
  const std::size_t rows = g.rows;
  const std::size_t n = g.cols;
  ColumnMajor v(n, n);
  for (std::size_t j = 0; j < n; ++j) v.col(j)[j] = 1.0;

  const double tol = kEps * static_cast<double>(std::max<std::size_t>(rows, 8));
  bool converged = false;
  for (int sweep = 0; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* gp = g.col(p);
        double* gq = g.col(q);
        const double alpha = dot(gp, gp, rows);
        const double beta = dot(gq, gq, rows);
        const double gamma = dot(gp, gq, rows);
        if (alpha == 0.0 || beta == 0.0 || gamma == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double a = gp[i];
          const double b = gq[i];
          gp[i] = c * a - s * b;
          gq[i] = s * a + c * b;
        }
        double* vp = v.col(p);
        double* vq = v.col(q);
        for (std::size_t i = 0; i < n; ++i) {
          const double a = vp[i];
          const double b = vq[i];
          vp[i] = c * a - s * b;
          vq[i] = s * a + c * b;
        }
      }
    }
  }
  if (!converged) {
    throw NumericalError("svd did not converge after " + std::to_string(kMaxJacobiSweeps) +
                         " Jacobi sweeps on a " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + " matrix");
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(dot(g.col(j), g.col(j), rows));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  const double sigma_max = norms[order[0]];
  const double zero_cut = sigma_max * 1e-13;
  ColumnMajor u(rows, n);
  std::vector<double> sv(n);
  std::vector<std::size_t> filled;
  std::vector<std::size_t> deferred;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    sv[j] = norms[src];
    if (sigma_max > 0.0 && norms[src] > zero_cut) {
      for (std::size_t i = 0; i < rows; ++i) u.col(j)[i] = g.col(src)[i] / norms[src];
      filled.push_back(j);
    } else {
      deferred.push_back(j);
    }
  }
  for (std::size_t j : deferred) {
    complete_orthonormal(u, j, filled);
    filled.push_back(j);
  }

  Matrix vt(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double* col = v.col(order[j]);
    for (std::size_t i = 0; i < n; ++i) vt(j, i) = col[i];
  }
  return SvdResult{u.to_matrix(), std::move(sv), std::move(vt)};
}

SvdResult svd_tall(const Matrix& a) {
  if (a.rows() == a.cols()) return jacobi_svd(a);
  HouseholderQr qr(a, false);
  const std::size_t n = a.cols();
  Matrix r(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) r(i, j) = qr.r_at(i, j);
  }
  SvdResult inner = jacobi_svd(r);
  Matrix q = qr.thin_q().to_matrix();
  return SvdResult{matmul(q, inner.u), std::move(inner.singular_values), std::move(inner.vt)};
}

Matrix min_norm_solution(const Matrix& design, const Matrix& targets, double rel_tol,
                         std::size_t& rank_out) {
  const SvdResult s = svd(design);
  rank_out = numerical_rank(s.singular_values, rel_tol);
  Matrix x(design.cols(), targets.cols());
  for (std::size_t i = 0; i < rank_out; ++i) {
    // x += v_i * (u_i^T targets) / sigma_i
    std::vector<double> proj(targets.cols(), 0.0);
    for (std::size_t r = 0; r < design.rows(); ++r) {
      const double ui = s.u(r, i);
      if (ui == 0.0) continue;
      auto trow = targets.row(r);
      for (std::size_t c = 0; c < targets.cols(); ++c) proj[c] += ui * trow[c];
    }
    const double inv = 1.0 / s.singular_values[i];
    for (std::size_t r = 0; r < design.cols(); ++r) {
      const double vi = s.vt(i, r) * inv;
      auto xrow = x.row(r);
      for (std::size_t c = 0; c < targets.cols(); ++c) xrow[c] += vi * proj[c];
    }
  }
  return x;
}

}  // namespace

std::string Shape3::to_string() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

FeatureMap::FeatureMap(Shape3 shape, double fill)
    : shape_(shape), data_(shape.elements(), fill) {}

FeatureMap::FeatureMap(Shape3 shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.elements()) {
    throw ShapeError("feature map data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.to_string());
  }
}

Matrix to_response_rows(const FeatureMap& fm) {
  const std::size_t spatial = fm.height() * fm.width();
  Matrix m(spatial, fm.channels());
  for (std::size_t c = 0; c < fm.channels(); ++c) {
    const double* src = fm.data().data() + c * spatial;
    for (std::size_t p = 0; p < spatial; ++p) m(p, c) = src[p];
  }
  return m;
}

SvdResult svd(const Matrix& a) {
  if (!a.all_finite()) {
    throw NumericalError("svd input " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " contains non-finite values");
  }
  if (a.rows() >= a.cols()) return svd_tall(a);
  SvdResult t = svd_tall(a.transpose());
  return SvdResult{t.vt.transpose(), std::move(t.singular_values), t.u.transpose()};
}

Matrix truncated_product(const SvdResult& s, std::size_t rank) {
  rank = std::min(rank, s.singular_values.size());
  Matrix out(s.u.rows(), s.vt.cols());
  for (std::size_t i = 0; i < rank; ++i) {
    const double sigma = s.singular_values[i];
    for (std::size_t r = 0; r < s.u.rows(); ++r) {
      const double ur = s.u(r, i) * sigma;
      if (ur == 0.0) continue;
      auto orow = out.row(r);
      auto vrow = s.vt.row(i);
      for (std::size_t c = 0; c < orow.size(); ++c) orow[c] += ur * vrow[c];
    }
  }
  return out;
}

std::size_t numerical_rank(std::span<const double> singular_values, double rel_tol) {
  if (singular_values.empty()) return 0;
  const double top = *std::max_element(singular_values.begin(), singular_values.end());
  if (top <= 0.0) return 0;
  return static_cast<std::size_t>(std::count_if(singular_values.begin(), singular_values.end(),
                                                [&](double s) { return s > rel_tol * top; }));
}

LeastSquaresSolution solve_least_squares(const Matrix& design, const Matrix& targets,
                                         double ridge) {
  if (design.rows() != targets.rows()) {
    throw ShapeError("least squares row mismatch: design has " + std::to_string(design.rows()) +
                     " rows, targets have " + std::to_string(targets.rows()));
  }
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) {
    throw NumericalError("ridge must be a finite nonnegative value");
  }
  const std::size_t m = design.rows();
  const std::size_t n = design.cols();
  const std::size_t p = targets.cols();

  LeastSquaresSolution out{Matrix(n, p)};
  out.underdetermined = m < n;

  Matrix a = design;
  Matrix b = targets;
  if (ridge > 0.0) {
    Matrix reg(n, n);
    const double root = std::sqrt(ridge);
    for (std::size_t i = 0; i < n; ++i) reg(i, i) = root;
    const Matrix parts_a[] = {design, reg};
    const Matrix parts_b[] = {targets, Matrix(n, p)};
    a = vstack(parts_a);
    b = vstack(parts_b);
  }

  const double rel_tol = static_cast<double>(std::max(a.rows(), n)) * kEps;
  if (a.rows() < n) {
    out.coefficients = min_norm_solution(a, b, rel_tol, out.rank);
    out.rank_deficient = out.rank < n;
    return out;
  }

  HouseholderQr qr(a, true);
  const double r00 = std::abs(qr.r_at(0, 0));
  std::size_t rank = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(qr.r_at(i, i)) > rel_tol * r00) ++rank;
  }
  if (rank < n) {
    out.coefficients = min_norm_solution(a, b, rel_tol, out.rank);
    out.rank_deficient = true;
    return out;
  }

  ColumnMajor qtb(b);
  qr.apply_qt(qtb);
  ColumnMajor x(n, p);
  for (std::size_t c = 0; c < p; ++c) {
    const double* rhs = qtb.col(c);
    double* sol = x.col(c);
    for (std::size_t i = n; i-- > 0;) {
      double s = rhs[i];
      for (std::size_t j = i + 1; j < n; ++j) s -= qr.r_at(i, j) * sol[j];
      sol[i] = s / qr.r_at(i, i);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < p; ++c) out.coefficients(qr.perm[i], c) = x.col(c)[i];
  }
  out.rank = n;
  return out;
}

std::size_t conv_output_extent(std::size_t extent, std::size_t k, std::size_t stride,
                               std::size_t pad) {
  if (k == 0 || stride == 0) {
    throw ShapeError("kernel size and stride must be positive");
  }
  if (extent + 2 * pad < k) {
    throw ShapeError("window of size " + std::to_string(k) + " does not fit extent " +
                     std::to_string(extent) + " with padding " + std::to_string(pad));
  }
  return (extent + 2 * pad - k) / stride + 1;
}

Matrix im2col(const FeatureMap& input, std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t out_h = conv_output_extent(input.height(), k, stride, pad);
  const std::size_t out_w = conv_output_extent(input.width(), k, stride, pad);
  const std::size_t channels = input.channels();
  if (channels == 0) throw ShapeError("im2col input has no channels");
  Matrix patches(out_h * out_w, channels * k * k);
  const auto h = static_cast<std::ptrdiff_t>(input.height());
  const auto w = static_cast<std::ptrdiff_t>(input.width());
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      auto row = patches.row(oy * out_w + ox);
      std::size_t col = 0;
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          for (std::size_t kx = 0; kx < k; ++kx, ++col) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
              row[col] = input.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
        }
      }
    }
  }
  return patches;
}

}  // namespace fgc
