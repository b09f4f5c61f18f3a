#include "fgc/decomposer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fgc/error.hpp"
#include "fgc/flops.hpp"
#include "fgc/linalg.hpp"

namespace fgc {

namespace {

std::string join(const std::vector<std::size_t>& values) {
  std::ostringstream os;
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? ", " : "") << values[i];
  return os.str();
}

void check_partition(const ConvWeights& w, std::size_t n) {
  if (w.shape.groups != 1) {
    throw PlanError("only groups == 1 convolutions can be decomposed (got groups=" +
                    std::to_string(w.shape.groups) + ")");
  }
  if (n == 0 || n > w.shape.c_in || w.shape.c_in % n != 0) {
    throw PlanError("rank n=" + std::to_string(n) + " does not divide c_in=" +
                    std::to_string(w.shape.c_in) + "; valid values: " +
                    join(valid_ranks(w.shape.c_in)));
  }
}

}  // namespace

std::vector<std::size_t> valid_ranks(std::size_t c_in) {
  std::vector<std::size_t> out;
  for (std::size_t d = 1; d <= c_in; ++d) {
    if (c_in % d == 0) out.push_back(d);
  }
  return out;
}

std::vector<Matrix> partition_blocks(const ConvWeights& w, std::size_t n) {
  check_partition(w, n);
  const Matrix full = weight_matrix(w);
  const std::size_t rows = n * w.shape.k * w.shape.k;
  std::vector<Matrix> blocks;
  blocks.reserve(w.shape.c_in / n);
  for (std::size_t i = 0; i < w.shape.c_in / n; ++i) {
    blocks.push_back(full.block(i * rows, 0, rows, w.shape.c_out));
  }
  return blocks;
}

GroupDecomposition decompose_layer(const ConvWeights& w, std::size_t n,
                                   const DecomposeOptions& options, std::string source_layer) {
  if (w.shape.k == 1 && !options.force_1x1) {
    throw PlanError("1x1 convolution" +
                    (source_layer.empty() ? std::string() : " '" + source_layer + "'") +
                    " is not decomposed by default (no FLOPs saving); force it explicitly");
  }
  const std::vector<Matrix> blocks = partition_blocks(w, n);
  const ConvShape& s = w.shape;
  const std::size_t kk = s.k * s.k;

  GroupDecomposition out;
  out.source_layer = std::move(source_layer);
  out.n = n;
  out.d_layer.shape = group_conv_shape(s, n);
  out.d_layer.weights.assign(out.d_layer.shape.weight_count(), 0.0);
  out.p_layer.shape = pointwise_conv_shape(s);
  out.p_layer.weights.assign(out.p_layer.shape.weight_count(), 0.0);
  out.p_layer.bias = w.bias;
  if (!out.source_layer.empty()) {
    out.d_layer.provenance = Provenance{out.source_layer, n, "group"};
    out.p_layer.provenance = Provenance{out.source_layer, n, "pointwise"};
  }

  double total_sq = 0.0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const SvdResult f = svd(blocks[i]);
    const std::size_t kept = std::min(n, f.singular_values.size());
    double discarded = 0.0;
    for (std::size_t j = kept; j < f.singular_values.size(); ++j) {
      discarded += f.singular_values[j] * f.singular_values[j];
    }
    total_sq += discarded;
    out.block_truncation_error.push_back(std::sqrt(discarded));
    out.block_singular_values.push_back(f.singular_values);

    for (std::size_t j = 0; j < kept; ++j) {
      const std::size_t channel = i * n + j;
      // D_i column j = sigma_j u_j, laid out as the group filter n x k x k.
      double* filter = out.d_layer.weights.data() + channel * n * kk;
      for (std::size_t r = 0; r < n * kk; ++r) filter[r] = f.u(r, j) * f.singular_values[j];
      // P row `channel` = v_j.
      for (std::size_t o = 0; o < s.c_out; ++o) {
        out.p_layer.weights[o * s.c_in + channel] = f.vt(j, o);
      }
    }
  }
  out.truncation_error = std::sqrt(total_sq);
  return out;
}

std::size_t decomposed_jacobian_rank(std::size_t c_in, std::size_t c_out, std::size_t n) {
  if (c_in == 0 || c_out == 0 || n == 0) throw PlanError("dimensions must be positive");
  return std::min(c_in, c_out);
}

Matrix assemble_group_matrix(const ConvWeights& d_layer) {
  const ConvShape& s = d_layer.shape;
  if (s.c_out != s.c_in) {
    throw ShapeError("group layer must have c_out == c_in to assemble D");
  }
  const std::size_t n = s.c_in / s.groups;
  const std::size_t kk = s.k * s.k;
  Matrix d(s.c_in * kk, s.c_in);
  for (std::size_t g = 0; g < s.groups; ++g) {
    const Matrix block = weight_matrix(d_layer, g);  // (n k^2) x n
    for (std::size_t r = 0; r < block.rows(); ++r) {
      for (std::size_t c = 0; c < block.cols(); ++c) d(g * n * kk + r, g * n + c) = block(r, c);
    }
  }
  return d;
}

Matrix pointwise_matrix(const ConvWeights& p_layer) {
  if (p_layer.shape.k != 1 || p_layer.shape.groups != 1) {
    throw ShapeError("pointwise layer must be a 1x1 conv with groups == 1");
  }
  return weight_matrix(p_layer);
}

Matrix assembled_product(const GroupDecomposition& decomp) {
  return matmul(assemble_group_matrix(decomp.d_layer), pointwise_matrix(decomp.p_layer));
}

NetworkSpec replace_with_decomposition(const NetworkSpec& net, const std::string& layer_id,
                                       const GroupDecomposition& decomp) {
  const std::size_t idx = net.index_of(layer_id);
  const LayerSpec& original = net.layers[idx];
  if (original.kind != LayerKind::conv) {
    throw PlanError("layer '" + layer_id + "' is not a convolution");
  }
  if (decomp.d_layer.shape.c_in != original.conv().shape.c_in ||
      decomp.p_layer.shape.c_out != original.conv().shape.c_out) {
    throw ShapeError("decomposition does not match layer '" + layer_id + "'");
  }
  const std::string gid = group_layer_id(layer_id);
  const std::string pid = pointwise_layer_id(layer_id);

  NetworkSpec out;
  out.name = net.name;
  out.input_shape = net.input_shape;
  out.layers.reserve(net.layers.size() + 1);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (i == idx) {
      LayerSpec d;
      d.id = gid;
      d.kind = LayerKind::conv;
      d.input = original.input;
      d.stage = original.stage;
      d.params = decomp.d_layer;
      LayerSpec p;
      p.id = pid;
      p.kind = LayerKind::conv;
      p.stage = original.stage;
      p.params = decomp.p_layer;
      out.layers.push_back(std::move(d));
      out.layers.push_back(std::move(p));
      continue;
    }
    LayerSpec l = net.layers[i];
    if (l.input == layer_id) l.input = pid;
    if (l.source == layer_id) l.source = pid;
    // The implicit predecessor of the layer after `idx` is now P, which is still adjacent.
    out.layers.push_back(std::move(l));
  }
  infer_shapes(out);
  return out;
}

}  // namespace fgc
