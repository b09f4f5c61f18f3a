#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fgc/matrix.hpp"
#include "fgc/model.hpp"

namespace fgc {

struct DecomposeOptions {
  // Allow k == 1 layers, where the structure degenerates to a plain channel SVD.
  bool force_1x1 = false;
};

// A conv replaced by a group conv D (c_in/n groups, c_in filters of n x k x k)
// followed by a pointwise conv P (c_in -> c_out). Singular values are folded
// into D; P holds right singular vectors and carries the original bias.
struct GroupDecomposition {
  std::string source_layer;
  std::size_t n = 0;
  ConvWeights d_layer;
  ConvWeights p_layer;
  std::vector<std::vector<double>> block_singular_values;
  std::vector<double> block_truncation_error;  // sqrt of discarded sigma^2 per block
  double truncation_error = 0.0;               // Frobenius norm of W - D P
};

// Divisors of c_in, ascending; the admissible ranks n.
std::vector<std::size_t> valid_ranks(std::size_t c_in);

// Splits W ((c_in k^2) x c_out) into c_in/n row blocks of n k^2 rows each.
std::vector<Matrix> partition_blocks(const ConvWeights& w, std::size_t n);

GroupDecomposition decompose_layer(const ConvWeights& w, std::size_t n,
                                   const DecomposeOptions& options = {},
                                   std::string source_layer = {});

// Rank of the assembled D P with full-rank blocks; independent of n.
std::size_t decomposed_jacobian_rank(std::size_t c_in, std::size_t c_out, std::size_t n);

// Block-diagonal (c_in k^2) x c_in matrix realized by a group conv with c_out == c_in.
Matrix assemble_group_matrix(const ConvWeights& d_layer);
// c_in x c_out matrix of a 1x1 conv.
Matrix pointwise_matrix(const ConvWeights& p_layer);
// D P, the same shape as the original weight matrix.
Matrix assembled_product(const GroupDecomposition& decomp);

inline std::string group_layer_id(const std::string& id) { return id + ".group"; }
inline std::string pointwise_layer_id(const std::string& id) { return id + ".pointwise"; }

// Replaces conv `layer_id` with its D and P layers, rewiring references so
// consumers read from P. Stage labels are inherited.
NetworkSpec replace_with_decomposition(const NetworkSpec& net, const std::string& layer_id,
                                       const GroupDecomposition& decomp);

}  // namespace fgc
