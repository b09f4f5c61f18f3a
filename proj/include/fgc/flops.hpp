#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgc/model.hpp"

namespace fgc {

// FLOPs counted as two per multiply-accumulate; bias, activations, pooling and
// residual adds are free.
std::uint64_t flops_of_layer(const ConvShape& layer, std::size_t out_h, std::size_t out_w);
std::uint64_t flops_of_fc(std::size_t in_features, std::size_t out_features);

// Cost of the group + pointwise pair relative to the original conv: n/c_out + 1/k^2.
// Throws PlanError unless 1 <= n <= c_in and c_in % n == 0.
double flops_ratio_decomposed(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t n);

// Same ratio as an exact fraction (n k^2 + c_out) / (c_out k^2).
struct FlopsFraction {
  std::uint64_t numerator;
  std::uint64_t denominator;
};
FlopsFraction flops_fraction_decomposed(std::size_t c_in, std::size_t c_out, std::size_t k,
                                        std::size_t n);

// True when the ratio is below one, i.e. the decomposition actually saves work.
bool decomposition_compresses(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t n);

// Shapes of the group conv D and pointwise conv P replacing `original` at rank n.
ConvShape group_conv_shape(const ConvShape& original, std::size_t n);
ConvShape pointwise_conv_shape(const ConvShape& original);

struct LayerFlops {
  std::string id;
  std::string kind;
  std::string stage;
  Shape3 output;
  std::uint64_t flops = 0;
};

std::vector<LayerFlops> layer_flops(const NetworkSpec& net);
std::uint64_t network_flops(const NetworkSpec& net);

}  // namespace fgc
