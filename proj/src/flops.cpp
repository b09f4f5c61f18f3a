#include "fgc/flops.hpp"

#include "fgc/error.hpp"

namespace fgc {

namespace {

void check_rank(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t n) {
  if (c_in == 0 || c_out == 0 || k == 0) throw PlanError("layer dimensions must be positive");
  if (n == 0 || n > c_in || c_in % n != 0) {
    throw PlanError("rank n=" + std::to_string(n) + " must divide c_in=" + std::to_string(c_in));
  }
}

}  // namespace

std::uint64_t flops_of_layer(const ConvShape& layer, std::size_t out_h, std::size_t out_w) {
  return std::uint64_t{2} * (layer.c_in / layer.groups) * layer.k * layer.k * layer.c_out * out_h *
         out_w;
}

std::uint64_t flops_of_fc(std::size_t in_features, std::size_t out_features) {
  return std::uint64_t{2} * in_features * out_features;
}

double flops_ratio_decomposed(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t n) {
  check_rank(c_in, c_out, k, n);
  return static_cast<double>(n) / static_cast<double>(c_out) +
         1.0 / static_cast<double>(k * k);
}

FlopsFraction flops_fraction_decomposed(std::size_t c_in, std::size_t c_out, std::size_t k,
                                        std::size_t n) {
  check_rank(c_in, c_out, k, n);
  return {static_cast<std::uint64_t>(n * k * k + c_out), static_cast<std::uint64_t>(c_out * k * k)};
}

bool decomposition_compresses(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t n) {
  const FlopsFraction f = flops_fraction_decomposed(c_in, c_out, k, n);
  return f.numerator < f.denominator;
}

ConvShape group_conv_shape(const ConvShape& original, std::size_t n) {
  check_rank(original.c_in, original.c_out, original.k, n);
  return ConvShape{original.c_in, original.c_in, original.k, original.c_in / n, original.stride,
                   original.pad};
}

ConvShape pointwise_conv_shape(const ConvShape& original) {
  return ConvShape{original.c_in, original.c_out, 1, 1, 1, 0};
}

std::vector<LayerFlops> layer_flops(const NetworkSpec& net) {
  const ShapeTrace trace = infer_shapes(net);
  std::vector<LayerFlops> rows;
  rows.reserve(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    LayerFlops row{l.id, std::string(to_string(l.kind)), l.stage, trace.outputs[i], 0};
    if (l.kind == LayerKind::conv) {
      row.flops = flops_of_layer(l.conv().shape, trace.outputs[i].height, trace.outputs[i].width);
    } else if (l.kind == LayerKind::fc) {
      row.flops = flops_of_fc(l.fc().in_features, l.fc().out_features);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::uint64_t network_flops(const NetworkSpec& net) {
  std::uint64_t total = 0;
  for (const auto& row : layer_flops(net)) total += row.flops;
  return total;
}

}  // namespace fgc
