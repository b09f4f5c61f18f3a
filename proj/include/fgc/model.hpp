#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fgc/matrix.hpp"
#include "fgc/tensor.hpp"

namespace fgc {

// Dimensions of a convolution, enough for FLOPs accounting without weights.
struct ConvShape {
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  std::size_t k = 1;
  std::size_t groups = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t weight_count() const { return c_out * (c_in / groups) * k * k; }
  // Throws ShapeError if groups do not divide both channel counts.
  void validate() const;
  friend bool operator==(const ConvShape&, const ConvShape&) = default;
};

// Records which layer a decomposed conv came from.
struct Provenance {
  std::string source_layer;
  std::size_t n = 0;
  std::string role;  // "group" or "pointwise"
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

// Convolution weights in OIHW order: c_out filters of (c_in/groups) x k x k.
// An empty `weights` vector means the layer is shape-only (not materialized).
struct ConvWeights {
  ConvShape shape;
  std::vector<double> weights;
  std::vector<double> bias;  // empty or c_out entries
  std::optional<Provenance> provenance;

  bool materialized() const { return !weights.empty(); }
  double& at(std::size_t o, std::size_t c, std::size_t ky, std::size_t kx) {
    return weights[((o * (shape.c_in / shape.groups) + c) * shape.k + ky) * shape.k + kx];
  }
  double at(std::size_t o, std::size_t c, std::size_t ky, std::size_t kx) const {
    return weights[((o * (shape.c_in / shape.groups) + c) * shape.k + ky) * shape.k + kx];
  }
  void validate() const;
  friend bool operator==(const ConvWeights&, const ConvWeights&) = default;
};

// The (c_in k^2) x c_out matrix W of a groups == 1 convolution, with rows in
// im2col column order. For grouped convs returns group `group`'s
// ((c_in/groups) k^2) x (c_out/groups) slice.
Matrix weight_matrix(const ConvWeights& conv, std::size_t group = 0);

struct PoolParams {
  std::size_t k = 2;
  std::size_t stride = 2;
  std::size_t pad = 0;
  bool global = false;  // window covers the whole input (avgpool only)
  friend bool operator==(const PoolParams&, const PoolParams&) = default;
};

// Weights row-major out_features x in_features.
struct FullyConnected {
  std::size_t in_features = 1;
  std::size_t out_features = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  bool materialized() const { return !weights.empty(); }
  friend bool operator==(const FullyConnected&, const FullyConnected&) = default;
};

// Per-channel y = scale * x + shift; inference-time batch normalization.
struct ChannelAffine {
  std::size_t channels = 1;
  std::vector<double> scale;
  std::vector<double> shift;

  bool materialized() const { return !scale.empty(); }
  friend bool operator==(const ChannelAffine&, const ChannelAffine&) = default;
};

enum class LayerKind { conv, relu, maxpool, avgpool, add, fc, channel_affine };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

// Name of the network input when used as a layer's `input` or `source`.
inline constexpr std::string_view kNetworkInput = "input";

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::relu;
  // Producer of this layer's input; empty means the previous layer (or the network input).
  std::string input;
  // Second operand of `add`.
  std::string source;
  std::string stage;
  std::variant<std::monostate, ConvWeights, PoolParams, FullyConnected, ChannelAffine> params;

  ConvWeights& conv() { return std::get<ConvWeights>(params); }
  const ConvWeights& conv() const { return std::get<ConvWeights>(params); }
  const PoolParams& pool() const { return std::get<PoolParams>(params); }
  const FullyConnected& fc() const { return std::get<FullyConnected>(params); }
  const ChannelAffine& affine() const { return std::get<ChannelAffine>(params); }
};

// Ordered layer list; the last layer's output is the network output.
struct NetworkSpec {
  std::string name;
  Shape3 input_shape;
  std::vector<LayerSpec> layers;

  std::size_t index_of(std::string_view id) const;  // throws if absent
  const LayerSpec* find(std::string_view id) const;
  bool materialized() const;
};

// Per-layer input and output shapes, index-aligned with net.layers.
struct ShapeTrace {
  std::vector<Shape3> inputs;
  std::vector<Shape3> outputs;
};

// Resolves input references, checks the DAG and shape compatibility end to
// end. Errors name the offending layer.
ShapeTrace infer_shapes(const NetworkSpec& net);

// Fills empty stage labels with the stage of the layer's input resolution
// ("s<H>x<W>"). Explicit labels are kept.
void assign_default_stages(NetworkSpec& net);

// Index of the producer of a layer's primary input; npos for the network input.
inline constexpr std::size_t kFromInput = static_cast<std::size_t>(-1);
std::size_t resolve_input(const NetworkSpec& net, std::size_t layer_index);

}  // namespace fgc
