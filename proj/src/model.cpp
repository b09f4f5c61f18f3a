#include "fgc/model.hpp"

#include <algorithm>
#include <string>

#include "fgc/error.hpp"
#include "fgc/linalg.hpp"

namespace fgc {

void ConvShape::validate() const {
  if (c_in == 0 || c_out == 0 || k == 0 || groups == 0 || stride == 0) {
    throw ShapeError("convolution dimensions must be positive");
  }
  if (c_in % groups != 0 || c_out % groups != 0) {
    throw ShapeError("groups " + std::to_string(groups) + " must divide c_in " +
                     std::to_string(c_in) + " and c_out " + std::to_string(c_out));
  }
}

void ConvWeights::validate() const {
  shape.validate();
  if (!weights.empty() && weights.size() != shape.weight_count()) {
    throw ShapeError("conv weight count " + std::to_string(weights.size()) + " expected " +
                     std::to_string(shape.weight_count()));
  }
  if (!bias.empty() && bias.size() != shape.c_out) {
    throw ShapeError("conv bias length " + std::to_string(bias.size()) + " expected " +
                     std::to_string(shape.c_out));
  }
}

Matrix weight_matrix(const ConvWeights& conv, std::size_t group) {
  const ConvShape& s = conv.shape;
  if (!conv.materialized()) {
    throw ShapeError("conv weights are not materialized");
  }
  if (group >= s.groups) {
    throw ShapeError("group index out of range");
  }
  const std::size_t cg = s.c_in / s.groups;
  const std::size_t og = s.c_out / s.groups;
  const std::size_t kk = s.k * s.k;
  Matrix w(cg * kk, og);
  for (std::size_t o = 0; o < og; ++o) {
    const double* filter = conv.weights.data() + (group * og + o) * cg * kk;
    for (std::size_t r = 0; r < cg * kk; ++r) w(r, o) = filter[r];
  }
  return w;
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::add: return "add";
    case LayerKind::fc: return "fc";
    case LayerKind::channel_affine: return "channel_affine";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (LayerKind k : {LayerKind::conv, LayerKind::relu, LayerKind::maxpool, LayerKind::avgpool,
                      LayerKind::add, LayerKind::fc, LayerKind::channel_affine}) {
    if (to_string(k) == name) return k;
  }
  throw FormatError("unknown layer kind '" + std::string(name) + "'");
}

std::size_t NetworkSpec::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].id == id) return i;
  }
  throw ShapeError("no layer named '" + std::string(id) + "'");
}

const LayerSpec* NetworkSpec::find(std::string_view id) const {
  for (const auto& l : layers) {
    if (l.id == id) return &l;
  }
  return nullptr;
}

bool NetworkSpec::materialized() const {
  return std::all_of(layers.begin(), layers.end(), [](const LayerSpec& l) {
    switch (l.kind) {
      case LayerKind::conv: return l.conv().materialized();
      case LayerKind::fc: return l.fc().materialized();
      case LayerKind::channel_affine: return l.affine().materialized();
      default: return true;
    }
  });
}

namespace {

std::size_t resolve_reference(const NetworkSpec& net, std::size_t layer_index,
                              const std::string& ref, const char* what) {
  if (ref == kNetworkInput) return kFromInput;
  for (std::size_t j = 0; j < layer_index; ++j) {
    if (net.layers[j].id == ref) return j;
  }
  throw ShapeError("layer '" + net.layers[layer_index].id + "': " + what + " '" + ref +
                   "' is not an earlier layer");
}

}  // namespace

std::size_t resolve_input(const NetworkSpec& net, std::size_t layer_index) {
  const LayerSpec& l = net.layers.at(layer_index);
  if (l.input.empty()) return layer_index == 0 ? kFromInput : layer_index - 1;
  return resolve_reference(net, layer_index, l.input, "input");
}

ShapeTrace infer_shapes(const NetworkSpec& net) {
  if (net.layers.empty()) {
    throw ShapeError("network '" + net.name + "' has no layers");
  }
  if (net.input_shape.elements() == 0) {
    throw ShapeError("network input shape must be positive");
  }
  ShapeTrace trace;
  trace.inputs.reserve(net.layers.size());
  trace.outputs.reserve(net.layers.size());
  auto shape_of = [&](std::size_t idx) {
    return idx == kFromInput ? net.input_shape : trace.outputs[idx];
  };
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    for (std::size_t j = 0; j < i; ++j) {
      if (net.layers[j].id == l.id) throw ShapeError("duplicate layer id '" + l.id + "'");
    }
    if (l.id.empty() || l.id == kNetworkInput) {
      throw ShapeError("layer " + std::to_string(i) + " has an invalid id '" + l.id + "'");
    }
    const Shape3 in = shape_of(resolve_input(net, i));
    Shape3 out = in;
    auto fail = [&](const std::string& msg) -> void {
      throw ShapeError("layer '" + l.id + "' (" + std::string(to_string(l.kind)) + "): " + msg);
    };
    try {
      switch (l.kind) {
        case LayerKind::conv: {
          if (!std::holds_alternative<ConvWeights>(l.params)) fail("missing conv parameters");
          const ConvWeights& c = l.conv();
          c.validate();
          if (c.shape.c_in != in.channels) {
            fail("expects " + std::to_string(c.shape.c_in) + " input channels, got " +
                 in.to_string());
          }
          out = Shape3{c.shape.c_out,
                       conv_output_extent(in.height, c.shape.k, c.shape.stride, c.shape.pad),
                       conv_output_extent(in.width, c.shape.k, c.shape.stride, c.shape.pad)};
          break;
        }
        case LayerKind::relu:
          break;
        case LayerKind::maxpool:
        case LayerKind::avgpool: {
          if (!std::holds_alternative<PoolParams>(l.params)) fail("missing pool parameters");
          const PoolParams& p = l.pool();
          if (p.global) {
            out = Shape3{in.channels, 1, 1};
          } else {
            out = Shape3{in.channels, conv_output_extent(in.height, p.k, p.stride, p.pad),
                         conv_output_extent(in.width, p.k, p.stride, p.pad)};
          }
          break;
        }
        case LayerKind::add: {
          if (l.source.empty()) fail("add requires a source layer");
          const Shape3 other = shape_of(resolve_reference(net, i, l.source, "source"));
          if (!(other == in)) fail("operand shapes differ: " + in.to_string() + " vs " +
                                   other.to_string());
          break;
        }
        case LayerKind::fc: {
          if (!std::holds_alternative<FullyConnected>(l.params)) fail("missing fc parameters");
          const FullyConnected& f = l.fc();
          if (f.in_features != in.elements()) {
            fail("expects " + std::to_string(f.in_features) + " inputs, got " + in.to_string());
          }
          if (f.materialized() && f.weights.size() != f.in_features * f.out_features) {
            fail("weight count mismatch");
          }
          if (!f.bias.empty() && f.bias.size() != f.out_features) fail("bias length mismatch");
          out = Shape3{f.out_features, 1, 1};
          break;
        }
        case LayerKind::channel_affine: {
          if (!std::holds_alternative<ChannelAffine>(l.params)) {
            fail("missing channel_affine parameters");
          }
          const ChannelAffine& a = l.affine();
          if (a.channels != in.channels) fail("channel count mismatch with input " +
                                              in.to_string());
          if (a.materialized() &&
              (a.scale.size() != a.channels || a.shift.size() != a.channels)) {
            fail("scale/shift length mismatch");
          }
          break;
        }
      }
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      if (msg.rfind("layer '", 0) == 0) throw;
      throw ShapeError("layer '" + l.id + "': " + msg);
    }
    trace.inputs.push_back(in);
    trace.outputs.push_back(out);
  }
  return trace;
}

void assign_default_stages(NetworkSpec& net) {
  const ShapeTrace trace = infer_shapes(net);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& l = net.layers[i];
    if (!l.stage.empty()) continue;
    const Shape3& in = trace.inputs[i];
    l.stage = "s" + std::to_string(in.height) + "x" + std::to_string(in.width);
  }
}

}  // namespace fgc
