#include "fgc/forward.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "fgc/error.hpp"
#include "fgc/linalg.hpp"

namespace fgc {

FeatureMap conv_forward(const ConvWeights& conv, const FeatureMap& input) {
  const ConvShape& s = conv.shape;
  if (!conv.materialized()) throw ShapeError("conv weights are not materialized");
  if (input.channels() != s.c_in) {
    throw ShapeError("conv expects " + std::to_string(s.c_in) + " channels, got " +
                     input.shape().to_string());
  }
  const Matrix patches = im2col(input, s.k, s.stride, s.pad);
  const std::size_t out_h = conv_output_extent(input.height(), s.k, s.stride, s.pad);
  const std::size_t out_w = conv_output_extent(input.width(), s.k, s.stride, s.pad);
  const std::size_t spatial = out_h * out_w;
  const std::size_t cg = s.c_in / s.groups;
  const std::size_t og = s.c_out / s.groups;
  const std::size_t span = cg * s.k * s.k;

  FeatureMap out(Shape3{s.c_out, out_h, out_w});
  double* dst = out.data().data();
  for (std::size_t g = 0; g < s.groups; ++g) {
    for (std::size_t o = 0; o < og; ++o) {
      const std::size_t oc = g * og + o;
      const double* filter = conv.weights.data() + oc * span;
      const double b = conv.bias.empty() ? 0.0 : conv.bias[oc];
      double* plane = dst + oc * spatial;
      for (std::size_t p = 0; p < spatial; ++p) {
        const double* patch = patches.row(p).data() + g * span;
        double acc = 0.0;
        for (std::size_t r = 0; r < span; ++r) acc += patch[r] * filter[r];
        plane[p] = acc + b;
      }
    }
  }
  return out;
}

FeatureMap pool_forward(const PoolParams& pool, bool is_max, const FeatureMap& input) {
  const std::size_t kh = pool.global ? input.height() : pool.k;
  const std::size_t kw = pool.global ? input.width() : pool.k;
  const std::size_t stride = pool.global ? 1 : pool.stride;
  const std::size_t pad = pool.global ? 0 : pool.pad;
  const std::size_t out_h = conv_output_extent(input.height(), kh, stride, pad);
  const std::size_t out_w = conv_output_extent(input.width(), kw, stride, pad);
  FeatureMap out(Shape3{input.channels(), out_h, out_w});
  const auto h = static_cast<std::ptrdiff_t>(input.height());
  const auto w = static_cast<std::ptrdiff_t>(input.width());
  for (std::size_t c = 0; c < input.channels(); ++c) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
            // Padding counts as zero for averages and is ignored for maxima.
            if (!inside) continue;
            const double v =
                input.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            acc = is_max ? std::max(acc, v) : acc + v;
          }
        }
        out.at(c, oy, ox) = is_max ? acc : acc / static_cast<double>(kh * kw);
      }
    }
  }
  return out;
}

namespace {

FeatureMap fc_forward(const FullyConnected& fc, const FeatureMap& input) {
  if (!fc.materialized()) throw ShapeError("fc weights are not materialized");
  const auto& x = input.data();
  FeatureMap out(Shape3{fc.out_features, 1, 1});
  for (std::size_t o = 0; o < fc.out_features; ++o) {
    const double* wrow = fc.weights.data() + o * fc.in_features;
    double acc = 0.0;
    for (std::size_t i = 0; i < fc.in_features; ++i) acc += wrow[i] * x[i];
    out.data()[o] = acc + (fc.bias.empty() ? 0.0 : fc.bias[o]);
  }
  return out;
}

FeatureMap affine_forward(const ChannelAffine& a, const FeatureMap& input) {
  if (!a.materialized()) throw ShapeError("channel_affine parameters are not materialized");
  FeatureMap out = input;
  const std::size_t spatial = input.height() * input.width();
  for (std::size_t c = 0; c < input.channels(); ++c) {
    double* plane = out.data().data() + c * spatial;
    for (std::size_t p = 0; p < spatial; ++p) plane[p] = a.scale[c] * plane[p] + a.shift[c];
  }
  return out;
}

}  // namespace

FeatureMap forward(const NetworkSpec& net, const FeatureMap& input) {
  return forward(net, input, TapRequest{}).output;
}

ForwardTrace forward(const NetworkSpec& net, const FeatureMap& input, const TapRequest& taps) {
  const ShapeTrace shapes = infer_shapes(net);
  if (!(input.shape() == net.input_shape)) {
    throw ShapeError("input shape " + input.shape().to_string() + " does not match network input " +
                     net.input_shape.to_string());
  }
  if (!taps.stop_after.empty()) net.index_of(taps.stop_after);

  // Keep activations only while a later layer still needs them.
  std::vector<std::size_t> last_use(net.layers.size(), 0);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const std::size_t src = resolve_input(net, i);
    if (src != kFromInput) last_use[src] = std::max(last_use[src], i);
    if (net.layers[i].kind == LayerKind::add && net.layers[i].source != kNetworkInput) {
      const std::size_t other = net.index_of(net.layers[i].source);
      last_use[other] = std::max(last_use[other], i);
    }
  }

  std::vector<FeatureMap> acts(net.layers.size());
  ForwardTrace trace;
  auto fetch = [&](std::size_t idx) -> const FeatureMap& {
    return idx == kFromInput ? input : acts[idx];
  };
  std::size_t last = net.layers.size() - 1;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    const FeatureMap& in = fetch(resolve_input(net, i));
    if (taps.inputs.count(l.id)) trace.inputs[l.id] = in;
    FeatureMap out;
    try {
      switch (l.kind) {
        case LayerKind::conv: out = conv_forward(l.conv(), in); break;
        case LayerKind::relu:
          out = in;
          for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
          break;
        case LayerKind::maxpool: out = pool_forward(l.pool(), true, in); break;
        case LayerKind::avgpool: out = pool_forward(l.pool(), false, in); break;
        case LayerKind::add: {
          const FeatureMap& other =
              l.source == kNetworkInput ? input : acts[net.index_of(l.source)];
          out = in;
          for (std::size_t j = 0; j < out.data().size(); ++j) out.data()[j] += other.data()[j];
          break;
        }
        case LayerKind::fc: out = fc_forward(l.fc(), in); break;
        case LayerKind::channel_affine: out = affine_forward(l.affine(), in); break;
      }
    } catch (const ShapeError& e) {
      throw ShapeError("layer '" + l.id + "': " + e.what());
    }
    if (!(out.shape() == shapes.outputs[i])) {
      throw ShapeError("layer '" + l.id + "' produced " + out.shape().to_string() + ", expected " +
                       shapes.outputs[i].to_string());
    }
    if (taps.outputs.count(l.id)) trace.outputs[l.id] = out;
    acts[i] = std::move(out);
    for (std::size_t j = 0; j < i; ++j) {
      if (last_use[j] == i) acts[j] = FeatureMap{};
    }
    if (l.id == taps.stop_after) {
      last = i;
      break;
    }
  }
  trace.output = std::move(acts[last]);
  return trace;
}

}  // namespace fgc
