#include "fgc/fixtures.hpp"

#include <string>

#include "fgc/error.hpp"

namespace fgc {

namespace {

LayerSpec conv_layer(std::string id, std::size_t c_in, std::size_t c_out, std::size_t k,
                     std::size_t stride, std::size_t pad, std::string input = {}) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = LayerKind::conv;
  l.input = std::move(input);
  ConvWeights c;
  c.shape = ConvShape{c_in, c_out, k, 1, stride, pad};
  l.params = std::move(c);
  return l;
}

LayerSpec simple_layer(std::string id, LayerKind kind) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = kind;
  return l;
}

LayerSpec affine_layer(std::string id, std::size_t channels) {
  LayerSpec l = simple_layer(std::move(id), LayerKind::channel_affine);
  ChannelAffine a;
  a.channels = channels;
  l.params = std::move(a);
  return l;
}

LayerSpec pool_layer(std::string id, LayerKind kind, PoolParams p) {
  LayerSpec l = simple_layer(std::move(id), kind);
  l.params = p;
  return l;
}

LayerSpec fc_layer(std::string id, std::size_t in, std::size_t out) {
  LayerSpec l = simple_layer(std::move(id), LayerKind::fc);
  FullyConnected f;
  f.in_features = in;
  f.out_features = out;
  l.params = std::move(f);
  return l;
}

}  // namespace

NetworkSpec make_resnet34() {
  NetworkSpec net;
  net.name = "resnet34";
  net.input_shape = Shape3{3, 224, 224};
  auto& L = net.layers;
  L.push_back(conv_layer("conv1", 3, 64, 7, 2, 3));
  L.push_back(affine_layer("conv1_bn", 64));
  L.push_back(simple_layer("conv1_relu", LayerKind::relu));
  L.push_back(pool_layer("pool1", LayerKind::maxpool, PoolParams{3, 2, 1, false}));

  const std::size_t widths[] = {64, 128, 256, 512};
  const std::size_t blocks[] = {3, 4, 6, 3};
  std::size_t c_in = 64;
  std::string block_in = "pool1";
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t c = widths[s];
    for (std::size_t b = 0; b < blocks[s]; ++b) {
      const std::string p = "conv" + std::to_string(s + 2) + "_" + std::to_string(b + 1);
      const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
      L.push_back(conv_layer(p + "_a", c_in, c, 3, stride, 1, block_in));
      L.push_back(affine_layer(p + "_a_bn", c));
      L.push_back(simple_layer(p + "_a_relu", LayerKind::relu));
      L.push_back(conv_layer(p + "_b", c, c, 3, 1, 1));
      L.push_back(affine_layer(p + "_b_bn", c));
      std::string shortcut = block_in;
      if (c_in != c || stride != 1) {
        L.push_back(conv_layer(p + "_proj", c_in, c, 1, stride, 0, block_in));
        L.push_back(affine_layer(p + "_proj_bn", c));
        shortcut = p + "_proj_bn";
      }
      LayerSpec add = simple_layer(p + "_add", LayerKind::add);
      add.input = p + "_b_bn";
      add.source = shortcut;
      L.push_back(std::move(add));
      L.push_back(simple_layer(p + "_relu", LayerKind::relu));
      block_in = p + "_relu";
      c_in = c;
    }
  }
  PoolParams gap;
  gap.global = true;
  L.push_back(pool_layer("avgpool", LayerKind::avgpool, gap));
  L.push_back(fc_layer("fc", 512, 1000));
  assign_default_stages(net);
  return net;
}

NetworkSpec make_vgg16() {
  NetworkSpec net;
  net.name = "vgg16";
  net.input_shape = Shape3{3, 224, 224};
  auto& L = net.layers;
  const std::size_t widths[] = {64, 128, 256, 512, 512};
  const std::size_t depth[] = {2, 2, 3, 3, 3};
  std::size_t c_in = 3;
  for (std::size_t s = 0; s < 5; ++s) {
    for (std::size_t b = 0; b < depth[s]; ++b) {
      const std::string p = "conv" + std::to_string(s + 1) + "_" + std::to_string(b + 1);
      L.push_back(conv_layer(p, c_in, widths[s], 3, 1, 1));
      L.push_back(simple_layer(p + "_relu", LayerKind::relu));
      c_in = widths[s];
    }
    L.push_back(pool_layer("pool" + std::to_string(s + 1), LayerKind::maxpool,
                           PoolParams{2, 2, 0, false}));
  }
  L.push_back(fc_layer("fc6", 512 * 7 * 7, 4096));
  L.push_back(simple_layer("fc6_relu", LayerKind::relu));
  L.push_back(fc_layer("fc7", 4096, 4096));
  L.push_back(simple_layer("fc7_relu", LayerKind::relu));
  L.push_back(fc_layer("fc8", 4096, 1000));
  assign_default_stages(net);
  return net;
}

NetworkSpec make_toy_cnn(const ToyCnnOptions& options) {
  if (options.channels.empty() || options.channels.size() != options.strides.size()) {
    throw ShapeError("toy cnn needs one stride per conv layer");
  }
  NetworkSpec net;
  net.name = "toy" + std::to_string(options.channels.size());
  net.input_shape = options.input;
  std::size_t c_in = options.input.channels;
  for (std::size_t i = 0; i < options.channels.size(); ++i) {
    const std::string id = "conv" + std::to_string(i + 1);
    if (i > 0 && options.relu) {
      net.layers.push_back(simple_layer("relu" + std::to_string(i), LayerKind::relu));
    }
    net.layers.push_back(conv_layer(id, c_in, options.channels[i], options.kernel,
                                    options.strides[i], options.kernel / 2));
    c_in = options.channels[i];
  }
  assign_default_stages(net);
  return net;
}

}  // namespace fgc
