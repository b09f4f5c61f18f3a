#include <doctest.h>

#include "fgc/error.hpp"
#include "fgc/fixtures.hpp"
#include "fgc/forward.hpp"
#include "fgc/model_io.hpp"
#include "oracles.hpp"

using namespace fgc;

namespace {

LayerSpec conv_layer(std::string id, ConvWeights w) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = LayerKind::conv;
  l.params = std::move(w);
  return l;
}

double max_abs(const FeatureMap& a, const FeatureMap& b) {
  REQUIRE(a.shape() == b.shape());
  double d = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
  return d;
}

}  // namespace

TEST_CASE("delta kernel is the identity") {
  ConvWeights w;
  w.shape = ConvShape{3, 3, 3, 1, 1, 1};
  w.weights.assign(w.shape.weight_count(), 0.0);
  for (std::size_t c = 0; c < 3; ++c) w.at(c, c, 1, 1) = 1.0;
  oracle::Rng rng(1);
  const FeatureMap x = oracle::random_feature_map(Shape3{3, 6, 5}, rng);
  CHECK(conv_forward(w, x) == x);
}

TEST_CASE("depthwise all-ones kernel sums nine neighbours") {
  ConvWeights w;
  w.shape = ConvShape{4, 4, 3, 4, 1, 1};
  w.weights.assign(w.shape.weight_count(), 1.0);
  const FeatureMap y = conv_forward(w, FeatureMap(Shape3{4, 5, 5}, 1.0));
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t yy = 1; yy < 4; ++yy)
      for (std::size_t xx = 1; xx < 4; ++xx) CHECK(y.at(c, yy, xx) == 9.0);
  CHECK(y.at(0, 0, 0) == 4.0);
  CHECK(y.at(0, 0, 2) == 6.0);
}

TEST_CASE("conv forward matches the direct oracle on random layers") {
  oracle::Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t groups = oracle::uniform(rng, 1, 3);
    const std::size_t cin = groups * oracle::uniform(rng, 1, 4);
    const std::size_t cout = groups * oracle::uniform(rng, 1, 4);
    const std::size_t k = oracle::uniform(rng, 1, 4);
    const std::size_t stride = oracle::uniform(rng, 1, 3);
    const std::size_t pad = oracle::uniform(rng, 0, k / 2 + 1);
    const std::size_t h = oracle::uniform(rng, k, 9);
    const std::size_t w = oracle::uniform(rng, k, 9);
    const ConvWeights conv = oracle::random_conv(ConvShape{cin, cout, k, groups, stride, pad}, rng);
    const FeatureMap x = oracle::random_feature_map(Shape3{cin, h, w}, rng);
    CHECK(max_abs(conv_forward(conv, x), oracle::direct_conv(conv, x)) <= 1e-10);
  }
}

TEST_CASE("two-conv network matches the oracle") {
  oracle::Rng rng(5);
  NetworkSpec net;
  net.name = "two";
  net.input_shape = Shape3{3, 7, 7};
  const ConvWeights a = oracle::random_conv(ConvShape{3, 6, 3, 1, 2, 1}, rng);
  const ConvWeights b = oracle::random_conv(ConvShape{6, 4, 3, 2, 1, 1}, rng);
  net.layers.push_back(conv_layer("a", a));
  net.layers.push_back(conv_layer("b", b));
  const FeatureMap x = oracle::random_feature_map(net.input_shape, rng);
  const FeatureMap ref = oracle::direct_conv(b, oracle::direct_conv(a, x));
  CHECK(max_abs(forward(net, x), ref) <= 1e-10);
}

TEST_CASE("pooling") {
  FeatureMap x(Shape3{1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x.data()[i] = static_cast<double>(i);
  const FeatureMap mx = pool_forward(PoolParams{2, 2, 0, false}, true, x);
  CHECK(mx.data() == std::vector<double>{5, 7, 13, 15});
  const FeatureMap av = pool_forward(PoolParams{2, 2, 0, false}, false, x);
  CHECK(av.data() == std::vector<double>{2.5, 4.5, 10.5, 12.5});
  const FeatureMap gap = pool_forward(PoolParams{1, 1, 0, true}, false, x);
  CHECK(gap.data() == std::vector<double>{7.5});
  // Max pooling ignores padding even when all inputs are negative.
  const FeatureMap neg(Shape3{1, 2, 2}, -1.0);
  const FeatureMap pm = pool_forward(PoolParams{3, 2, 1, false}, true, neg);
  CHECK(pm.data() == std::vector<double>{-1.0});
}

TEST_CASE("taps capture inputs and outputs and stop early") {
  NetworkSpec net = make_toy_cnn();
  initialize_weights(net, 7);
  oracle::Rng rng(9);
  const FeatureMap x = oracle::random_feature_map(net.input_shape, rng);
  TapRequest taps;
  taps.inputs.insert("conv2");
  taps.outputs.insert("conv2");
  taps.stop_after = "conv2";
  const ForwardTrace t = forward(net, x, taps);
  REQUIRE(t.inputs.count("conv2"));
  CHECK(t.outputs.at("conv2") == t.output);
  CHECK(conv_forward(net.find("conv2")->conv(), t.inputs.at("conv2")) == t.output);
  CHECK_THROWS_AS(forward(net, x, TapRequest{{}, {}, "nope"}), ShapeError);
}

TEST_CASE("forward is deterministic") {
  NetworkSpec toy = make_toy_cnn();
  initialize_weights(toy, 3);
  oracle::Rng rng(11);
  const FeatureMap x = oracle::random_feature_map(toy.input_shape, rng);
  CHECK(forward(toy, x) == forward(toy, x));
}

TEST_CASE("wrong input shape is rejected") {
  NetworkSpec toy = make_toy_cnn();
  initialize_weights(toy, 3);
  CHECK_THROWS_AS(forward(toy, FeatureMap(Shape3{3, 9, 9})), ShapeError);
}

TEST_CASE("unmaterialized layers report the layer") {
  const NetworkSpec toy = make_toy_cnn();
  try {
    forward(toy, FeatureMap(toy.input_shape));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("conv1") != std::string::npos);
  }
}
