#include <doctest.h>

#include <cmath>

#include "fgc/decomposer.hpp"
#include "fgc/error.hpp"
#include "fgc/fixtures.hpp"
#include "fgc/flops.hpp"
#include "fgc/forward.hpp"
#include "fgc/linalg.hpp"
#include "fgc/model_io.hpp"
#include "oracles.hpp"

using namespace fgc;

namespace {

// Per-block oracle: discarded energy from Eigen's SVD of each row block.
double oracle_block_error(const Matrix& w, std::size_t row0, std::size_t rows, std::size_t n) {
  const auto s = oracle::singular_values(w.block(row0, 0, rows, w.cols()));
  double tail = 0.0;
  for (std::size_t i = n; i < s.size(); ++i) tail += s[i] * s[i];
  return std::sqrt(tail);
}

double max_abs(const FeatureMap& a, const FeatureMap& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
  return d;
}

}  // namespace

TEST_CASE("valid ranks are the divisors of c_in") {
  CHECK(valid_ranks(12) == std::vector<std::size_t>{1, 2, 3, 4, 6, 12});
  CHECK(valid_ranks(1) == std::vector<std::size_t>{1});
}

TEST_CASE("partition: one block is the full matrix") {
  oracle::Rng rng(1);
  const ConvWeights w = oracle::random_conv(ConvShape{4, 5, 3, 1, 1, 1}, rng);
  const auto blocks = partition_blocks(w, 4);
  REQUIRE(blocks.size() == 1);
  CHECK(blocks[0] == weight_matrix(w));
}

TEST_CASE("partition: depthwise 1x1 blocks are rows") {
  oracle::Rng rng(2);
  const ConvWeights w = oracle::random_conv(ConvShape{4, 3, 1, 1, 1, 0}, rng);
  const auto blocks = partition_blocks(w, 1);
  REQUIRE(blocks.size() == 4);
  const Matrix m = weight_matrix(w);
  for (std::size_t i = 0; i < 4; ++i) CHECK(blocks[i] == m.block(i, 0, 1, 3));
}

TEST_CASE("partition: restacking reproduces W exactly") {
  oracle::Rng rng(3);
  const ConvWeights w = oracle::random_conv(ConvShape{6, 7, 3, 1, 1, 1}, rng);
  const auto blocks = partition_blocks(w, 2);
  REQUIRE(blocks.size() == 3);
  CHECK(vstack(blocks) == weight_matrix(w));
}

TEST_CASE("partition errors") {
  oracle::Rng rng(4);
  const ConvWeights w = oracle::random_conv(ConvShape{6, 4, 3, 1, 1, 1}, rng);
  try {
    partition_blocks(w, 4);
    FAIL("expected PlanError");
  } catch (const PlanError& e) {
    CHECK(std::string(e.what()).find("1, 2, 3, 6") != std::string::npos);
  }
  const ConvWeights g = oracle::random_conv(ConvShape{6, 4, 3, 2, 1, 1}, rng);
  CHECK_THROWS_AS(partition_blocks(g, 3), PlanError);
}

TEST_CASE("low-rank W is recovered exactly at n = c_in") {
  oracle::Rng rng(5);
  ConvWeights w = oracle::random_conv(ConvShape{4, 10, 3, 1, 1, 1}, rng);
  const Matrix low = matmul(oracle::random_matrix(36, 4, rng), oracle::random_matrix(4, 10, rng));
  for (std::size_t o = 0; o < 10; ++o)
    for (std::size_t r = 0; r < 36; ++r) w.weights[o * 36 + r] = low(r, o);
  const GroupDecomposition d = decompose_layer(w, 4);
  CHECK(relative_error(assembled_product(d), low) <= 1e-10);
  CHECK(d.truncation_error <= 1e-10 * frobenius_norm(low));
}

TEST_CASE("1x1 layers are rejected unless forced") {
  oracle::Rng rng(6);
  const ConvWeights w = oracle::random_conv(ConvShape{8, 8, 1, 1, 1, 0}, rng);
  CHECK_THROWS_AS(decompose_layer(w, 2), PlanError);
  const GroupDecomposition d = decompose_layer(w, 2, DecomposeOptions{.force_1x1 = true});
  CHECK(d.d_layer.shape.k == 1);
}

TEST_CASE("per-block Eckart-Young against an independent SVD") {
  oracle::Rng rng(7);
  const ConvWeights w = oracle::random_conv(ConvShape{8, 16, 3, 1, 1, 1}, rng);
  const GroupDecomposition d = decompose_layer(w, 2);
  const Matrix m = weight_matrix(w);
  double total_sq = 0.0;
  REQUIRE(d.block_truncation_error.size() == 4);
  for (std::size_t b = 0; b < 4; ++b) {
    const double ref = oracle_block_error(m, b * 18, 18, 2);
    CHECK(std::abs(d.block_truncation_error[b] - ref) <= 1e-9 * ref);
    total_sq += ref * ref;
  }
  CHECK(std::abs(d.truncation_error * d.truncation_error - total_sq) <= 1e-9 * total_sq);
  CHECK(std::abs(frobenius_norm(m - assembled_product(d)) - d.truncation_error) <= 1e-9 * d.truncation_error);
}

TEST_CASE("decomposition structure") {
  oracle::Rng rng(8);
  const ConvWeights w = oracle::random_conv(ConvShape{8, 12, 3, 1, 2, 1}, rng);
  const GroupDecomposition d = decompose_layer(w, 2, {}, "layer");
  CHECK(d.source_layer == "layer");
  CHECK(d.d_layer.shape == ConvShape{8, 8, 3, 4, 2, 1});
  CHECK(d.p_layer.shape == ConvShape{8, 12, 1, 1, 1, 0});
  CHECK(d.p_layer.bias == w.bias);
  CHECK(d.d_layer.bias.empty());
  const Matrix dm = assemble_group_matrix(d.d_layer);
  REQUIRE(dm.rows() == 72);
  REQUIRE(dm.cols() == 8);
  // Off-block entries are exactly zero.
  for (std::size_t r = 0; r < 72; ++r)
    for (std::size_t c = 0; c < 8; ++c)
      if (r / 18 != c / 2) CHECK(dm(r, c) == 0.0);
  CHECK(matmul(dm, pointwise_matrix(d.p_layer)) == assembled_product(d));
  // Singular values sit in D: the pointwise rows of each block are orthonormal.
  const Matrix p = pointwise_matrix(d.p_layer);
  for (std::size_t b = 0; b < 4; ++b) {
    const Matrix pb = p.block(2 * b, 0, 2, 12);
    CHECK(max_abs_diff(matmul(pb, pb.transpose()), Matrix::identity(2)) <= 1e-12);
  }
  for (const auto& s : d.block_singular_values) {
    for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] <= s[i - 1]);
  }
}

TEST_CASE("c_out smaller than n pads D with zero columns") {
  oracle::Rng rng(9);
  const ConvWeights w = oracle::random_conv(ConvShape{8, 3, 3, 1, 1, 1}, rng);
  const GroupDecomposition d = decompose_layer(w, 8);
  CHECK(relative_error(assembled_product(d), weight_matrix(w)) <= 1e-10);
}

TEST_CASE("truncation error is non-increasing in n") {
  oracle::Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const ConvWeights w = oracle::random_conv(ConvShape{12, 20, 3, 1, 1, 1}, rng);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t n : valid_ranks(12)) {
      const double e = decompose_layer(w, n).truncation_error;
      CHECK(e <= prev * (1 + 1e-12));
      prev = e;
    }
  }
}

TEST_CASE("jacobian rank of the assembled product") {
  CHECK(decomposed_jacobian_rank(256, 512, 4) == 256);
  CHECK(decomposed_jacobian_rank(1, 9, 1) == 1);
  CHECK(decomposed_jacobian_rank(64, 32, 8) == 32);
  oracle::Rng rng(11);
  const ConvWeights w = oracle::random_conv(ConvShape{8, 12, 3, 1, 1, 1}, rng);
  const auto s = oracle::singular_values(assembled_product(decompose_layer(w, 2)));
  CHECK(numerical_rank(s, 1e-8) == 8);
}

TEST_CASE("replacing every layer at n = c_in is lossless when channels do not widen") {
  ToyCnnOptions opts;
  opts.input = Shape3{8, 8, 8};
  opts.channels = {8, 8, 6, 6};
  NetworkSpec net = make_toy_cnn(opts);
  initialize_weights(net, 12);
  oracle::Rng rng(13);
  const FeatureMap x = oracle::random_feature_map(net.input_shape, rng);
  const FeatureMap ref = forward(net, x);
  NetworkSpec comp = net;
  for (const char* id : {"conv1", "conv2", "conv3", "conv4"}) {
    const ConvWeights& w = net.find(id)->conv();
    comp = replace_with_decomposition(comp, id, decompose_layer(w, w.shape.c_in, {}, id));
  }
  CHECK(comp.find("conv1") == nullptr);
  const LayerSpec* g = comp.find("conv2.group");
  REQUIRE(g);
  CHECK(g->stage == net.find("conv2")->stage);
  REQUIRE(g->conv().provenance);
  CHECK(g->conv().provenance->role == "group");
  CHECK(comp.find("conv2.pointwise")->conv().provenance->source_layer == "conv2");
  const FeatureMap y = forward(comp, x);
  double scale = 0.0;
  for (double v : ref.data()) scale = std::max(scale, std::abs(v));
  CHECK(max_abs(y, ref) <= 1e-10 * scale);
}

TEST_CASE("widening layers stay rank-capped at n = c_in") {
  oracle::Rng rng(14);
  const ConvWeights w = oracle::random_conv(ConvShape{3, 8, 3, 1, 1, 1}, rng);
  const GroupDecomposition d = decompose_layer(w, 3);
  const auto s = oracle::singular_values(weight_matrix(w));
  double tail = 0.0;
  for (std::size_t i = 3; i < s.size(); ++i) tail += s[i] * s[i];
  CHECK(d.truncation_error == doctest::Approx(std::sqrt(tail)).epsilon(1e-9));
  CHECK(d.truncation_error > 0.0);
}

TEST_CASE("replacement rewires residual references") {
  NetworkSpec net = make_resnet34();
  initialize_weights(net, 1);
  const ConvWeights& w = net.find("conv2_1_b")->conv();
  const NetworkSpec comp = replace_with_decomposition(net, "conv2_1_b", decompose_layer(w, 8, {}, "conv2_1_b"));
  CHECK_NOTHROW(infer_shapes(comp));
  const std::string& bn_input = comp.find("conv2_1_b_bn")->input;
  CHECK((bn_input.empty() || bn_input == "conv2_1_b.pointwise"));
  CHECK(network_flops(comp) < network_flops(net));
  CHECK_THROWS_AS(replace_with_decomposition(net, "missing", decompose_layer(w, 8)), Error);
}
