#include <doctest.h>

#include <filesystem>

#include "fgc/decomposer.hpp"
#include "fgc/error.hpp"
#include "fgc/fixtures.hpp"
#include "fgc/forward.hpp"
#include "fgc/linalg.hpp"
#include "fgc/model_io.hpp"
#include "fgc/reconstructor.hpp"
#include "oracles.hpp"

using namespace fgc;
namespace fs = std::filesystem;

namespace {

NetworkSpec toy_net(std::uint64_t seed, std::vector<std::size_t> channels = {8, 8, 8},
                    std::size_t input_channels = 8) {
  ToyCnnOptions o;
  o.input = Shape3{input_channels, 6, 6};
  o.channels = std::move(channels);
  o.strides.assign(o.channels.size(), 1);
  NetworkSpec net = make_toy_cnn(o);
  initialize_weights(net, seed);
  return net;
}

NetworkSpec decompose_all(const NetworkSpec& net, std::size_t n) {
  NetworkSpec comp = net;
  for (const auto& l : net.layers) {
    if (l.kind != LayerKind::conv) continue;
    comp = replace_with_decomposition(comp, l.id, decompose_layer(l.conv(), n, {}, l.id));
  }
  return comp;
}

// Oracle with intercept: regress Y on [Y*, 1] through the pseudo-inverse.
std::pair<Matrix, std::vector<double>> pinv_fit(const Matrix& y, const Matrix& ys) {
  Matrix aug(ys.rows(), ys.cols() + 1, 1.0);
  for (std::size_t r = 0; r < ys.rows(); ++r)
    for (std::size_t c = 0; c < ys.cols(); ++c) aug(r, c) = ys(r, c);
  const Matrix coef = oracle::naive_matmul(oracle::pseudo_inverse(aug), y);
  std::vector<double> delta(ys.cols());
  for (std::size_t c = 0; c < ys.cols(); ++c) delta[c] = coef(ys.cols(), c);
  return {coef.block(0, 0, ys.cols(), ys.cols()), delta};
}

}  // namespace

TEST_CASE("synthetic calibration is seeded") {
  const CalibrationSet a = synthetic_calibration(Shape3{2, 3, 3}, 4, 9);
  const CalibrationSet b = synthetic_calibration(Shape3{2, 3, 3}, 4, 9);
  const CalibrationSet c = synthetic_calibration(Shape3{2, 3, 3}, 4, 10);
  CHECK(a.samples == b.samples);
  CHECK(a.samples != c.samples);
  CHECK(a.source == "synthetic");
  CHECK_THROWS_AS(synthetic_calibration(Shape3{2, 3, 3}, 0, 1), PlanError);
}

TEST_CASE("calibration file round trip") {
  const fs::path dir = fs::temp_directory_path() / "fgc_test_calib";
  fs::create_directories(dir);
  CalibrationSet a = synthetic_calibration(Shape3{2, 3, 3}, 5, 1);
  for (auto& s : a.samples)
    for (double& v : s.data()) v = static_cast<double>(static_cast<float>(v));
  save_calibration(a, dir / "calib.json");
  const CalibrationSet b = load_calibration(dir / "calib.json");
  CHECK(b.samples == a.samples);
  fs::resize_file(dir / "calib.bin", 12);
  CHECK_THROWS_AS(load_calibration(dir / "calib.json"), FormatError);
}

TEST_CASE("lossless prefix gives Y* == Y") {
  const NetworkSpec net = toy_net(1);
  const NetworkSpec comp = decompose_all(net, 8);
  const CalibrationSet calib = synthetic_calibration(net.input_shape, 4, 2);
  for (const char* id : {"conv1", "conv2", "conv3"}) {
    const ResponsePair r = collect_responses(net, comp, calib, id);
    CHECK(max_abs_diff(r.original, r.approximated) <= 1e-8 * frobenius_norm(r.original));
  }
}

TEST_CASE("first decomposed layer responds as X D P") {
  const NetworkSpec net = toy_net(3);
  const NetworkSpec comp = decompose_all(net, 1);
  const CalibrationSet calib = synthetic_calibration(net.input_shape, 3, 4);
  const ResponsePair r = collect_responses(net, comp, calib, "conv1");
  const ConvWeights& w = net.find("conv1")->conv();
  const GroupDecomposition d = decompose_layer(w, 1);
  const Matrix dp = assembled_product(d);
  std::vector<Matrix> parts;
  for (const auto& s : calib.samples) {
    Matrix y = oracle::naive_matmul(im2col(s, 3, 1, 1), dp);
    for (std::size_t p = 0; p < y.rows(); ++p)
      for (std::size_t o = 0; o < y.cols(); ++o) y(p, o) += w.bias[o];
    parts.push_back(y);
  }
  CHECK(max_abs_diff(r.approximated, vstack(parts)) <= 1e-10);
}

TEST_CASE("asymmetric responses carry upstream error") {
  const NetworkSpec net = toy_net(5);
  const NetworkSpec comp = decompose_all(net, 1);
  const CalibrationSet calib = synthetic_calibration(net.input_shape, 3, 6);
  const ResponsePair asym = collect_responses(net, comp, calib, "conv2");
  const ResponsePair sym = collect_responses(net, comp, calib, "conv2", ResponseOptions{true});
  CHECK(asym.original == sym.original);
  CHECK(max_abs_diff(asym.approximated, sym.approximated) > 1e-3);
  // The symmetric variant feeds D with the original conv1 activations.
  const ResponsePair first = collect_responses(net, comp, calib, "conv1", ResponseOptions{true});
  const ResponsePair first_asym = collect_responses(net, comp, calib, "conv1");
  CHECK(max_abs_diff(first.approximated, first_asym.approximated) <= 1e-12);
}

TEST_CASE("responses require a decomposed layer") {
  const NetworkSpec net = toy_net(7);
  const CalibrationSet calib = synthetic_calibration(net.input_shape, 2, 1);
  CHECK_THROWS_AS(collect_responses(net, net, calib, "conv1"), PlanError);
  CHECK_THROWS_AS(collect_responses(net, net, calib, "relu1"), PlanError);
}

TEST_CASE("identical responses give the identity") {
  oracle::Rng rng(1);
  const Matrix y = oracle::random_matrix(200, 6, rng);
  const ReconstructionResult r = solve_reconstruction(y, y);
  CHECK(max_abs_diff(r.a, Matrix::identity(6)) <= 1e-9);
  for (double d : r.bias_delta) CHECK(std::abs(d) <= 1e-9);
  CHECK(r.residual_after <= 1e-9);
}

TEST_CASE("planted solution is recovered") {
  oracle::Rng rng(2);
  const Matrix ys = oracle::random_matrix(300, 5, rng);
  const Matrix m = oracle::random_matrix(5, 5, rng);
  const Matrix y = oracle::naive_matmul(ys, m);
  ReconstructionOptions o;
  o.ridge = 0.0;
  o.intercept = false;
  const ReconstructionResult r = solve_reconstruction(y, ys, o);
  CHECK(max_abs_diff(r.a, m) <= 1e-8);
  o.intercept = true;
  const ReconstructionResult ri = solve_reconstruction(y, ys, o);
  CHECK(max_abs_diff(ri.a, m) <= 1e-8);
  for (double d : ri.bias_delta) CHECK(std::abs(d) <= 1e-8);
}

TEST_CASE("noisy responses: residual bounded by noise, never worse than identity") {
  oracle::Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix ys = oracle::random_matrix(400, 6, rng);
    const Matrix noise = oracle::random_matrix(400, 6, rng, 0.1);
    const Matrix y = ys + noise;
    ReconstructionOptions o;
    o.ridge = 0.0;
    const ReconstructionResult r = solve_reconstruction(y, ys, o);
    CHECK(r.residual_after <= frobenius_norm(noise) + 1e-12);
    CHECK(r.residual_after < r.residual_before);
    const auto [a, delta] = pinv_fit(y, ys);
    CHECK(max_abs_diff(r.a, a) <= 1e-8);
    CHECK(oracle::max_rel_diff(r.bias_delta, delta) <= 1e-8);
  }
}

TEST_CASE("default ridge value and monotonicity") {
  oracle::Rng rng(4);
  const Matrix ys = oracle::random_matrix(100, 4, rng);
  CHECK(default_ridge(ys) == doctest::Approx(1e-6 * frobenius_norm(ys) * frobenius_norm(ys) / 4));
  const Matrix y = ys + oracle::random_matrix(100, 4, rng, 0.3);
  for (double ridge : {0.0, 1e-3, 1.0, 1e3, 1e9}) {
    ReconstructionOptions o;
    o.ridge = ridge;
    const ReconstructionResult r = solve_reconstruction(y, ys, o);
    CHECK(r.residual_after <= r.residual_before);
    CHECK(r.ridge == ridge);
  }
}

TEST_CASE("too few rows is an error that asks for more samples") {
  oracle::Rng rng(5);
  const Matrix y = oracle::random_matrix(4, 6, rng);
  try {
    solve_reconstruction(y, y);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("calibration") != std::string::npos);
  }
  const Matrix few = oracle::random_matrix(20, 6, rng);
  CHECK_FALSE(solve_reconstruction(few, few).warnings.empty());
  CHECK_THROWS_AS(solve_reconstruction(Matrix(5, 2), Matrix(5, 3)), ShapeError);
}

TEST_CASE("merging the identity leaves P unchanged") {
  oracle::Rng rng(6);
  const ConvWeights w = oracle::random_conv(ConvShape{4, 6, 3, 1, 1, 1}, rng);
  const GroupDecomposition d = decompose_layer(w, 2);
  const GroupDecomposition m = merge_into_pointwise(d, Matrix::identity(6), std::vector<double>(6, 0.0));
  for (std::size_t i = 0; i < d.p_layer.weights.size(); ++i)
    CHECK(std::abs(m.p_layer.weights[i] - d.p_layer.weights[i]) <= 1e-12);
  CHECK(oracle::max_rel_diff(m.p_layer.bias, d.p_layer.bias) <= 1e-12);
  CHECK_THROWS_AS(merge_into_pointwise(d, Matrix::identity(5), {}), ShapeError);
}

TEST_CASE("merged P equals applying A after P") {
  oracle::Rng rng(7);
  const ConvWeights w = oracle::random_conv(ConvShape{4, 6, 3, 1, 1, 1}, rng);
  const GroupDecomposition d = decompose_layer(w, 2);
  const Matrix a = oracle::random_matrix(6, 6, rng);
  std::vector<double> delta(6);
  for (auto& v : delta) v = std::normal_distribution<double>()(rng);
  const GroupDecomposition m = merge_into_pointwise(d, a, delta);
  const FeatureMap x = oracle::random_feature_map(Shape3{4, 5, 5}, rng);
  const FeatureMap hidden = conv_forward(d.d_layer, x);
  const Matrix separate = oracle::naive_matmul(to_response_rows(conv_forward(d.p_layer, hidden)), a);
  const Matrix merged = to_response_rows(conv_forward(m.p_layer, hidden));
  double diff = 0.0;
  for (std::size_t p = 0; p < merged.rows(); ++p)
    for (std::size_t o = 0; o < 6; ++o) diff = std::max(diff, std::abs(separate(p, o) + delta[o] - merged(p, o)));
  CHECK(diff <= 1e-10);
  CHECK(m.p_layer.shape == d.p_layer.shape);
}

TEST_CASE("front-to-back reconstruction improves held-out responses") {
  const NetworkSpec net = toy_net(8);
  NetworkSpec comp = decompose_all(net, 1);
  const NetworkSpec unmerged = comp;
  const CalibrationSet fit = synthetic_calibration(net.input_shape, 40, 11);
  const CalibrationSet held = synthetic_calibration(net.input_shape, 20, 12);
  for (const char* id : {"conv1", "conv2", "conv3"}) {
    const ResponsePair r = collect_responses(net, comp, fit, id);
    const ReconstructionResult res = solve_reconstruction(r.original, r.approximated);
    CHECK(res.residual_after <= res.residual_before);
    merge_into_network(comp, id, res.a, res.bias_delta);
    const ResponsePair after = collect_responses(net, comp, fit, id);
    CHECK(frobenius_norm(after.original - after.approximated) ==
          doctest::Approx(res.residual_after).epsilon(1e-9));
  }
  const ResponsePair before = collect_responses(net, unmerged, held, "conv3");
  const ResponsePair after = collect_responses(net, comp, held, "conv3");
  CHECK(frobenius_norm(after.original - after.approximated) <=
        frobenius_norm(before.original - before.approximated));
}

TEST_CASE("reconstruction is deterministic") {
  const NetworkSpec net = toy_net(9);
  const NetworkSpec comp = decompose_all(net, 2);
  const CalibrationSet calib = synthetic_calibration(net.input_shape, 20, 3);
  const ResponsePair r = collect_responses(net, comp, calib, "conv2");
  CHECK(solve_reconstruction(r.original, r.approximated).a ==
        solve_reconstruction(r.original, r.approximated).a);
}
