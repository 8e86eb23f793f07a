#include "support.hpp"

#include "flint/errors.hpp"

#include <doctest.h>

#include <cmath>

using namespace flint;

TEST_CASE("LeNet preset taps the final convolutional block") {
  const auto bundle = build_bundle<float>(preset("lenet_mnist"), 1);
  CHECK(bundle.tap_dim() == 800);
  CHECK(bundle.attribute_count() == 25);
  CHECK(bundle.class_count() == 10);
  const Matrix<float> x = test::random_images(4, 784, 3).cast<float>();
  const auto out = forward_with_taps(bundle, x);
  CHECK(out.logits.rows() == 4);
  CHECK(out.logits.cols() == 10);
  CHECK(out.taps.rows() == 4);
  CHECK(out.taps.cols() == 800);
  const Matrix<float> x_hat = decode(bundle, Matrix<float>(Matrix<float>::Constant(8, 25, 0.5f)));
  CHECK(x_hat.rows() == 8);
  CHECK(x_hat.cols() == 784);
}

TEST_CASE("tap on the output layer is rejected") {
  BundleSpec spec = preset("toy");
  spec.taps.tap_indices = {static_cast<int>(spec.predictor.layers.size())};
  CHECK_THROWS_AS(build_bundle<double>(spec, 1), ShapeError);
  spec.taps.tap_indices = {0};
  CHECK_THROWS_AS(build_bundle<double>(spec, 1), ShapeError);
  spec.taps.tap_indices = {3, 1};
  CHECK_THROWS_AS(build_bundle<double>(spec, 1), ShapeError);
}

TEST_CASE("same seed gives bit-identical parameters") {
  const auto a = build_bundle<float>(preset("lenet_shapes"), 7);
  const auto b = build_bundle<float>(preset("lenet_shapes"), 7);
  const auto c = build_bundle<float>(preset("lenet_shapes"), 8);
  CHECK(a.parameters().digest() == b.parameters().digest());
  CHECK(a.parameters().digest() != c.parameters().digest());
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    CHECK(a.parameters()[i].value == b.parameters()[i].value);
}

TEST_CASE("forward is a pure function of each row") {
  const auto bundle = test::generic_toy(4);
  Matrix<double> x = test::random_images(3, 36, 5);
  x.row(2) = x.row(0);
  const auto out = forward_with_taps(bundle, x);
  CHECK(out.logits.row(0) == out.logits.row(2));
  CHECK(out.taps.row(0) == out.taps.row(2));
  const Matrix<double> phi = attributes(bundle, out.taps);
  CHECK(decode(bundle, phi).row(0) == decode(bundle, phi).row(2));
}

TEST_CASE("two taps are concatenated in index order") {
  BundleSpec spec = preset("toy");
  spec.taps.tap_indices = {1, 3};
  spec.interpreter.psi_layers = parse_layers("fc(40,6) relu fc(6,3) relu");
  const auto bundle = build_bundle<double>(spec, 2);
  CHECK(bundle.tap_dims() == std::vector<int>{32, 8});
  const Matrix<double> x = test::random_images(2, 36, 6);
  Trace<double> trace;
  const auto out = forward_with_taps(bundle, x, &trace);
  CHECK(out.taps.cols() == 40);
  CHECK(out.taps.leftCols(32) == trace.values[1]);
  CHECK(out.taps.rightCols(8) == trace.values[3]);
}

TEST_CASE("attributes are non-negative") {
  const auto bundle = build_bundle<float>(preset("lenet_shapes"), 9);
  const Matrix<float> x = test::random_images(1000, 784, 10).cast<float>();
  const auto out = forward_with_taps(bundle, x);
  CHECK(attributes(bundle, out.taps).minCoeff() >= 0.0f);
  CHECK(attributes(bundle, Matrix<float>(Matrix<float>::Zero(3, 800))).minCoeff() >= 0.0f);
  CHECK_THROWS_AS(attributes(bundle, Matrix<float>(Matrix<float>::Zero(3, 801))), ShapeError);
}

TEST_CASE("interpreter head is softmax of phi W") {
  auto bundle = test::generic_toy(12);
  const Matrix<double> phi = test::random_images(6, 3, 13) * 2.0;
  auto& w = bundle.parameters()[bundle.head_index()].value;

  const Vector<double> keep = w;
  w.setZero();
  const Matrix<double> zero_w = interpreter_forward(bundle, phi);
  CHECK((zero_w.array() - 1.0 / 3.0).abs().maxCoeff() <= 1e-15);
  w = keep;
  const Matrix<double> zero_phi = interpreter_forward(bundle, Matrix<double>(Matrix<double>::Zero(2, 3)));
  CHECK((zero_phi.array() - 1.0 / 3.0).abs().maxCoeff() <= 1e-15);

  const Matrix<double> g = interpreter_forward(bundle, phi);
  for (int i = 0; i < 6; ++i) {
    double s[3], z = 0.0;
    for (int c = 0; c < 3; ++c) {
      s[c] = 0.0;
      for (int j = 0; j < 3; ++j) s[c] += phi(i, j) * bundle.head_weight(j, c);
      z += std::exp(s[c]);
    }
    for (int c = 0; c < 3; ++c) CHECK(std::abs(g(i, c) - std::exp(s[c]) / z) <= 1e-10);
    CHECK(std::abs(g.row(i).sum() - 1.0) <= 1e-6);
  }
  CHECK_THROWS_AS(interpreter_forward(bundle, Matrix<double>(Matrix<double>::Zero(2, 4))), ShapeError);
  CHECK_THROWS_AS(decode(bundle, Matrix<double>(Matrix<double>::Zero(2, 4))), ShapeError);
}

TEST_CASE("logit input gradient matches central differences") {
  const auto bundle = test::generic_toy(21);
  Matrix<double> x = test::random_images(1, 36, 22);
  const Matrix<double> weights = test::random_images(1, 3, 23);
  Trace<double> trace;
  bundle.predictor().forward(bundle.parameters(), x, &trace);
  const Matrix<double> analytic =
      bundle.predictor().backward(bundle.parameters(), trace, weights, static_cast<Gradients<double>*>(nullptr), {}, true);
  Eigen::VectorXd numeric(36);
  for (int k = 0; k < 36; ++k) {
    const double keep = x(0, k);
    x(0, k) = keep + 1e-5;
    const double up = (forward_with_taps(bundle, x).logits.array() * weights.array()).sum();
    x(0, k) = keep - 1e-5;
    const double down = (forward_with_taps(bundle, x).logits.array() * weights.array()).sum();
    x(0, k) = keep;
    numeric[k] = (up - down) / 2e-5;
  }
  CHECK(test::relative_error(Eigen::Map<const Eigen::VectorXd>(analytic.data(), 36), numeric) <= 1e-4);
}

TEST_CASE("inconsistent layer chains are rejected") {
  const char* predictors[] = {
      "conv(1,2,3,1) relu maxpool(2) fc(9,3)",       // 8 features reach fc(9,.)
      "conv(2,2,3,1) relu maxpool(2) fc(8,3)",       // wrong input maps
      "conv(1,2,7,1) relu fc(8,3)",                  // kernel larger than the image
      "conv(1,2,3,1) relu maxpool(2) fc(8,4)",       // 4 logits for 3 classes
      "conv(1,2,3,1) relu maxpool(8) fc(8,3)",       // window larger than the map
      "fc(36,3)",                                    // no hidden layer
  };
  for (const char* p : predictors) {
    BundleSpec spec = preset("toy");
    spec.predictor.layers = parse_layers(p);
    if (spec.taps.tap_indices[0] >= static_cast<int>(spec.predictor.layers.size())) spec.taps.tap_indices = {1};
    INFO(p);
    CHECK_THROWS_AS(build_bundle<double>(spec, 1), ShapeError);
  }
  {
    BundleSpec spec = preset("toy");
    spec.interpreter.psi_layers = parse_layers("fc(8,6) relu fc(6,3)");  // no final rectifier
    CHECK_THROWS_AS(build_bundle<double>(spec, 1), ShapeError);
  }
  {
    BundleSpec spec = preset("toy");
    spec.interpreter.psi_layers = parse_layers("fc(8,6) relu fc(6,4) relu");  // J mismatch
    CHECK_THROWS_AS(build_bundle<double>(spec, 1), ShapeError);
  }
  {
    BundleSpec spec = preset("toy");
    spec.decoder.layers = parse_layers("fc(3,8) relu reshape(2,2,2) tconv(2,1,3,2)");  // 5x5 output
    CHECK_THROWS_AS(build_bundle<double>(spec, 1), ShapeError);
  }
  {
    BundleSpec spec = preset("toy");
    spec.decoder.layers = parse_layers("fc(3,9) relu reshape(2,2,2) tconv(2,1,4,2)");  // reshape size
    CHECK_THROWS_AS(build_bundle<double>(spec, 1), ShapeError);
  }
}

TEST_CASE("layer text round trip") {
  const auto layers = parse_layers("conv(1,20,5,1) relu maxpool(2) fc(800,500) sigmoid reshape(4,7,7) tconv(4,8,4,2,1)");
  CHECK(layers.size() == 7);
  CHECK(describe(parse_layers(describe(layers))) == describe(layers));
  CHECK_THROWS_AS(parse_layer("fc(1)"), ConfigError);
  CHECK_THROWS_AS(parse_layer("dense(3,4)"), ConfigError);
}

TEST_CASE("float and double bundles agree") {
  const auto d = test::generic_toy(3);
  const auto f = d.cast<float>();
  const Matrix<double> x = test::random_images(4, 36, 1);
  const Matrix<double> ld = forward_with_taps(d, x).logits;
  const Matrix<float> lf = forward_with_taps(f, Matrix<float>(x.cast<float>())).logits;
  CHECK((ld - lf.cast<double>()).cwiseAbs().maxCoeff() <= 1e-5);
}
