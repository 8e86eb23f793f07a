#include "support.hpp"

#include "flint/errors.hpp"
#include "flint/losses.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace flint;

namespace {

double entropy(std::vector<double> v) { return soft_entropy<double>(v); }

// Direct summation in long double, no max shift; only for moderate inputs.
long double entropy_reference(const std::vector<double>& v) {
  long double z = 0;
  for (double x : v) z += std::exp(static_cast<long double>(x));
  long double e = 0;
  for (double x : v) {
    const long double p = std::exp(static_cast<long double>(x)) / z;
    if (p > 0) e -= p * std::log(p);
  }
  return e;
}

}  // namespace

TEST_CASE("soft entropy closed forms") {
  CHECK(entropy({3.5, 3.5, 3.5, 3.5}) == doctest::Approx(1.3862943611198906).epsilon(1e-15));
  CHECK(entropy({-7.0, -7.0, -7.0, -7.0}) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(entropy({42.0}) == 0.0);
  // 50-digit mpmath value of -sum p log p for softmax([20,0,0,0]).
  const double oracle = 1.2985267742980778786788045342788786337379363009015e-7;
  CHECK(std::abs(entropy({20.0, 0.0, 0.0, 0.0}) - oracle) <= 1e-12);
}

TEST_CASE("soft entropy rejects non-finite input") {
  CHECK_THROWS_AS(entropy({0.0, std::numeric_limits<double>::quiet_NaN()}), NumericError);
  CHECK_THROWS_AS(entropy({std::numeric_limits<double>::infinity(), 0.0}), NumericError);
  CHECK_THROWS_AS(entropy({}), NumericError);
}

TEST_CASE("soft entropy bounds and shift invariance on random vectors") {
  Rng rng(2024);
  for (int trial = 0; trial < 20000; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(16));
    const double scale = trial % 4 == 0 ? 1e4 : trial % 4 == 1 ? 50.0 : 3.0;
    std::vector<double> v(static_cast<std::size_t>(n)), shifted(v.size());
    const double c = rng.uniform(-1e3, 1e3);
    for (int i = 0; i < n; ++i) {
      v[static_cast<std::size_t>(i)] = rng.uniform(-scale, scale);
      shifted[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)] + c;
    }
    const double e = entropy(v);
    REQUIRE(e >= 0.0);
    REQUIRE(e <= std::log(static_cast<double>(n)) + 1e-15);
    REQUIRE(std::abs(entropy(shifted) - e) <= 1e-9);
    if (scale < 100.0) REQUIRE(std::abs(static_cast<long double>(e) - entropy_reference(v)) <= 1e-12L);
  }
}

TEST_CASE("soft entropy gradient matches central differences") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(6), g(6);
    for (auto& x : v) x = rng.uniform(-3, 3);
    soft_entropy_gradient<double>(v, g);
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto up = v, down = v;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      CHECK(g[i] == doctest::Approx((entropy(up) - entropy(down)) / 2e-6).epsilon(1e-6));
    }
  }
}

TEST_CASE("prediction loss") {
  Matrix<double> uniform = Matrix<double>::Constant(3, 10, 0.7);
  std::vector<int> labels{0, 4, 9};
  CHECK(prediction_loss(uniform, std::span<const int>(labels)) == doctest::Approx(std::log(10.0)).epsilon(1e-14));

  Matrix<double> confident = Matrix<double>::Zero(1, 3);
  confident(0, 1) = 60.0;
  std::vector<int> one{1};
  CHECK(prediction_loss(confident, std::span<const int>(one)) < 1e-25);

  std::vector<int> bad{3};
  CHECK_THROWS_AS(prediction_loss(confident, std::span<const int>(bad)), DataError);

  const Matrix<double> logits = test::random_images(5, 4, 9) * 6.0;
  std::vector<int> y{0, 3, 1, 1, 2};
  double ref = 0.0;
  for (int i = 0; i < 5; ++i) {
    double z = 0.0;
    for (int c = 0; c < 4; ++c) z += std::exp(logits(i, c));
    ref -= std::log(std::exp(logits(i, y[static_cast<std::size_t>(i)])) / z);
  }
  CHECK(prediction_loss(logits, std::span<const int>(y)) == doctest::Approx(ref / 5).epsilon(1e-10));
}

TEST_CASE("output fidelity loss") {
  Matrix<double> agree(2, 3);
  agree << 0.9995, 0.0004, 0.0001, 0.0001, 0.0004, 0.9995;
  CHECK(output_fidelity_loss(agree, agree) < 0.005);

  const Matrix<double> uniform = Matrix<double>::Constant(4, 10, 0.1);
  CHECK(output_fidelity_loss(uniform, uniform) == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  Matrix<double> g = softmax_rows<double>(test::random_images(6, 5, 3) * 4.0);
  Matrix<double> f = softmax_rows<double>(test::random_images(6, 5, 4) * 4.0);
  double ref = 0.0;
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < 5; ++c) ref -= g(i, c) * std::log(f(i, c));
  CHECK(output_fidelity_loss(g, f) == doctest::Approx(ref / 6).epsilon(1e-10));

  Matrix<double> not_stochastic = uniform;
  not_stochastic(0, 0) = 0.5;
  CHECK_THROWS_AS(output_fidelity_loss(not_stochastic, uniform), NumericError);
}

TEST_CASE("output fidelity is minimized at g = f on the 3-class simplex") {
  Matrix<double> f(1, 3);
  f << 0.62, 0.27, 0.11;
  // -sum g log f is linear in g, so its argmin over g is a vertex. The
  // minimizer is unique in the other argument: at fixed g = p the grid
  // argmin of L_of(p, q) over q is q = p (Gibbs inequality).
  double best = std::numeric_limits<double>::infinity();
  Matrix<double> best_g(1, 3);
  for (int a = 1; a < 100; ++a)
    for (int b = 1; a + b < 100; ++b) {
      Matrix<double> g(1, 3);
      g << a / 100.0, b / 100.0, (100 - a - b) / 100.0;
      const double v = output_fidelity_loss(f, g);
      if (v < best) {
        best = v;
        best_g = g;
      }
    }
  CHECK((best_g - f).cwiseAbs().maxCoeff() <= 0.005 + 1e-12);
}

TEST_CASE("conciseness and diversity loss") {
  const double a = 60.0, eta = 0.5;
  Matrix<double> two(2, 2);
  two << a, 0.0, 0.0, a;
  const auto t = conciseness_diversity_loss<double>(two, eta);
  CHECK(t.conciseness < 1e-20);
  CHECK(t.diversity == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  CHECK(t.total == doctest::Approx(-std::log(2.0) + eta * a).epsilon(1e-12));

  const int j = 5;
  const Matrix<double> flat = Matrix<double>::Constant(3, j, 0.4);
  const auto f = conciseness_diversity_loss<double>(flat, eta);
  CHECK(f.conciseness == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  CHECK(f.diversity == doctest::Approx(-std::log(5.0)).epsilon(1e-14));
  CHECK(f.total == doctest::Approx(eta * j * 0.4).epsilon(1e-12));

  const Matrix<double> phi = test::random_images(7, 6, 12) * 3.0;
  const auto z = conciseness_diversity_loss<double>(phi, 0.0);
  double mean_e = 0.0;
  for (int i = 0; i < 7; ++i) {
    std::vector<double> row(phi.row(i).data(), phi.row(i).data() + 6);
    mean_e += entropy(row) / 7.0;
  }
  const Eigen::RowVectorXd m = phi.colwise().mean();
  CHECK(z.total == doctest::Approx(-entropy(std::vector<double>(m.data(), m.data() + 6)) + mean_e).epsilon(1e-12));

  const auto off = conciseness_diversity_loss<double>(phi, 0.7, false);
  CHECK(off.diversity == 0.0);
  CHECK(off.conciseness == 0.0);
  CHECK(off.total == doctest::Approx(0.7 * phi.sum() / 7.0).epsilon(1e-12));
}

TEST_CASE("conciseness loss is permutation equivariant") {
  Rng rng(77);
  const Matrix<double> phi = test::random_images(9, 8, 13) * 5.0;
  const double base = conciseness_diversity_loss<double>(phi, 0.3).total;
  for (int trial = 0; trial < 20; ++trial) {
    const auto perm = rng.permutation(8);
    Matrix<double> p(phi.rows(), phi.cols());
    for (int k = 0; k < 8; ++k) p.col(k) = phi.col(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(k)]));
    CHECK(std::abs(conciseness_diversity_loss<double>(p, 0.3).total - base) <= 1e-9);
  }
}

TEST_CASE("input fidelity loss") {
  const Matrix<double> x = test::random_images(3, 16, 21);
  CHECK(input_fidelity_loss(x, x) == 0.0);
  CHECK(input_fidelity_loss(Matrix<double>(x.array() + 1.0), x) == doctest::Approx(1.0).epsilon(1e-14));
  const Matrix<double> y = test::random_images(3, 16, 22);
  double ref = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 16; ++k) ref += (y(i, k) - x(i, k)) * (y(i, k) - x(i, k));
  CHECK(input_fidelity_loss(y, x) == doctest::Approx(ref / 48).epsilon(1e-10));
  CHECK_THROWS_AS(input_fidelity_loss(y, Matrix<double>(3, 15)), ShapeError);
}

TEST_CASE("total loss combination and masks") {
  ConcisenessTerms<double> cd{0.9, -0.2, 0.5, 1.2};
  const LossWeights mnist = LossWeights::mnist();
  const auto stage1 = total_loss(1.5, 2.0, cd, 0.3, mnist, {true, false, false});
  CHECK(stage1.total == doctest::Approx(1.5 + 0.8 * 0.3).epsilon(1e-15));
  CHECK(stage1.of == 0.0);
  CHECK(stage1.cd == 0.0);

  const auto all = total_loss(1.5, 2.0, cd, 0.3, mnist, {true, true, true});
  CHECK(std::abs(all.total - (1.5 + 0.5 * 2.0 + 0.8 * 0.3 + 0.2 * 0.9)) <= 1e-8);

  const auto base = total_loss(1.5, 2.0, cd, 0.3, LossWeights{}, {true, true, true});
  CHECK(base.total == 1.5);

  LossWeights neg = mnist;
  neg.beta = -0.1;
  CHECK_THROWS_AS(total_loss(1.0, 1.0, cd, 1.0, neg, {}), ConfigError);
}

namespace {

struct TermCase {
  const char* name;
  LossWeights weights;
  StageMask mask;
};

void check_term(const TermCase& tc, bool of_into_predictor) {
  ModelBundle<double> bundle = test::generic_toy(31);
  REQUIRE(bundle.parameters().scalar_count() <= 500);
  const Matrix<double> x = test::random_images(5, bundle.input_shape().size(), 8);
  const std::vector<int> labels{0, 1, 2, 1, 0};
  TrainConfig cfg;
  cfg.weights = tc.weights;
  cfg.of_grad_into_predictor = of_into_predictor;

  const auto analytic = compute_gradients(bundle, x, std::span<const int>(labels), cfg, tc.mask);
  const auto loss = [&] { return compute_gradients(bundle, x, std::span<const int>(labels), cfg, tc.mask).loss.total; };
  const Eigen::VectorXd numeric = test::numeric_gradient(bundle, loss);
  const Eigen::VectorXd a = test::flatten(analytic.grads);
  INFO(std::string(tc.name));
  CHECK(a.norm() > 1e-6);
  CHECK(test::relative_error(a, numeric) <= 1e-4);
}

}  // namespace

TEST_CASE("every loss term matches central differences on the toy bundle") {
  const TermCase cases[] = {
      {"L_pred", LossWeights{0, 0, 0, 0, true}, {true, false, false}},
      {"L_of", LossWeights{1, 0, 0, 0, true}, {false, true, false}},
      {"L_if", LossWeights{0, 1, 0, 0, true}, {false, false, false}},
      {"L_cd entropy terms", LossWeights{0, 0, 1, 0, true}, {false, false, true}},
      {"L_cd l1 only", LossWeights{0, 0, 1, 1, false}, {false, false, true}},
      {"L_cd full", LossWeights{0, 0, 1, 0.5, true}, {false, false, true}},
      {"all terms (MNIST weights)", LossWeights::mnist(), {true, true, true}},
  };
  for (const auto& tc : cases) check_term(tc, true);
}

TEST_CASE("detaching f inside L_of only changes predictor gradients") {
  ModelBundle<double> bundle = test::generic_toy(31);
  const Matrix<double> x = test::random_images(4, 36, 8);
  const std::vector<int> labels{0, 1, 2, 1};
  TrainConfig cfg;
  cfg.weights = LossWeights{1, 0, 0, 0, true};
  cfg.of_grad_into_predictor = false;
  const auto detached = compute_gradients(bundle, x, std::span<const int>(labels), cfg, {false, true, false});
  cfg.of_grad_into_predictor = true;
  const auto literal = compute_gradients(bundle, x, std::span<const int>(labels), cfg, {false, true, false});
  double predictor_diff = 0.0;
  for (std::size_t i = 0; i < bundle.parameters().size(); ++i) {
    const double d = (detached.grads[i] - literal.grads[i]).norm();
    if (bundle.parameters()[i].owner == Owner::predictor)
      predictor_diff += d;
    else
      CHECK(d == 0.0);
  }
  CHECK(predictor_diff > 0.0);
}
