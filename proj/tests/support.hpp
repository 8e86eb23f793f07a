#pragma once

#include "flint/models.hpp"
#include "flint/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace flint::test {

/// Relative error ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-8) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

/// Central differences of `loss` w.r.t. every scalar of the trainable
/// parameters, flattened in store order.
inline Eigen::VectorXd numeric_gradient(ModelBundle<double>& bundle, const std::function<double()>& loss,
                                        double step = 1e-5) {
  std::vector<double> out;
  for (auto& p : bundle.parameters())
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + step;
      const double up = loss();
      p.value[i] = keep - step;
      const double down = loss();
      p.value[i] = keep;
      out.push_back((up - down) / (2.0 * step));
    }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

inline Eigen::VectorXd flatten(const Gradients<double>& g) {
  std::vector<double> out;
  for (const auto& v : g) out.insert(out.end(), v.data(), v.data() + v.size());
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

/// Toy bundle moved off the zero-bias initialization: biases at exactly
/// zero put rectifier inputs on their kink, where central differences see
/// half a slope.
inline ModelBundle<double> generic_toy(std::uint64_t seed) {
  ModelBundle<double> b = build_bundle<double>(preset("toy"), seed);
  Rng rng(seed + 1000);
  for (auto& p : b.parameters())
    if (p.name.ends_with(".bias"))
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-0.2, 0.2);
  return b;
}

/// Uniform images in [0,1] with the given row count.
inline Matrix<double> random_images(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<double> x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
  return x;
}

/// 1x6x6 images labelled by their brightest pair of rows, for the toy preset.
inline Dataset toy_dataset(int n, std::uint64_t seed, Split split = Split::train) {
  Dataset d;
  d.shape = Shape{1, 6, 6};
  d.class_count = 3;
  d.class_names = {"top", "middle", "bottom"};
  d.split = split;
  d.images = random_images(n, 36, seed).cast<float>();
  for (int i = 0; i < n; ++i) {
    const int cls = i % 3;
    d.images.row(i).segment(12 * cls, 12).array() = d.images.row(i).segment(12 * cls, 12).array() * 0.5f + 0.5f;
    d.labels.push_back(cls);
  }
  d.provenance = "toy";
  return d;
}

}  // namespace flint::test
