#pragma once

#include "flint/data.hpp"
#include "flint/models.hpp"

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace flint {

struct AmpiParams {
  double lambda_phi = 2.0;
  double lambda_tv = 6.0;
  double lambda_bo = 10.0;
  double init_scale = 0.3;
  int iterations = 300;
  double step_size = 0.05;
  int step_halving_period = 50;
  // Range enforced softly by Bo.
  double lower = 0.0;
  double upper = 1.0;

  void validate() const;
};

struct MasResult {
  int cls = 0;
  int attribute = 0;
  int mas_size = 3;
  std::vector<std::pair<std::size_t, double>> samples;  // (sample id, phi_j), descending
};

template <typename T>
struct AmpiResult {
  std::size_t sample_id = 0;
  int attribute = 0;
  Matrix<T> x_vis;                      // 1 x input size, unclamped
  std::vector<double> objective_trace;  // objective after each step
  double initial_objective = 0.0;
  double final_objective = 0.0;
  double initial_activation = 0.0;
  double final_activation = 0.0;
};

/// phi_j for every row of `x` and its gradient w.r.t. the input.
template <typename T>
struct AttributeGradient {
  Vector<T> value;
  Matrix<T> input_gradient;
};

template <typename T>
AttributeGradient<T> attribute_gradient(const ModelBundle<T>& bundle, const Matrix<T>& x, int attribute);

/// Top-k of (id, activation) pairs; ties go to the smaller id.
std::vector<std::pair<std::size_t, double>> top_activations(std::vector<std::pair<std::size_t, double>> scored,
                                                            int k);

/// Maximum-activating samples of attribute j among samples whose label is c.
template <typename T>
MasResult select_mas(const ModelBundle<T>& bundle, const Dataset& data, int cls, int attribute, int mas_size = 3);

/// Anisotropic TV summed over channels of one C x H x W image.
template <typename T>
double total_variation(std::span<const T> x, const Shape& shape, std::span<T> grad = {});

/// sum max(0, x - upper)^2 + max(0, lower - x)^2.
template <typename T>
double boundedness_penalty(std::span<const T> x, double lower, double upper, std::span<T> grad = {});

/// lambda_phi phi_j(x) - lambda_tv TV(x) - lambda_bo Bo(x); gradient w.r.t. x when requested.
template <typename T>
double ampi_objective(const ModelBundle<T>& bundle, const Matrix<T>& x, int attribute, const AmpiParams& params,
                      Matrix<T>* grad = nullptr, double* activation = nullptr);

/// Adam ascent from init_scale * x_prime, step size halved every period.
template <typename T>
AmpiResult<T> am_pi(const ModelBundle<T>& bundle, const Matrix<T>& x_prime, int attribute, const AmpiParams& params,
                    std::size_t sample_id = 0);

/// (d(Phi(x)), d(Phi(x) with phi_j = 0)).
template <typename T>
std::pair<Matrix<T>, Matrix<T>> decoder_ablation(const ModelBundle<T>& bundle, const Matrix<T>& x, int attribute);

/// d phi_j / d x, one row per input row.
template <typename T>
Matrix<T> gradient_saliency(const ModelBundle<T>& bundle, const Matrix<T>& x, int attribute);

/// Grayscale tiles laid out row-major with a 1-pixel gap, each tile
/// min-max scaled to [0,1] independently. Returns the canvas and per-tile
/// (min, max) before scaling.
struct TileGrid {
  Eigen::MatrixXf pixels;
  std::vector<std::pair<float, float>> scales;
};
TileGrid tile_grid(const std::vector<Eigen::VectorXf>& tiles, const Shape& shape, int columns);

}  // namespace flint
