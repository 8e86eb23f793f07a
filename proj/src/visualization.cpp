#include "flint/visualization.hpp"

#include "flint/errors.hpp"
#include "flint/optim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace flint {

void AmpiParams::validate() const {
  for (double v : {lambda_phi, lambda_tv, lambda_bo})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("AM+PI weights must be finite and non-negative");
  if (!(init_scale > 0.0 && init_scale <= 1.0)) throw ConfigError("AM+PI init scale must lie in (0, 1]");
  if (iterations < 1) throw ConfigError("AM+PI needs at least one iteration");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("AM+PI step size must be positive");
  if (step_halving_period < 1) throw ConfigError("AM+PI halving period must be positive");
  if (!(lower < upper)) throw ConfigError("AM+PI range needs lower < upper");
}

namespace {

void check_attribute(int attribute, int count) {
  if (attribute < 0 || attribute >= count)
    throw ShapeError("attribute " + std::to_string(attribute) + " out of range 0.." + std::to_string(count - 1));
}

}  // namespace

template <typename T>
AttributeGradient<T> attribute_gradient(const ModelBundle<T>& bundle, const Matrix<T>& x, int attribute) {
  check_attribute(attribute, bundle.attribute_count());
  Trace<T> predictor_trace, psi_trace;
  const PredictorOutput<T> out = forward_with_taps(bundle, x, &predictor_trace);
  const Matrix<T> phi = attributes(bundle, out.taps, &psi_trace);

  Matrix<T> d_phi = Matrix<T>::Zero(phi.rows(), phi.cols());
  d_phi.col(attribute).setOnes();
  const Matrix<T> d_taps = bundle.psi().backward(bundle.parameters(), psi_trace, d_phi, static_cast<Gradients<T>*>(nullptr), {}, true);

  const auto& taps = bundle.spec().taps.tap_indices;
  std::vector<Matrix<T>> blocks;
  std::vector<InjectedGradient<T>> injected;
  blocks.reserve(taps.size());
  long col = 0;
  for (std::size_t t = 0; t < taps.size(); ++t) {
    blocks.push_back(d_taps.middleCols(col, bundle.tap_dims()[t]));
    col += bundle.tap_dims()[t];
  }
  for (std::size_t t = 0; t < taps.size(); ++t) injected.push_back({taps[t] - 1, &blocks[t]});

  AttributeGradient<T> g;
  g.value = phi.col(attribute);
  g.input_gradient = bundle.predictor().backward(bundle.parameters(), predictor_trace, Matrix<T>(), static_cast<Gradients<T>*>(nullptr),
                                                 std::span<const InjectedGradient<T>>(injected), true);
  return g;
}

std::vector<std::pair<std::size_t, double>> top_activations(std::vector<std::pair<std::size_t, double>> scored,
                                                            int k) {
  if (k < 1) throw ConfigError("MAS size must be positive");
  if (static_cast<std::size_t>(k) > scored.size())
    throw DataError("need " + std::to_string(k) + " samples for MAS, class has " + std::to_string(scored.size()));
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  scored.resize(static_cast<std::size_t>(k));
  return scored;
}

template <typename T>
MasResult select_mas(const ModelBundle<T>& bundle, const Dataset& data, int cls, int attribute, int mas_size) {
  check_attribute(attribute, bundle.attribute_count());
  if (cls < 0 || cls >= bundle.class_count()) throw ConfigError("class " + std::to_string(cls) + " out of range");
  const std::vector<std::size_t> ids = data.indices_of_class(cls);
  std::vector<std::pair<std::size_t, double>> scored;
  scored.reserve(ids.size());
  constexpr std::size_t kBatch = 256;
  for (std::size_t start = 0; start < ids.size(); start += kBatch) {
    const std::size_t count = std::min(kBatch, ids.size() - start);
    Matrix<T> x(static_cast<Eigen::Index>(count), data.images.cols());
    for (std::size_t i = 0; i < count; ++i)
      x.row(static_cast<Eigen::Index>(i)) = data.images.row(static_cast<Eigen::Index>(ids[start + i])).template cast<T>();
    const Matrix<T> phi = attributes(bundle, forward_with_taps(bundle, x).taps);
    for (std::size_t i = 0; i < count; ++i)
      scored.emplace_back(ids[start + i], static_cast<double>(phi(static_cast<Eigen::Index>(i), attribute)));
  }
  MasResult r;
  r.cls = cls;
  r.attribute = attribute;
  r.mas_size = mas_size;
  r.samples = top_activations(std::move(scored), mas_size);
  return r;
}

template <typename T>
double total_variation(std::span<const T> x, const Shape& shape, std::span<T> grad) {
  const int h = shape.height, w = shape.width;
  if (h < 2 || w < 2) throw ShapeError("total variation needs H, W >= 2, got " + shape.str());
  if (static_cast<int>(x.size()) != shape.size()) throw ShapeError("image size does not match " + shape.str());
  const bool want = !grad.empty();
  if (want) std::fill(grad.begin(), grad.end(), T(0));
  double tv = 0.0;
  auto edge = [&](int a, int b) {
    const T d = x[static_cast<std::size_t>(b)] - x[static_cast<std::size_t>(a)];
    tv += std::abs(static_cast<double>(d));
    if (want && d != T(0)) {
      const T s = d > T(0) ? T(1) : T(-1);
      grad[static_cast<std::size_t>(b)] += s;
      grad[static_cast<std::size_t>(a)] -= s;
    }
  };
  for (int c = 0; c < shape.channels; ++c) {
    const int base = c * h * w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const int p = base + i * w + j;
        if (i + 1 < h) edge(p, p + w);
        if (j + 1 < w) edge(p, p + 1);
      }
  }
  return tv;
}

template <typename T>
double boundedness_penalty(std::span<const T> x, double lower, double upper, std::span<T> grad) {
  const bool want = !grad.empty();
  double bo = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    double g = 0.0;
    if (v > upper) {
      bo += (v - upper) * (v - upper);
      g = 2.0 * (v - upper);
    } else if (v < lower) {
      bo += (lower - v) * (lower - v);
      g = -2.0 * (lower - v);
    }
    if (want) grad[i] = static_cast<T>(g);
  }
  return bo;
}

template <typename T>
double ampi_objective(const ModelBundle<T>& bundle, const Matrix<T>& x, int attribute, const AmpiParams& params,
                      Matrix<T>* grad, double* activation) {
  if (x.rows() != 1) throw ShapeError("AM+PI works on one input row");
  const Shape shape = bundle.input_shape();
  const std::span<const T> xs(x.data(), static_cast<std::size_t>(x.size()));
  Matrix<T> g_tv, g_bo;
  double phi = 0.0;
  if (grad) {
    const AttributeGradient<T> ag = attribute_gradient(bundle, x, attribute);
    phi = static_cast<double>(ag.value[0]);
    g_tv.resize(1, x.cols());
    g_bo.resize(1, x.cols());
    *grad = static_cast<T>(params.lambda_phi) * ag.input_gradient;
  } else {
    check_attribute(attribute, bundle.attribute_count());
    phi = static_cast<double>(attributes(bundle, forward_with_taps(bundle, x).taps)(0, attribute));
  }
  const double tv = total_variation<T>(xs, shape, grad ? std::span<T>(g_tv.data(), g_tv.size()) : std::span<T>());
  const double bo = boundedness_penalty<T>(xs, params.lower, params.upper,
                                           grad ? std::span<T>(g_bo.data(), g_bo.size()) : std::span<T>());
  if (grad) *grad -= static_cast<T>(params.lambda_tv) * g_tv + static_cast<T>(params.lambda_bo) * g_bo;
  if (activation) *activation = phi;
  return params.lambda_phi * phi - params.lambda_tv * tv - params.lambda_bo * bo;
}

template <typename T>
AmpiResult<T> am_pi(const ModelBundle<T>& bundle, const Matrix<T>& x_prime, int attribute, const AmpiParams& params,
                    std::size_t sample_id) {
  params.validate();
  AmpiResult<T> r;
  r.sample_id = sample_id;
  r.attribute = attribute;
  r.x_vis = static_cast<T>(params.init_scale) * x_prime;

  Adam<T> adam(AdamSettings{params.step_size});
  Matrix<T> grad;
  double objective = ampi_objective(bundle, r.x_vis, attribute, params, &grad, &r.initial_activation);
  r.initial_objective = objective;
  r.objective_trace.reserve(static_cast<std::size_t>(params.iterations));
  for (int it = 0; it < params.iterations; ++it) {
    adam.set_learning_rate(params.step_size * std::pow(0.5, it / params.step_halving_period));
    adam.tick();
    // Ascent: descend on the negated objective.
    const Vector<T> descent = -Eigen::Map<const Vector<T>>(grad.data(), grad.size());
    adam.update(0, Eigen::Map<Vector<T>>(r.x_vis.data(), r.x_vis.size()), descent);
    objective = ampi_objective(bundle, r.x_vis, attribute, params, &grad, &r.final_activation);
    if (!std::isfinite(objective)) {
      std::ostringstream os;
      os << "AM+PI objective became non-finite at iteration " << it + 1 << " (sample " << sample_id
         << ", attribute " << attribute << ")";
      throw NumericError(os.str());
    }
    r.objective_trace.push_back(objective);
  }
  r.final_objective = objective;
  return r;
}

template <typename T>
std::pair<Matrix<T>, Matrix<T>> decoder_ablation(const ModelBundle<T>& bundle, const Matrix<T>& x, int attribute) {
  check_attribute(attribute, bundle.attribute_count());
  Matrix<T> phi = attributes(bundle, forward_with_taps(bundle, x).taps);
  Matrix<T> full = decode(bundle, phi);
  phi.col(attribute).setZero();
  return {std::move(full), decode(bundle, phi)};
}

template <typename T>
Matrix<T> gradient_saliency(const ModelBundle<T>& bundle, const Matrix<T>& x, int attribute) {
  return attribute_gradient(bundle, x, attribute).input_gradient;
}

TileGrid tile_grid(const std::vector<Eigen::VectorXf>& tiles, const Shape& shape, int columns) {
  if (shape.channels != 1) throw ShapeError("tile grids are grayscale, got " + shape.str());
  if (tiles.empty() || columns < 1) throw ShapeError("tile grid needs tiles and at least one column");
  const int h = shape.height, w = shape.width;
  const int cols = std::min<int>(columns, static_cast<int>(tiles.size()));
  const int rows = (static_cast<int>(tiles.size()) + columns - 1) / columns;
  TileGrid g;
  g.pixels = Eigen::MatrixXf::Zero(rows * (h + 1) - 1, cols * (w + 1) - 1);
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const Eigen::VectorXf& v = tiles[t];
    if (v.size() != shape.size()) throw ShapeError("tile size does not match " + shape.str());
    const float lo = v.minCoeff(), hi = v.maxCoeff();
    g.scales.emplace_back(lo, hi);
    const float span = hi - lo;
    const int r0 = static_cast<int>(t) / columns * (h + 1), c0 = static_cast<int>(t) % columns * (w + 1);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) g.pixels(r0 + i, c0 + j) = span > 0.0f ? (v[i * w + j] - lo) / span : 0.0f;
  }
  return g;
}

#define FLINT_INSTANTIATE(T)                                                                                   \
  template AttributeGradient<T> attribute_gradient(const ModelBundle<T>&, const Matrix<T>&, int);              \
  template MasResult select_mas(const ModelBundle<T>&, const Dataset&, int, int, int);                         \
  template double total_variation(std::span<const T>, const Shape&, std::span<T>);                             \
  template double boundedness_penalty(std::span<const T>, double, double, std::span<T>);                       \
  template double ampi_objective(const ModelBundle<T>&, const Matrix<T>&, int, const AmpiParams&, Matrix<T>*,  \
                                 double*);                                                                     \
  template AmpiResult<T> am_pi(const ModelBundle<T>&, const Matrix<T>&, int, const AmpiParams&, std::size_t); \
  template std::pair<Matrix<T>, Matrix<T>> decoder_ablation(const ModelBundle<T>&, const Matrix<T>&, int);    \
  template Matrix<T> gradient_saliency(const ModelBundle<T>&, const Matrix<T>&, int);

FLINT_INSTANTIATE(float)
FLINT_INSTANTIATE(double)

}  // namespace flint
