#include "flint/models.hpp"

#include "flint/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace flint {

template <typename T>
ModelBundle<T>::ModelBundle(BundleSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  const auto& ps = spec_.predictor;
  if (ps.class_count <= 0) throw ShapeError("class count must be positive");
  if (ps.layers.size() < 2) throw ShapeError("predictor needs at least one hidden layer");
  if (ps.input_shape.size() <= 0) throw ShapeError("input shape must be positive");

  Rng predictor_rng(derive_seed(seed, 1));
  predictor_ = Sequential(ps.layers, ps.input_shape, "predictor", Owner::predictor, params_, predictor_rng);
  if (predictor_.output_shape().size() != ps.class_count)
    throw ShapeError("predictor layer " + std::to_string(ps.layers.size()) + " " + describe(ps.layers.back()) +
                     " outputs " + std::to_string(predictor_.output_shape().size()) + " values, expected " +
                     std::to_string(ps.class_count) + " logits");

  const auto& taps = spec_.taps.tap_indices;
  const int hidden = static_cast<int>(ps.layers.size()) - 1;
  if (taps.empty()) throw ShapeError("at least one tap index is required");
  for (std::size_t t = 0; t < taps.size(); ++t) {
    if (taps[t] < 1 || taps[t] > hidden)
      throw ShapeError("invalid tap index " + std::to_string(taps[t]) + ": hidden layers are 1.." +
                       std::to_string(hidden));
    if (t > 0 && taps[t] <= taps[t - 1]) throw ShapeError("tap indices must be strictly increasing");
    tap_dims_.push_back(predictor_.layer_output_shape(static_cast<std::size_t>(taps[t] - 1)).size());
    tap_dim_ += tap_dims_.back();
  }

  const int j = spec_.interpreter.attribute_count;
  if (j <= 0) throw ShapeError("attribute count must be positive");
  const auto& psi_layers = spec_.interpreter.psi_layers;
  if (psi_layers.empty() || !std::holds_alternative<Relu>(psi_layers.back()))
    throw ShapeError("psi must end with relu so attributes are non-negative");
  Rng psi_rng(derive_seed(seed, 2));
  psi_ = Sequential(psi_layers, Shape{tap_dim_, 1, 1}, "psi", Owner::psi, params_, psi_rng);
  if (psi_.output_shape().size() != j)
    throw ShapeError("psi outputs " + std::to_string(psi_.output_shape().size()) + " values, expected J=" +
                     std::to_string(j));

  Rng head_rng(derive_seed(seed, 3));
  head_index_ = params_.add("head.weight", Owner::head, {j, ps.class_count});
  const double bound = std::sqrt(6.0 / j);
  for (auto& v : params_[head_index_].value) v = static_cast<T>(head_rng.uniform(-bound, bound));

  Rng decoder_rng(derive_seed(seed, 4));
  decoder_ = Sequential(spec_.decoder.layers, Shape{j, 1, 1}, "decoder", Owner::decoder, params_, decoder_rng);
  if (decoder_.output_shape().size() != ps.input_shape.size())
    throw ShapeError("decoder outputs " + decoder_.output_shape().str() + ", expected input shape " +
                     ps.input_shape.str());
  if (spec_.decoder.zero_init_output) {
    for (std::size_t k = params_.size(); k-- > 0;) {
      if (params_[k].owner != Owner::decoder) break;
      if (params_[k].name.ends_with(".weight")) {
        params_[k].value.setZero();
        break;
      }
    }
  }
}

template <typename T>
template <typename U>
ModelBundle<U> ModelBundle<T>::cast() const {
  ModelBundle<U> out;
  out.spec_ = spec_;
  out.predictor_ = predictor_;
  out.psi_ = psi_;
  out.decoder_ = decoder_;
  out.head_index_ = head_index_;
  out.tap_dims_ = tap_dims_;
  out.tap_dim_ = tap_dim_;
  for (const auto& p : params_) {
    const std::size_t i = out.params_.add(p.name, p.owner, p.dims);
    out.params_[i].value = p.value.template cast<U>();
    out.params_[i].trainable = p.trainable;
  }
  return out;
}

template <typename T>
PredictorOutput<T> forward_with_taps(const ModelBundle<T>& bundle, const Matrix<T>& x, Trace<T>* trace) {
  if (x.rows() < 1) throw ShapeError("empty batch");
  if (x.cols() != bundle.input_shape().size())
    throw ShapeError("batch has " + std::to_string(x.cols()) + " features per sample, input shape " +
                     bundle.input_shape().str() + " needs " + std::to_string(bundle.input_shape().size()));
  Trace<T> local;
  Trace<T>& tr = trace ? *trace : local;
  PredictorOutput<T> out;
  out.logits = bundle.predictor().forward(bundle.parameters(), x, &tr);
  out.taps.resize(x.rows(), bundle.tap_dim());
  long col = 0;
  for (int idx : bundle.spec().taps.tap_indices) {
    const Matrix<T>& v = tr.values[static_cast<std::size_t>(idx)];
    out.taps.middleCols(col, v.cols()) = v;
    col += v.cols();
  }
  return out;
}

template <typename T>
Matrix<T> attributes(const ModelBundle<T>& bundle, const Matrix<T>& taps, Trace<T>* trace) {
  if (taps.cols() != bundle.tap_dim())
    throw ShapeError("tapped width " + std::to_string(taps.cols()) + " != D=" + std::to_string(bundle.tap_dim()));
  return bundle.psi().forward(bundle.parameters(), taps, trace);
}

template <typename T>
Matrix<T> interpreter_logits(const ModelBundle<T>& bundle, const Matrix<T>& phi) {
  if (phi.cols() != bundle.attribute_count())
    throw ShapeError("attribute width " + std::to_string(phi.cols()) + " != J=" +
                     std::to_string(bundle.attribute_count()));
  Eigen::Map<const Matrix<T>> w(bundle.parameters()[bundle.head_index()].value.data(), bundle.attribute_count(),
                                bundle.class_count());
  return phi * w;
}

template <typename T>
Matrix<T> interpreter_forward(const ModelBundle<T>& bundle, const Matrix<T>& phi) {
  return softmax_rows(interpreter_logits(bundle, phi));
}

template <typename T>
Matrix<T> decode(const ModelBundle<T>& bundle, const Matrix<T>& phi, Trace<T>* trace) {
  if (phi.cols() != bundle.attribute_count())
    throw ShapeError("attribute width " + std::to_string(phi.cols()) + " != J=" +
                     std::to_string(bundle.attribute_count()));
  return bundle.decoder().forward(bundle.parameters(), phi, trace);
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits) {
  Matrix<T> p(logits.rows(), logits.cols());
  for (long i = 0; i < logits.rows(); ++i) {
    const T m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

template <typename T>
std::vector<int> argmax_rows(const Matrix<T>& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (long i = 0; i < m.rows(); ++i) {
    int best = 0;
    for (long c = 1; c < m.cols(); ++c)
      if (m(i, c) > m(i, best)) best = static_cast<int>(c);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

namespace {

BundleSpec lenet(int classes, int attributes) {
  BundleSpec s;
  s.predictor.input_shape = Shape{1, 28, 28};
  s.predictor.class_count = classes;
  s.predictor.layers = parse_layers("conv(1,20,5,1) relu maxpool(2) conv(20,50,5,1) relu maxpool(2) fc(800,500) relu fc(500," +
                                    std::to_string(classes) + ")");
  // Output of the final convolutional block: 50x4x4 = 800.
  s.taps.tap_indices = {6};
  s.interpreter.attribute_count = attributes;
  s.interpreter.psi_layers = parse_layers("fc(800,64) relu fc(64," + std::to_string(attributes) + ") relu");
  s.decoder.layers = parse_layers("fc(" + std::to_string(attributes) +
                                  ",196) relu reshape(4,7,7) tconv(4,8,4,2,1) relu tconv(8,1,4,2,1)");
  return s;
}

}  // namespace

BundleSpec preset(const std::string& name) {
  if (name == "lenet_mnist") return lenet(10, 25);
  if (name == "lenet_shapes") return lenet(4, 12);
  if (name == "toy") {
    BundleSpec s;
    s.predictor.input_shape = Shape{1, 6, 6};
    s.predictor.class_count = 3;
    s.predictor.layers = parse_layers("conv(1,2,3,1) relu maxpool(2) fc(8,3)");
    s.taps.tap_indices = {3};
    s.interpreter.attribute_count = 3;
    s.interpreter.psi_layers = parse_layers("fc(8,6) relu fc(6,3) relu");
    s.decoder.layers = parse_layers("fc(3,8) relu reshape(2,2,2) tconv(2,1,4,2) sigmoid");
    // Gradient probes need every decoder layer on the active path.
    s.decoder.zero_init_output = false;
    return s;
  }
  throw ConfigError("unknown model preset '" + name + "'");
}

std::vector<std::string> preset_names() { return {"lenet_mnist", "lenet_shapes", "toy"}; }

#define FLINT_INSTANTIATE(T)                                                                                \
  template class ModelBundle<T>;                                                                            \
  template PredictorOutput<T> forward_with_taps(const ModelBundle<T>&, const Matrix<T>&, Trace<T>*);        \
  template Matrix<T> attributes(const ModelBundle<T>&, const Matrix<T>&, Trace<T>*);                        \
  template Matrix<T> interpreter_logits(const ModelBundle<T>&, const Matrix<T>&);                           \
  template Matrix<T> interpreter_forward(const ModelBundle<T>&, const Matrix<T>&);                          \
  template Matrix<T> decode(const ModelBundle<T>&, const Matrix<T>&, Trace<T>*);                            \
  template Matrix<T> softmax_rows(const Matrix<T>&);                                                        \
  template std::vector<int> argmax_rows(const Matrix<T>&);

FLINT_INSTANTIATE(float)
FLINT_INSTANTIATE(double)

template ModelBundle<double> ModelBundle<float>::cast<double>() const;
template ModelBundle<float> ModelBundle<double>::cast<float>() const;
template ModelBundle<float> ModelBundle<float>::cast<float>() const;
template ModelBundle<double> ModelBundle<double>::cast<double>() const;

}  // namespace flint
