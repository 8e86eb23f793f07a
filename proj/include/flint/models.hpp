#pragma once

#include "flint/network.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace flint {

struct PredictorSpec {
  std::vector<LayerSpec> layers;
  Shape input_shape{1, 28, 28};
  int class_count = 10;
};

/// 1-based indices of hidden predictor layers whose outputs feed the
/// interpreter. Index k is the output of the k-th layer; the final
/// (logit) layer is not eligible.
struct TapConfig {
  std::vector<int> tap_indices;
};

/// Psi maps the D tapped features to J non-negative attributes; the head
/// is the bias-free J x C matrix W in softmax(W^T phi).
struct InterpreterSpec {
  int attribute_count = 25;
  std::vector<LayerSpec> psi_layers;
};

struct DecoderSpec {
  std::vector<LayerSpec> layers;
  /// Start the last weighted layer at zero so the untrained decoder emits
  /// its bias only. A random decoder output makes early L_if steps shrink
  /// phi until the final rectifier of Psi dies.
  bool zero_init_output = true;
};

struct BundleSpec {
  PredictorSpec predictor;
  TapConfig taps;
  InterpreterSpec interpreter;
  DecoderSpec decoder;
};

template <typename T>
class ModelBundle {
 public:
  ModelBundle() = default;
  /// Validates `spec` and initializes parameters from `seed`.
  ModelBundle(BundleSpec spec, std::uint64_t seed);

  const BundleSpec& spec() const { return spec_; }
  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }

  const Sequential& predictor() const { return predictor_; }
  const Sequential& psi() const { return psi_; }
  const Sequential& decoder() const { return decoder_; }
  std::size_t head_index() const { return head_index_; }

  Shape input_shape() const { return spec_.predictor.input_shape; }
  int class_count() const { return spec_.predictor.class_count; }
  int attribute_count() const { return spec_.interpreter.attribute_count; }
  const std::vector<int>& tap_dims() const { return tap_dims_; }
  int tap_dim() const { return tap_dim_; }

  /// Head weight w_{j,c} (J x C, row-major storage).
  T head_weight(int attribute, int cls) const {
    return params_[head_index_].value[static_cast<Eigen::Index>(attribute) * class_count() + cls];
  }

  /// Same architecture in another scalar type; values converted elementwise.
  template <typename U>
  ModelBundle<U> cast() const;

 private:
  template <typename>
  friend class ModelBundle;

  BundleSpec spec_;
  ParameterStore<T> params_;
  Sequential predictor_, psi_, decoder_;
  std::size_t head_index_ = 0;
  std::vector<int> tap_dims_;
  int tap_dim_ = 0;
};

template <typename T>
ModelBundle<T> build_bundle(const BundleSpec& spec, std::uint64_t seed) {
  return ModelBundle<T>(spec, seed);
}

template <typename T>
struct PredictorOutput {
  Matrix<T> logits;  // batch x C
  Matrix<T> taps;    // batch x D, taps concatenated in ascending index order
};

template <typename T>
PredictorOutput<T> forward_with_taps(const ModelBundle<T>& bundle, const Matrix<T>& x,
                                     Trace<T>* trace = nullptr);

/// Phi(x) = Psi(f_I(x)), batch x J, elementwise >= 0.
template <typename T>
Matrix<T> attributes(const ModelBundle<T>& bundle, const Matrix<T>& taps, Trace<T>* trace = nullptr);

/// Unnormalized interpreter scores phi W (batch x C).
template <typename T>
Matrix<T> interpreter_logits(const ModelBundle<T>& bundle, const Matrix<T>& phi);

/// softmax(W^T phi) per row.
template <typename T>
Matrix<T> interpreter_forward(const ModelBundle<T>& bundle, const Matrix<T>& phi);

template <typename T>
Matrix<T> decode(const ModelBundle<T>& bundle, const Matrix<T>& phi, Trace<T>* trace = nullptr);

/// Row-wise softmax with max shift.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits);

/// Row-wise argmax, ties to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Matrix<T>& m);

/// Built-in architectures.
///   lenet_mnist  - LeNet-style predictor for 1x28x28, 10 classes, J=25
///   lenet_shapes - same predictor for the 4-class synthetic corpus, J=12
///   toy          - under 500 parameters, 1x6x6 input, 3 classes, J=3
BundleSpec preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace flint
