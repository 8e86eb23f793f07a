#pragma once

#include "flint/layers.hpp"
#include "flint/parameters.hpp"
#include "flint/random.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flint {

/// Activations recorded by a forward pass: values[0] is the input,
/// values[k + 1] the output of layer k.
template <typename T>
struct Trace {
  std::vector<Matrix<T>> values;
};

/// Gradient injected at the output of a hidden layer (0-based index).
template <typename T>
struct InjectedGradient {
  int layer = 0;
  const Matrix<T>* gradient = nullptr;
};

/// A chain of layers whose parameters live in a shared ParameterStore.
/// The object itself is a shape plan and holds no numeric state.
class Sequential {
 public:
  Sequential() = default;

  /// Validates the chain against `input` and registers parameters named
  /// "<prefix>.<layer index>.<weight|bias>" in `store`, drawn from `rng`.
  template <typename T>
  Sequential(std::vector<LayerSpec> layers, Shape input, const std::string& prefix, Owner owner,
             ParameterStore<T>& store, Rng& rng);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t depth() const { return layers_.size(); }
  const Shape& input_shape() const { return shapes_.front(); }
  const Shape& output_shape() const { return shapes_.back(); }
  /// Output shape of layer k (0-based).
  const Shape& layer_output_shape(std::size_t k) const { return shapes_[k + 1]; }

  template <typename T>
  Matrix<T> forward(const ParameterStore<T>& store, const Matrix<T>& input, Trace<T>* trace = nullptr) const;

  /// Backpropagates `output_gradient` (may be empty when only injected
  /// gradients drive the pass). Parameter gradients accumulate into `grads`
  /// when non-null. Returns the gradient w.r.t. the input when requested.
  template <typename T>
  Matrix<T> backward(const ParameterStore<T>& store, const Trace<T>& trace, const Matrix<T>& output_gradient,
                     Gradients<T>* grads, std::span<const InjectedGradient<T>> injected = {},
                     bool want_input_gradient = false) const;

 private:
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  // Index of the first parameter array of each layer (or -1).
  std::vector<long> param_index_;
};

}  // namespace flint
