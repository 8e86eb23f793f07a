#pragma once

#include "flint/parameters.hpp"

#include <vector>

namespace flint {

struct AdamSettings {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive moment estimation with bias correction, no weight decay.
/// State is kept per slot; one call to `tick` advances the shared step count.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamSettings settings = {}) : settings_(settings) {}

  void set_learning_rate(double lr) { settings_.learning_rate = lr; }
  double learning_rate() const { return settings_.learning_rate; }
  long steps() const { return steps_; }

  void tick() { ++steps_; }
  /// Descends `grad` on `value`, using moment slot `slot`.
  void update(std::size_t slot, Eigen::Ref<Vector<T>> value, const Vector<T>& grad);

  /// One step over every trainable array of `store`.
  void step(ParameterStore<T>& store, const Gradients<T>& grads);

 private:
  AdamSettings settings_;
  long steps_ = 0;
  std::vector<Vector<T>> m_, v_;
};

}  // namespace flint
