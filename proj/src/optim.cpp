#include "flint/optim.hpp"

#include <cmath>

namespace flint {

template <typename T>
void Adam<T>::update(std::size_t slot, Eigen::Ref<Vector<T>> value, const Vector<T>& grad) {
  if (slot >= m_.size()) {
    m_.resize(slot + 1);
    v_.resize(slot + 1);
  }
  if (m_[slot].size() != value.size()) {
    m_[slot] = Vector<T>::Zero(value.size());
    v_[slot] = Vector<T>::Zero(value.size());
  }
  const T b1 = static_cast<T>(settings_.beta1);
  const T b2 = static_cast<T>(settings_.beta2);
  m_[slot] = b1 * m_[slot] + (T(1) - b1) * grad;
  v_[slot] = b2 * v_[slot] + (T(1) - b2) * grad.cwiseProduct(grad);
  const double t = static_cast<double>(steps_ < 1 ? 1 : steps_);
  const T step = static_cast<T>(settings_.learning_rate / (1.0 - std::pow(settings_.beta1, t)));
  const T correction = static_cast<T>(std::sqrt(1.0 - std::pow(settings_.beta2, t)));
  const T eps = static_cast<T>(settings_.epsilon);
  value.array() -= step * m_[slot].array() / (v_[slot].array().sqrt() / correction + eps);
}

template <typename T>
void Adam<T>::step(ParameterStore<T>& store, const Gradients<T>& grads) {
  tick();
  for (std::size_t i = 0; i < store.size(); ++i)
    if (store[i].trainable) update(i, store[i].value, grads[i]);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace flint
