#include "flint/losses.hpp"

#include "flint/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace flint {

namespace {
constexpr double kLogClamp = 1e-12;
}

void LossWeights::validate() const {
  const double values[] = {beta, gamma, delta, eta};
  const char* names[] = {"beta", "gamma", "delta", "eta"};
  for (int i = 0; i < 4; ++i)
    if (!std::isfinite(values[i]) || values[i] < 0.0)
      throw ConfigError(std::string("loss weight ") + names[i] + " must be finite and >= 0");
}

template <typename T>
T soft_entropy(std::span<const T> v) {
  if (v.empty()) throw NumericError("soft_entropy of an empty vector");
  T m = v[0];
  for (T x : v) {
    if (!std::isfinite(x)) throw NumericError("soft_entropy input is not finite");
    m = std::max(m, x);
  }
  // With z = sum exp(v_i - m): E = log z - sum exp(v_i - m)(v_i - m) / z
  T z = 0, s = 0;
  for (T x : v) {
    const T e = std::exp(x - m);
    z += e;
    s += e * (x - m);
  }
  const T entropy = std::log(z) - s / z;
  return std::clamp(entropy, T(0), static_cast<T>(std::log(static_cast<T>(v.size()))));
}

template <typename T>
T soft_entropy_gradient(std::span<const T> v, std::span<T> out) {
  const T entropy = soft_entropy(v);
  T m = v[0];
  for (T x : v) m = std::max(m, x);
  T z = 0;
  for (T x : v) z += std::exp(x - m);
  const T log_z = std::log(z);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T log_p = v[i] - m - log_z;
    out[i] = -std::exp(log_p) * (log_p + entropy);
  }
  return entropy;
}

template <typename T>
T prediction_loss(const Matrix<T>& logits, std::span<const int> labels, Matrix<T>* grad_logits) {
  const long n = logits.rows();
  if (n == 0 || static_cast<std::size_t>(n) != labels.size()) throw ShapeError("logits/labels size mismatch");
  if (grad_logits) grad_logits->resize(n, logits.cols());
  T total = 0;
  for (long i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols())
      throw DataError("label " + std::to_string(y) + " out of range for " + std::to_string(logits.cols()) + " classes");
    const T m = logits.row(i).maxCoeff();
    const T log_z = std::log((logits.row(i).array() - m).exp().sum()) + m;
    total += log_z - logits(i, y);
    if (grad_logits) {
      grad_logits->row(i) = ((logits.row(i).array() - log_z).exp() / T(n)).matrix();
      (*grad_logits)(i, y) -= T(1) / T(n);
    }
  }
  return total / T(n);
}

template <typename T>
T output_fidelity_loss(const Matrix<T>& g_probs, const Matrix<T>& f_probs, Matrix<T>* grad_g, Matrix<T>* grad_f) {
  const long n = g_probs.rows();
  if (n == 0 || g_probs.rows() != f_probs.rows() || g_probs.cols() != f_probs.cols())
    throw ShapeError("output fidelity: probability matrices differ in shape");
  for (long i = 0; i < n; ++i)
    for (const Matrix<T>* m : {&g_probs, &f_probs}) {
      const double s = static_cast<double>(m->row(i).sum());
      if (!(std::abs(s - 1.0) <= 1e-4) || m->row(i).minCoeff() < T(0))
        throw NumericError("output fidelity: row " + std::to_string(i) + " is not a probability vector");
    }
  if (grad_g) grad_g->resize(n, g_probs.cols());
  if (grad_f) grad_f->resize(n, g_probs.cols());
  T total = 0;
  for (long i = 0; i < n; ++i)
    for (long c = 0; c < g_probs.cols(); ++c) {
      const T f = f_probs(i, c);
      const bool clamped = f < T(kLogClamp);
      const T log_f = std::log(clamped ? T(kLogClamp) : f);
      total -= g_probs(i, c) * log_f;
      if (grad_g) (*grad_g)(i, c) = -log_f / T(n);
      if (grad_f) (*grad_f)(i, c) = clamped ? T(0) : -g_probs(i, c) / (f * T(n));
    }
  return total / T(n);
}

template <typename T>
ConcisenessTerms<T> conciseness_diversity_loss(const Matrix<T>& phi, T eta, bool use_entropy, Matrix<T>* grad_phi) {
  const long n = phi.rows();
  const long j = phi.cols();
  if (n == 0 || j == 0) throw ShapeError("conciseness loss needs a non-empty batch");
  ConcisenessTerms<T> out;
  if (grad_phi) grad_phi->setZero(n, j);
  std::vector<T> row(static_cast<std::size_t>(j)), grad(static_cast<std::size_t>(j));

  for (long i = 0; i < n; ++i) {
    for (long k = 0; k < j; ++k) {
      const T v = phi(i, k);
      out.l1 += std::abs(v);
      if (grad_phi) (*grad_phi)(i, k) += eta * (v > 0 ? T(1) : v < 0 ? T(-1) : T(0)) / T(n);
      row[static_cast<std::size_t>(k)] = v;
    }
    if (use_entropy) {
      const T e = soft_entropy_gradient<T>(row, grad);
      out.conciseness += e;
      if (grad_phi)
        for (long k = 0; k < j; ++k) (*grad_phi)(i, k) += grad[static_cast<std::size_t>(k)] / T(n);
    }
  }
  out.l1 /= T(n);
  out.conciseness /= T(n);

  if (use_entropy) {
    const Vector<T> mean = phi.colwise().mean().transpose();
    const T e = soft_entropy_gradient<T>(std::span<const T>(mean.data(), static_cast<std::size_t>(j)), grad);
    out.diversity = -e;
    if (grad_phi)
      for (long i = 0; i < n; ++i)
        for (long k = 0; k < j; ++k) (*grad_phi)(i, k) -= grad[static_cast<std::size_t>(k)] / T(n);
  }
  out.total = out.diversity + out.conciseness + eta * out.l1;
  return out;
}

template <typename T>
T input_fidelity_loss(const Matrix<T>& x_hat, const Matrix<T>& x, Matrix<T>* grad) {
  if (x_hat.rows() != x.rows() || x_hat.cols() != x.cols() || x.size() == 0)
    throw ShapeError("input fidelity: reconstruction shape differs from input");
  const Matrix<T> diff = x_hat - x;
  const T count = static_cast<T>(x.size());
  if (grad) *grad = diff * (T(2) / count);
  return diff.squaredNorm() / count;
}

LossBreakdown total_loss(double pred, double of, const ConcisenessTerms<double>& cd, double if_,
                         const LossWeights& weights, const StageMask& mask) {
  weights.validate();
  LossBreakdown b;
  b.pred = mask.use_pred ? pred : 0.0;
  b.of = mask.use_of ? of : 0.0;
  b.cd = mask.use_cd ? cd.total : 0.0;
  b.diversity = mask.use_cd ? cd.diversity : 0.0;
  b.conciseness = mask.use_cd ? cd.conciseness : 0.0;
  b.l1 = mask.use_cd ? cd.l1 : 0.0;
  b.if_ = if_;
  b.total = b.pred + weights.beta * b.of + weights.gamma * b.if_ + weights.delta * b.cd;
  return b;
}

template <typename T>
Matrix<T> softmax_backward(const Matrix<T>& probs, const Matrix<T>& grad_probs) {
  Matrix<T> out(probs.rows(), probs.cols());
  for (long i = 0; i < probs.rows(); ++i) {
    const T dot = probs.row(i).dot(grad_probs.row(i));
    out.row(i) = (probs.row(i).array() * (grad_probs.row(i).array() - dot)).matrix();
  }
  return out;
}

#define FLINT_INSTANTIATE(T)                                                                                  \
  template T soft_entropy(std::span<const T>);                                                                \
  template T soft_entropy_gradient(std::span<const T>, std::span<T>);                                         \
  template T prediction_loss(const Matrix<T>&, std::span<const int>, Matrix<T>*);                            \
  template T output_fidelity_loss(const Matrix<T>&, const Matrix<T>&, Matrix<T>*, Matrix<T>*);               \
  template ConcisenessTerms<T> conciseness_diversity_loss(const Matrix<T>&, T, bool, Matrix<T>*);            \
  template T input_fidelity_loss(const Matrix<T>&, const Matrix<T>&, Matrix<T>*);                            \
  template Matrix<T> softmax_backward(const Matrix<T>&, const Matrix<T>&);

FLINT_INSTANTIATE(float)
FLINT_INSTANTIATE(double)

}  // namespace flint
