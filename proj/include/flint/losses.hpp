#pragma once

#include "flint/tensor.hpp"

#include <span>
#include <vector>

namespace flint {

/// Non-negative weights of the interpretability terms.
struct LossWeights {
  double beta = 0.0;   // output fidelity
  double gamma = 0.0;  // input fidelity
  double delta = 0.0;  // conciseness + diversity
  double eta = 0.0;    // l1 strength inside the conciseness term
  /// When false the conciseness term keeps only the l1 penalty.
  bool use_entropy = true;

  void validate() const;
  static LossWeights mnist() { return {0.5, 0.8, 0.2, 0.5, true}; }
};

/// Terms active in the current training stage.
struct StageMask {
  bool use_pred = true;
  bool use_of = true;
  bool use_cd = true;
};

struct LossBreakdown {
  double pred = 0.0;
  double of = 0.0;
  double cd = 0.0;
  double if_ = 0.0;
  double total = 0.0;
  // cd sub-terms
  double diversity = 0.0;    // -E(mean phi)
  double conciseness = 0.0;  // batch mean of E(phi_i)
  double l1 = 0.0;           // batch mean of ||phi_i||_1, before eta
};

/// E(v) = -sum p log p with p = softmax(v). Throws NumericError on
/// non-finite input.
template <typename T>
T soft_entropy(std::span<const T> v);

/// dE/dv_i = -p_i (log p_i + E), written into `out`.
template <typename T>
T soft_entropy_gradient(std::span<const T> v, std::span<T> out);

/// Mean cross-entropy of softmax(logits) against integer labels.
template <typename T>
T prediction_loss(const Matrix<T>& logits, std::span<const int> labels, Matrix<T>* grad_logits = nullptr);

/// Mean over rows of -sum_c g log f. f is clamped below by 1e-12.
/// Gradients are taken w.r.t. the probability inputs.
template <typename T>
T output_fidelity_loss(const Matrix<T>& g_probs, const Matrix<T>& f_probs, Matrix<T>* grad_g = nullptr,
                       Matrix<T>* grad_f = nullptr);

template <typename T>
struct ConcisenessTerms {
  T total{};
  T diversity{};
  T conciseness{};
  T l1{};
};

template <typename T>
ConcisenessTerms<T> conciseness_diversity_loss(const Matrix<T>& phi, T eta, bool use_entropy = true,
                                               Matrix<T>* grad_phi = nullptr);

/// Batch mean of per-pixel mean squared error.
template <typename T>
T input_fidelity_loss(const Matrix<T>& x_hat, const Matrix<T>& x, Matrix<T>* grad = nullptr);

/// Combines the term values; masked terms contribute exactly zero.
LossBreakdown total_loss(double pred, double of, const ConcisenessTerms<double>& cd, double if_,
                         const LossWeights& weights, const StageMask& mask);

/// Pulls a gradient w.r.t. softmax outputs back to the logits.
template <typename T>
Matrix<T> softmax_backward(const Matrix<T>& probs, const Matrix<T>& grad_probs);

}  // namespace flint
