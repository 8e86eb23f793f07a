#pragma once

#include "flint/data.hpp"
#include "flint/losses.hpp"
#include "flint/models.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flint {

enum class TrainMode { joint, posthoc };

const char* to_string(TrainMode mode);

/// 1-based epochs from which the output-fidelity and conciseness terms
/// are switched on. Transitions happen only at epoch boundaries.
struct StageSchedule {
  int of_epoch = 3;
  int cd_epoch = 4;
};

struct TrainConfig {
  LossWeights weights;
  int epochs = 12;
  int batch_size = 64;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::joint;
  StageSchedule schedule;
  /// Joint mode only: let the output-fidelity gradient reach theta_f
  /// through f's probabilities.
  bool of_grad_into_predictor = true;
  PreprocessConfig preprocess;
  /// Optional cap on optimizer steps; negative means no cap.
  long max_steps = -1;

  void validate() const;
};

StageMask stage_mask(const TrainConfig& config, int epoch);

struct EvalResult {
  double accuracy_f = 0.0;
  double accuracy_g = 0.0;
  double fidelity = 0.0;
  std::size_t count = 0;
};

struct EpochRecord {
  int epoch = 0;
  StageMask mask;
  LossBreakdown mean;
  std::size_t batches = 0;
};

struct TrainReport {
  TrainMode mode = TrainMode::joint;
  std::vector<EpochRecord> epochs;
  EvalResult train;
  EvalResult test;
  bool has_test = false;
  double seconds = 0.0;
  std::string parameter_digest;
  int batch_size = 0;
};

template <typename T>
struct GradientResult {
  LossBreakdown loss;
  Gradients<T> grads;
};

/// Loss and parameter gradients of one mini-batch. Gradients of frozen
/// arrays stay zero. In post-hoc mode the predictor is treated as a constant.
template <typename T>
GradientResult<T> compute_gradients(const ModelBundle<T>& bundle, const Matrix<T>& x, std::span<const int> labels,
                                    const TrainConfig& config, const StageMask& mask);

/// Called after each epoch with the finished record.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Staged joint optimization of predictor, interpreter and decoder.
/// Works on a copy; the input bundle is untouched.
template <typename T>
std::pair<ModelBundle<T>, TrainReport> train_joint(const ModelBundle<T>& bundle, const Dataset& train,
                                                   const TrainConfig& config, const Dataset* test = nullptr,
                                                   const EpochCallback& on_epoch = {});

/// Fits psi, head and decoder to a frozen predictor (no prediction loss).
/// Refuses a bundle whose predictor parameters are trainable.
template <typename T>
std::pair<ModelBundle<T>, TrainReport> train_posthoc(const ModelBundle<T>& frozen_bundle, const Dataset& train,
                                                     const TrainConfig& config, const Dataset* test = nullptr,
                                                     const EpochCallback& on_epoch = {});

/// Marks every predictor array frozen, as post-hoc training requires.
template <typename T>
void freeze_predictor(ModelBundle<T>& bundle) {
  bundle.parameters().set_trainable(Owner::predictor, false);
}

struct Predictions {
  std::vector<int> f;
  std::vector<int> g;
  Matrix<float> g_probs;
  Matrix<float> phi;
};

/// Predictor and interpreter outputs for every sample, in order.
template <typename T>
Predictions predict(const ModelBundle<T>& bundle, const Dataset& data, const PreprocessConfig& preprocess = {},
                    int batch_size = 256);

template <typename T>
EvalResult evaluate(const ModelBundle<T>& bundle, const Dataset& data, const PreprocessConfig& preprocess = {});

}  // namespace flint
