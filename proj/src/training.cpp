#include "flint/training.hpp"

#include "flint/errors.hpp"
#include "flint/optim.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace flint {

const char* to_string(TrainMode mode) { return mode == TrainMode::joint ? "joint" : "posthoc"; }

void TrainConfig::validate() const {
  weights.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (schedule.of_epoch < 1 || schedule.cd_epoch < 1) throw ConfigError("stage epochs are 1-based");
  if (weights.beta > 0.0 && schedule.of_epoch > epochs)
    throw ConfigError("output-fidelity stage epoch " + std::to_string(schedule.of_epoch) + " exceeds epoch count");
  if (weights.delta > 0.0 && schedule.cd_epoch > epochs)
    throw ConfigError("conciseness stage epoch " + std::to_string(schedule.cd_epoch) + " exceeds epoch count");
}

StageMask stage_mask(const TrainConfig& config, int epoch) {
  StageMask m;
  m.use_pred = config.mode == TrainMode::joint;
  m.use_of = epoch >= config.schedule.of_epoch;
  m.use_cd = epoch >= config.schedule.cd_epoch;
  return m;
}

namespace {

template <typename T>
GradientResult<T> gradients_impl(const ModelBundle<T>& bundle, const Matrix<T>& x, std::span<const int> labels,
                                 const TrainConfig& config, const StageMask& mask,
                                 const PredictorOutput<T>* precomputed) {
  const bool joint = config.mode == TrainMode::joint;
  const LossWeights& w = config.weights;
  GradientResult<T> result;
  result.grads = bundle.parameters().zero_gradients();
  Gradients<T>* grads = &result.grads;

  Trace<T> predictor_trace, psi_trace, decoder_trace;
  PredictorOutput<T> out;
  if (precomputed) {
    out = *precomputed;
  } else {
    out = forward_with_taps(bundle, x, joint ? &predictor_trace : nullptr);
  }
  const Matrix<T> f_probs = softmax_rows(out.logits);
  const Matrix<T> phi = attributes(bundle, out.taps, &psi_trace);
  const Matrix<T> g_probs = interpreter_forward(bundle, phi);
  const Matrix<T> x_hat = decode(bundle, phi, &decoder_trace);

  Matrix<T> d_logits = Matrix<T>::Zero(out.logits.rows(), out.logits.cols());
  double pred = 0.0;
  if (mask.use_pred) pred = static_cast<double>(prediction_loss(out.logits, labels, &d_logits));

  double of = 0.0;
  Matrix<T> d_g, d_f;
  if (mask.use_of) of = static_cast<double>(output_fidelity_loss(g_probs, f_probs, &d_g, &d_f));

  ConcisenessTerms<T> cd_t;
  Matrix<T> d_phi_cd;
  if (mask.use_cd) cd_t = conciseness_diversity_loss(phi, static_cast<T>(w.eta), w.use_entropy, &d_phi_cd);

  Matrix<T> d_xhat;
  const double if_ = static_cast<double>(input_fidelity_loss(x_hat, x, &d_xhat));

  const ConcisenessTerms<double> cd{static_cast<double>(cd_t.total), static_cast<double>(cd_t.diversity),
                                    static_cast<double>(cd_t.conciseness), static_cast<double>(cd_t.l1)};
  result.loss = total_loss(pred, of, cd, if_, w, mask);
  if (!std::isfinite(result.loss.total)) {
    std::ostringstream os;
    os << "non-finite loss: pred=" << pred << " of=" << of << " cd=" << cd.total << " if=" << if_;
    throw NumericError(os.str());
  }

  Matrix<T> d_phi = Matrix<T>::Zero(phi.rows(), phi.cols());
  if (mask.use_of && w.beta > 0.0) {
    const T beta = static_cast<T>(w.beta);
    const Matrix<T> d_zg = softmax_backward(g_probs, Matrix<T>(beta * d_g));
    Vector<T>& d_head = (*grads)[bundle.head_index()];
    if (bundle.parameters()[bundle.head_index()].trainable)
      Eigen::Map<Matrix<T>>(d_head.data(), bundle.attribute_count(), bundle.class_count()).noalias() +=
          phi.transpose() * d_zg;
    Eigen::Map<const Matrix<T>> head(bundle.parameters()[bundle.head_index()].value.data(), bundle.attribute_count(),
                                     bundle.class_count());
    d_phi.noalias() += d_zg * head.transpose();
    if (joint && config.of_grad_into_predictor) d_logits += softmax_backward(f_probs, Matrix<T>(beta * d_f));
  }
  if (mask.use_cd && w.delta > 0.0) d_phi += static_cast<T>(w.delta) * d_phi_cd;
  if (w.gamma > 0.0) {
    const Matrix<T> scaled = static_cast<T>(w.gamma) * d_xhat;
    d_phi += bundle.decoder().backward(bundle.parameters(), decoder_trace, scaled, grads, {}, true);
  }

  const Matrix<T> d_taps = bundle.psi().backward(bundle.parameters(), psi_trace, d_phi, grads, {}, joint);
  if (joint) {
    std::vector<Matrix<T>> blocks;
    std::vector<InjectedGradient<T>> injected;
    const auto& taps = bundle.spec().taps.tap_indices;
    blocks.reserve(taps.size());
    long col = 0;
    for (std::size_t t = 0; t < taps.size(); ++t) {
      blocks.push_back(d_taps.middleCols(col, bundle.tap_dims()[t]));
      col += bundle.tap_dims()[t];
    }
    for (std::size_t t = 0; t < taps.size(); ++t) injected.push_back({taps[t] - 1, &blocks[t]});
    bundle.predictor().backward(bundle.parameters(), predictor_trace, d_logits, grads,
                                std::span<const InjectedGradient<T>>(injected), false);
  }
  return result;
}

void accumulate(LossBreakdown& sum, const LossBreakdown& b, double weight) {
  sum.pred += weight * b.pred;
  sum.of += weight * b.of;
  sum.cd += weight * b.cd;
  sum.if_ += weight * b.if_;
  sum.total += weight * b.total;
  sum.diversity += weight * b.diversity;
  sum.conciseness += weight * b.conciseness;
  sum.l1 += weight * b.l1;
}

template <typename T>
std::pair<ModelBundle<T>, TrainReport> run_training(ModelBundle<T> bundle, const Dataset& train,
                                                    const TrainConfig& config, const Dataset* test,
                                                    const EpochCallback& on_epoch) {
  config.validate();
  if (train.size() == 0) throw DataError("training set is empty");
  const auto started = std::chrono::steady_clock::now();
  const bool joint = config.mode == TrainMode::joint;

  TrainReport report;
  report.mode = config.mode;
  report.batch_size = config.batch_size;

  // A frozen predictor without augmentation yields fixed outputs; compute them once.
  const bool augmenting = config.preprocess.pad > 0 || config.preprocess.flip;
  std::vector<PredictorOutput<T>> cache;
  if (!joint && !augmenting) {
    const Matrix<float> all = normalize(train.images, config.preprocess);
    cache.resize(train.size());
    for (std::size_t start = 0; start < train.size(); start += 256) {
      const long count = static_cast<long>(std::min<std::size_t>(256, train.size() - start));
      const Matrix<T> xb = all.middleRows(static_cast<long>(start), count).template cast<T>();
      const PredictorOutput<T> o = forward_with_taps(bundle, xb);
      for (long r = 0; r < count; ++r) {
        cache[start + static_cast<std::size_t>(r)].logits = o.logits.row(r);
        cache[start + static_cast<std::size_t>(r)].taps = o.taps.row(r);
      }
    }
  }

  AdamSettings settings;
  settings.learning_rate = config.learning_rate;
  Adam<T> adam(settings);
  BatchStream stream(train, config.preprocess, config.batch_size, config.seed);
  Batch batch;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.mask = stage_mask(config, epoch);
    stream.begin_epoch(epoch);
    std::size_t seen = 0;
    while (stream.next(batch)) {
      if (config.max_steps >= 0 && adam.steps() >= config.max_steps) break;
      const Matrix<T> x = batch.images.template cast<T>();
      GradientResult<T> step;
      try {
        if (!cache.empty()) {
          PredictorOutput<T> pre;
          pre.logits.resize(x.rows(), bundle.class_count());
          pre.taps.resize(x.rows(), bundle.tap_dim());
          for (std::size_t b = 0; b < batch.ids.size(); ++b) {
            pre.logits.row(static_cast<long>(b)) = cache[batch.ids[b]].logits;
            pre.taps.row(static_cast<long>(b)) = cache[batch.ids[b]].taps;
          }
          step = gradients_impl(bundle, x, batch.labels, config, record.mask, &pre);
        } else {
          step = gradients_impl<T>(bundle, x, batch.labels, config, record.mask, nullptr);
        }
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(record.batches + 1) + ": " + e.what());
      }
      adam.step(bundle.parameters(), step.grads);
      accumulate(record.mean, step.loss, static_cast<double>(batch.labels.size()));
      seen += batch.labels.size();
      ++record.batches;
    }
    if (seen > 0) {
      LossBreakdown mean;
      accumulate(mean, record.mean, 1.0 / static_cast<double>(seen));
      record.mean = mean;
    }
    report.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
  }

  report.train = evaluate(bundle, train, config.preprocess);
  if (test) {
    report.test = evaluate(bundle, *test, config.preprocess);
    report.has_test = true;
  }
  report.parameter_digest = bundle.parameters().digest();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(bundle), std::move(report)};
}

}  // namespace

template <typename T>
GradientResult<T> compute_gradients(const ModelBundle<T>& bundle, const Matrix<T>& x, std::span<const int> labels,
                                    const TrainConfig& config, const StageMask& mask) {
  return gradients_impl<T>(bundle, x, labels, config, mask, nullptr);
}

template <typename T>
std::pair<ModelBundle<T>, TrainReport> train_joint(const ModelBundle<T>& bundle, const Dataset& train,
                                                   const TrainConfig& config, const Dataset* test,
                                                   const EpochCallback& on_epoch) {
  if (config.mode != TrainMode::joint) throw ConfigError("train_joint requires mode=joint");
  ModelBundle<T> copy = bundle;
  for (auto& p : copy.parameters()) p.trainable = true;
  return run_training(std::move(copy), train, config, test, on_epoch);
}

template <typename T>
std::pair<ModelBundle<T>, TrainReport> train_posthoc(const ModelBundle<T>& frozen_bundle, const Dataset& train,
                                                     const TrainConfig& config, const Dataset* test,
                                                     const EpochCallback& on_epoch) {
  if (config.mode != TrainMode::posthoc) throw ConfigError("train_posthoc requires mode=posthoc");
  if (frozen_bundle.parameters().any_trainable(Owner::predictor))
    throw ConfigError("post-hoc training refuses a trainable predictor; freeze theta_f first");
  return run_training(frozen_bundle, train, config, test, on_epoch);
}

template <typename T>
Predictions predict(const ModelBundle<T>& bundle, const Dataset& data, const PreprocessConfig& preprocess,
                    int batch_size) {
  Predictions p;
  const long n = static_cast<long>(data.size());
  p.g_probs.resize(n, bundle.class_count());
  p.phi.resize(n, bundle.attribute_count());
  const Matrix<float> images = normalize(data.images, preprocess);
  for (long start = 0; start < n; start += batch_size) {
    const long count = std::min<long>(batch_size, n - start);
    const Matrix<T> x = images.middleRows(start, count).template cast<T>();
    const PredictorOutput<T> out = forward_with_taps(bundle, x);
    const Matrix<T> phi = attributes(bundle, out.taps);
    const Matrix<T> g = interpreter_forward(bundle, phi);
    const auto fa = argmax_rows(out.logits);
    const auto ga = argmax_rows(g);
    p.f.insert(p.f.end(), fa.begin(), fa.end());
    p.g.insert(p.g.end(), ga.begin(), ga.end());
    p.g_probs.middleRows(start, count) = g.template cast<float>();
    p.phi.middleRows(start, count) = phi.template cast<float>();
  }
  return p;
}

template <typename T>
EvalResult evaluate(const ModelBundle<T>& bundle, const Dataset& data, const PreprocessConfig& preprocess) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  const Predictions p = predict(bundle, data, preprocess);
  EvalResult r;
  r.count = data.size();
  std::size_t af = 0, ag = 0, agree = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    af += p.f[i] == data.labels[i];
    ag += p.g[i] == data.labels[i];
    agree += p.f[i] == p.g[i];
  }
  const double n = static_cast<double>(data.size());
  r.accuracy_f = static_cast<double>(af) / n;
  r.accuracy_g = static_cast<double>(ag) / n;
  r.fidelity = static_cast<double>(agree) / n;
  return r;
}

#define FLINT_INSTANTIATE(T)                                                                                    \
  template GradientResult<T> compute_gradients(const ModelBundle<T>&, const Matrix<T>&, std::span<const int>,   \
                                               const TrainConfig&, const StageMask&);                           \
  template std::pair<ModelBundle<T>, TrainReport> train_joint(const ModelBundle<T>&, const Dataset&,            \
                                                              const TrainConfig&, const Dataset*,               \
                                                              const EpochCallback&);                            \
  template std::pair<ModelBundle<T>, TrainReport> train_posthoc(const ModelBundle<T>&, const Dataset&,          \
                                                                const TrainConfig&, const Dataset*,             \
                                                                const EpochCallback&);                          \
  template Predictions predict(const ModelBundle<T>&, const Dataset&, const PreprocessConfig&, int);            \
  template EvalResult evaluate(const ModelBundle<T>&, const Dataset&, const PreprocessConfig&);

FLINT_INSTANTIATE(float)
FLINT_INSTANTIATE(double)

}  // namespace flint
