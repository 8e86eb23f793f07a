#include "flint/interpretation.hpp"

#include "flint/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace flint {

void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("relevance threshold must lie in (0, 1), got " + std::to_string(threshold));
}

LocalRelevance normalize_contributions(std::size_t sample_id, int predicted_class, Eigen::VectorXd alpha) {
  LocalRelevance out;
  out.sample_id = sample_id;
  out.predicted_class = predicted_class;
  const double peak = alpha.size() ? alpha.cwiseAbs().maxCoeff() : 0.0;
  out.r = peak > 0.0 ? Eigen::VectorXd(alpha / peak) : Eigen::VectorXd::Zero(alpha.size());
  out.alpha = std::move(alpha);
  return out;
}

LocalRelevance relevance_from_attributes(std::size_t sample_id, std::span<const double> phi,
                                         std::span<const double> head, int class_count, int predicted_class) {
  const auto j = static_cast<Eigen::Index>(phi.size());
  if (static_cast<Eigen::Index>(head.size()) != j * class_count)
    throw ShapeError("head has " + std::to_string(head.size()) + " entries, expected J*C");
  if (predicted_class < 0 || predicted_class >= class_count)
    throw ShapeError("predicted class " + std::to_string(predicted_class) + " out of range");
  Eigen::VectorXd alpha(j);
  for (Eigen::Index k = 0; k < j; ++k) alpha[k] = phi[k] * head[k * class_count + predicted_class];
  return normalize_contributions(sample_id, predicted_class, std::move(alpha));
}

namespace {

template <typename T>
std::vector<double> head_values(const ModelBundle<T>& bundle) {
  const auto& w = bundle.parameters()[bundle.head_index()].value;
  return std::vector<double>(w.data(), w.data() + w.size());
}

template <typename T>
void append_relevances(const ModelBundle<T>& bundle, const Matrix<T>& x, std::size_t first_id,
                       const std::vector<double>& head, std::vector<LocalRelevance>& out) {
  const PredictorOutput<T> o = forward_with_taps(bundle, x);
  const Matrix<T> phi = attributes(bundle, o.taps);
  const std::vector<int> yhat = argmax_rows(interpreter_logits(bundle, phi));
  std::vector<double> row(static_cast<std::size_t>(phi.cols()));
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    for (Eigen::Index k = 0; k < phi.cols(); ++k) row[static_cast<std::size_t>(k)] = static_cast<double>(phi(i, k));
    out.push_back(relevance_from_attributes(first_id + static_cast<std::size_t>(i), row, head, bundle.class_count(),
                                            yhat[static_cast<std::size_t>(i)]));
  }
}

}  // namespace

template <typename T>
LocalRelevance local_relevance(const ModelBundle<T>& bundle, const Matrix<T>& x, std::size_t sample_id) {
  if (x.rows() != 1) throw ShapeError("local_relevance expects a single input row");
  std::vector<LocalRelevance> out;
  append_relevances(bundle, x, sample_id, head_values(bundle), out);
  return out.front();
}

template <typename T>
std::vector<LocalRelevance> local_relevances(const ModelBundle<T>& bundle, const Dataset& data,
                                             const PreprocessConfig& preprocess) {
  std::vector<LocalRelevance> out;
  out.reserve(data.size());
  const auto head = head_values(bundle);
  const Matrix<float> images = normalize(data.images, preprocess);
  constexpr long kBatch = 256;
  for (long start = 0; start < images.rows(); start += kBatch) {
    const long count = std::min(kBatch, images.rows() - start);
    append_relevances(bundle, Matrix<T>(images.middleRows(start, count).template cast<T>()),
                      static_cast<std::size_t>(start), head, out);
  }
  return out;
}

GlobalRelevanceMatrix global_relevance(std::span<const LocalRelevance> locals, int attribute_count,
                                       int class_count) {
  if (locals.empty()) throw DataError("global relevance needs at least one sample");
  GlobalRelevanceMatrix m;
  m.r = Eigen::MatrixXd::Zero(attribute_count, class_count);
  m.support.assign(static_cast<std::size_t>(class_count), 0);
  for (const auto& l : locals) {
    if (l.r.size() != attribute_count) throw ShapeError("relevance vector length differs from J");
    if (l.predicted_class < 0 || l.predicted_class >= class_count) throw ShapeError("predicted class out of range");
    m.r.col(l.predicted_class) += l.r;
    ++m.support[static_cast<std::size_t>(l.predicted_class)];
  }
  for (int c = 0; c < class_count; ++c)
    if (m.support[static_cast<std::size_t>(c)] > 0) m.r.col(c) /= static_cast<double>(m.support[static_cast<std::size_t>(c)]);
  return m;
}

template <typename T>
GlobalRelevanceMatrix global_relevance(const ModelBundle<T>& bundle, const Dataset& data,
                                       const PreprocessConfig& preprocess) {
  const auto locals = local_relevances(bundle, data, preprocess);
  return global_relevance(locals, bundle.attribute_count(), bundle.class_count());
}

GlobalRelevanceMatrix merge(const GlobalRelevanceMatrix& a, const GlobalRelevanceMatrix& b) {
  if (a.r.rows() != b.r.rows() || a.r.cols() != b.r.cols()) throw ShapeError("cannot merge relevance matrices of different shape");
  GlobalRelevanceMatrix m;
  m.r = Eigen::MatrixXd::Zero(a.r.rows(), a.r.cols());
  m.support.resize(a.support.size());
  for (Eigen::Index c = 0; c < a.r.cols(); ++c) {
    const auto i = static_cast<std::size_t>(c);
    m.support[i] = a.support[i] + b.support[i];
    if (m.support[i] == 0) continue;
    m.r.col(c) = (static_cast<double>(a.support[i]) * a.r.col(c) + static_cast<double>(b.support[i]) * b.r.col(c)) /
                 static_cast<double>(m.support[i]);
  }
  return m;
}

std::vector<int> local_set(const Eigen::VectorXd& r, double threshold) {
  check_threshold(threshold);
  std::vector<int> out;
  for (Eigen::Index j = 0; j < r.size(); ++j)
    if (std::abs(r[j]) > threshold) out.push_back(static_cast<int>(j));
  return out;
}

std::vector<std::pair<int, int>> global_set(const GlobalRelevanceMatrix& m, double threshold) {
  check_threshold(threshold);
  std::vector<std::pair<int, int>> out;
  for (int c = 0; c < m.class_count(); ++c) {
    if (!m.defined(c)) continue;
    for (int j = 0; j < m.attribute_count(); ++j)
      if (m.r(j, c) > threshold) out.emplace_back(c, j);
  }
  return out;
}

InterpretationSet interpretation_sets(const LocalRelevance& local, const GlobalRelevanceMatrix& global,
                                      double threshold) {
  InterpretationSet s;
  s.threshold = threshold;
  s.local = local_set(local.r, threshold);
  s.global = global_set(global, threshold);
  return s;
}

std::string relevance_csv(const GlobalRelevanceMatrix& m, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << "attribute";
  for (int c = 0; c < m.class_count(); ++c) {
    const auto i = static_cast<std::size_t>(c);
    os << ',' << (i < class_names.size() ? class_names[i] : "c" + std::to_string(c));
  }
  os << '\n' << std::setprecision(17);
  for (int j = 0; j < m.attribute_count(); ++j) {
    os << j;
    for (int c = 0; c < m.class_count(); ++c) {
      os << ',';
      if (m.defined(c)) os << m.r(j, c);
    }
    os << '\n';
  }
  return os.str();
}

#define FLINT_INSTANTIATE(T)                                                                                   \
  template LocalRelevance local_relevance(const ModelBundle<T>&, const Matrix<T>&, std::size_t);               \
  template std::vector<LocalRelevance> local_relevances(const ModelBundle<T>&, const Dataset&,                 \
                                                        const PreprocessConfig&);                              \
  template GlobalRelevanceMatrix global_relevance(const ModelBundle<T>&, const Dataset&, const PreprocessConfig&);

FLINT_INSTANTIATE(float)
FLINT_INSTANTIATE(double)

}  // namespace flint
