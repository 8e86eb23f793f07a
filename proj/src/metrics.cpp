#include "flint/metrics.hpp"

#include "flint/errors.hpp"
#include "flint/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace flint {

double fidelity(std::span<const int> f_argmax, std::span<const int> g_argmax) {
  if (f_argmax.size() != g_argmax.size())
    throw ShapeError("fidelity inputs differ in length: " + std::to_string(f_argmax.size()) + " vs " +
                     std::to_string(g_argmax.size()));
  if (f_argmax.empty()) throw DataError("fidelity of an empty set");
  std::size_t agree = 0;
  for (std::size_t i = 0; i < f_argmax.size(); ++i) agree += f_argmax[i] == g_argmax[i];
  return static_cast<double>(agree) / static_cast<double>(f_argmax.size());
}

double top_k_fidelity(std::span<const int> f_argmax, const Eigen::MatrixXd& g_probs, int k) {
  const auto classes = static_cast<int>(g_probs.cols());
  if (k < 1 || k > classes)
    throw ConfigError("top-k fidelity needs 1 <= k <= " + std::to_string(classes) + ", got " + std::to_string(k));
  if (static_cast<Eigen::Index>(f_argmax.size()) != g_probs.rows()) throw ShapeError("top-k fidelity row mismatch");
  if (f_argmax.empty()) throw DataError("top-k fidelity of an empty set");
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < g_probs.rows(); ++i) {
    const int c = f_argmax[static_cast<std::size_t>(i)];
    if (c < 0 || c >= classes) throw ShapeError("class " + std::to_string(c) + " out of range");
    const double pc = g_probs(i, c);
    int ahead = 0;
    for (int o = 0; o < classes; ++o)
      if (g_probs(i, o) > pc || (g_probs(i, o) == pc && o < c)) ++ahead;
    hits += ahead < k;
  }
  return static_cast<double>(hits) / static_cast<double>(f_argmax.size());
}

ConcisenessCurve conciseness_curve(std::span<const LocalRelevance> relevances, std::span<const double> thresholds) {
  if (relevances.empty() || thresholds.empty()) throw DataError("conciseness curve needs relevances and thresholds");
  ConcisenessCurve curve;
  for (double t : thresholds) {
    check_threshold(t);
    std::size_t total = 0;
    for (const auto& l : relevances) total += local_set(l.r, t).size();
    curve.thresholds.push_back(t);
    curve.values.push_back(static_cast<double>(total) / static_cast<double>(relevances.size()));
  }
  return curve;
}

template <typename T>
ShuffleResult shuffle_attribute_test(const ModelBundle<T>& bundle, const Dataset& data, std::uint64_t seed,
                                     bool identity) {
  if (data.size() == 0) throw DataError("shuffle test on an empty dataset");
  const int j = bundle.attribute_count();
  const Eigen::Map<const Matrix<T>> head(bundle.parameters()[bundle.head_index()].value.data(), j,
                                         bundle.class_count());
  Rng rng(seed);
  std::size_t correct = 0, shuffled_correct = 0;
  constexpr long kBatch = 256;
  for (long start = 0; start < data.images.rows(); start += kBatch) {
    const long count = std::min(kBatch, data.images.rows() - start);
    const Matrix<T> x = data.images.middleRows(start, count).template cast<T>();
    const Matrix<T> phi = attributes(bundle, forward_with_taps(bundle, x).taps);
    Matrix<T> permuted(phi.rows(), phi.cols());
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
      if (identity) {
        permuted.row(i) = phi.row(i);
        continue;
      }
      const std::vector<std::size_t> perm = rng.permutation(static_cast<std::size_t>(j));
      for (int k = 0; k < j; ++k) permuted(i, k) = phi(i, static_cast<Eigen::Index>(perm[static_cast<std::size_t>(k)]));
    }
    const auto before = argmax_rows(Matrix<T>(phi * head));
    const auto after = argmax_rows(Matrix<T>(permuted * head));
    for (long i = 0; i < count; ++i) {
      const int label = data.labels[static_cast<std::size_t>(start + i)];
      correct += before[static_cast<std::size_t>(i)] == label;
      shuffled_correct += after[static_cast<std::size_t>(i)] == label;
    }
  }
  ShuffleResult r;
  const auto n = static_cast<double>(data.size());
  r.accuracy = static_cast<double>(correct) / n;
  r.shuffled_accuracy = static_cast<double>(shuffled_correct) / n;
  // Same counts give exactly 0.
  r.drop_points = 100.0 * static_cast<double>(static_cast<long>(correct) - static_cast<long>(shuffled_correct)) / n;
  return r;
}

Eigen::MatrixXd random_directions(int dimension, int count, std::uint64_t seed) {
  if (dimension < 1 || count < 1) throw ConfigError("projection depth needs positive dimension and direction count");
  Rng rng(seed);
  Eigen::MatrixXd d(count, dimension);
  for (int k = 0; k < count; ++k) {
    double norm = 0.0;
    do {
      for (int i = 0; i < dimension; ++i) d(k, i) = rng.normal();
      norm = d.row(k).norm();
    } while (norm == 0.0);
    d.row(k) /= norm;
  }
  return d;
}

namespace {

double median_of(std::vector<double>& v) {
  const std::size_t n = v.size();
  const auto mid = v.begin() + static_cast<long>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  const double upper = *mid;
  if (n % 2) return upper;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace

Eigen::VectorXd projection_depths(const Eigen::MatrixXd& points, const Eigen::MatrixXd& data,
                                  const Eigen::MatrixXd& directions) {
  if (data.rows() < 3) throw DataError("projection depth needs at least 3 reference samples");
  if (directions.rows() < 1) throw ConfigError("projection depth needs at least one direction");
  if (points.cols() != data.cols() || directions.cols() != data.cols())
    throw ShapeError("projection depth dimension mismatch");
  const Eigen::MatrixXd proj_data = data * directions.transpose();      // n x K
  const Eigen::MatrixXd proj_points = points * directions.transpose();  // m x K
  Eigen::VectorXd outlying = Eigen::VectorXd::Zero(points.rows());
  std::vector<bool> infinite(static_cast<std::size_t>(points.rows()), false);
  bool any_used = false;
  std::vector<double> col(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index k = 0; k < directions.rows(); ++k) {
    for (Eigen::Index i = 0; i < data.rows(); ++i) col[static_cast<std::size_t>(i)] = proj_data(i, k);
    const double med = median_of(col);
    for (auto& v : col) v = std::abs(v - med);
    const double mad = median_of(col);
    for (Eigen::Index p = 0; p < points.rows(); ++p) {
      const double num = std::abs(proj_points(p, k) - med);
      if (mad > 0.0) {
        outlying[p] = std::max(outlying[p], num / mad);
        any_used = true;
      } else if (num > 0.0) {
        infinite[static_cast<std::size_t>(p)] = true;
        any_used = true;
      }
    }
  }
  if (!any_used) throw NumericError("projection depth: every direction has zero MAD");
  Eigen::VectorXd depth(points.rows());
  for (Eigen::Index p = 0; p < points.rows(); ++p)
    depth[p] = infinite[static_cast<std::size_t>(p)] ? 0.0 : 1.0 / (1.0 + outlying[p]);
  return depth;
}

double projection_depth(const Eigen::VectorXd& x, const Eigen::MatrixXd& data, int direction_count,
                        std::uint64_t seed) {
  return projection_depths(x.transpose(), data, random_directions(static_cast<int>(data.cols()), direction_count, seed))[0];
}

DepthReport projection_depth_report(const Eigen::MatrixXd& points, const Eigen::MatrixXd& data, int direction_count,
                                    std::uint64_t seed) {
  DepthReport r;
  r.direction_count = direction_count;
  r.seed = seed;
  r.depths = projection_depths(points, data, random_directions(static_cast<int>(data.cols()), direction_count, seed));
  return r;
}

namespace {

Eigen::MatrixXd rows_of(const Dataset& d, const std::vector<std::size_t>& ids) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(ids.size()), d.images.cols());
  for (std::size_t i = 0; i < ids.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = d.images.row(static_cast<Eigen::Index>(ids[i])).cast<double>();
  return m;
}

}  // namespace

template <typename T>
DisagreementReport disagreement_report(const ModelBundle<T>& bundle, const Dataset& data, const Dataset& reference,
                                       const DisagreementOptions& options) {
  const int classes = bundle.class_count();
  if (options.k < 1 || options.k > classes) throw ConfigError("disagreement k must lie in 1.." + std::to_string(classes));
  DisagreementReport report;
  report.k = options.k;
  report.evaluated = data.size();
  report.baseline_median_depth.assign(static_cast<std::size_t>(classes), -1.0);

  std::vector<bool> flagged(data.size(), false);
  constexpr long kBatch = 256;
  for (long start = 0; start < data.images.rows(); start += kBatch) {
    const long count = std::min(kBatch, data.images.rows() - start);
    const Matrix<T> x = data.images.middleRows(start, count).template cast<T>();
    const PredictorOutput<T> out = forward_with_taps(bundle, x);
    const Matrix<T> g = interpreter_forward(bundle, attributes(bundle, out.taps));
    const auto f = argmax_rows(out.logits);
    for (long i = 0; i < count; ++i) {
      const auto id = static_cast<std::size_t>(start + i);
      const int fc = f[static_cast<std::size_t>(i)];
      std::vector<int> order(static_cast<std::size_t>(classes));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return g(i, a) > g(i, b); });
      order.resize(static_cast<std::size_t>(options.k));
      if (std::find(order.begin(), order.end(), fc) != order.end()) continue;
      flagged[id] = true;
      DisagreementEntry e;
      e.sample_id = id;
      e.label = data.labels[id];
      e.f_class = fc;
      e.g_top = std::move(order);
      e.f_correct = fc == e.label;
      report.entries.push_back(std::move(e));
    }
  }

  for (int c = 0; c < classes; ++c) {
    std::vector<std::size_t> need;
    for (std::size_t i = 0; i < report.entries.size(); ++i)
      if (report.entries[i].f_correct && report.entries[i].f_class == c) need.push_back(i);
    if (need.empty()) continue;
    const std::vector<std::size_t> ref_ids = reference.indices_of_class(c);
    if (ref_ids.size() < 3) continue;
    const Eigen::MatrixXd cloud = rows_of(reference, ref_ids);
    const Eigen::MatrixXd dirs = random_directions(static_cast<int>(cloud.cols()), options.direction_count,
                                                   derive_seed(options.seed, static_cast<std::uint64_t>(c)));
    std::vector<std::size_t> query;
    for (std::size_t i : need) query.push_back(report.entries[i].sample_id);
    const Eigen::VectorXd d = projection_depths(rows_of(data, query), cloud, dirs);
    for (std::size_t q = 0; q < need.size(); ++q) report.entries[need[q]].depth = d[static_cast<Eigen::Index>(q)];

    std::vector<std::size_t> base;
    for (std::size_t i = 0; i < data.size() && base.size() < options.baseline_size; ++i)
      if (!flagged[i] && data.labels[i] == c) base.push_back(i);
    if (base.empty()) continue;
    const Eigen::VectorXd bd = projection_depths(rows_of(data, base), cloud, dirs);
    std::vector<double> v(bd.data(), bd.data() + bd.size());
    report.baseline_median_depth[static_cast<std::size_t>(c)] = median_of(v);
  }
  return report;
}

#define FLINT_INSTANTIATE(T)                                                                              \
  template ShuffleResult shuffle_attribute_test(const ModelBundle<T>&, const Dataset&, std::uint64_t, bool); \
  template DisagreementReport disagreement_report(const ModelBundle<T>&, const Dataset&, const Dataset&,  \
                                                  const DisagreementOptions&);

FLINT_INSTANTIATE(float)
FLINT_INSTANTIATE(double)

}  // namespace flint
