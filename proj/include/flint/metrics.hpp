#pragma once

#include "flint/data.hpp"
#include "flint/interpretation.hpp"
#include "flint/models.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace flint {

/// Fraction of positions where the two label vectors agree.
double fidelity(std::span<const int> f_argmax, std::span<const int> g_argmax);

/// Fraction of rows whose f class is among the k largest g probabilities
/// (equal probabilities rank the lower class index first).
double top_k_fidelity(std::span<const int> f_argmax, const Eigen::MatrixXd& g_probs, int k);

struct ConcisenessCurve {
  std::vector<double> thresholds;
  std::vector<double> values;  // mean |{j : |r_j| > t}|
};

ConcisenessCurve conciseness_curve(std::span<const LocalRelevance> relevances, std::span<const double> thresholds);

struct ShuffleResult {
  double accuracy = 0.0;           // g on the original attributes, in [0,1]
  double shuffled_accuracy = 0.0;  // g on per-sample permuted attributes
  double drop_points = 0.0;        // 100 * (accuracy - shuffled_accuracy)
};

/// Accuracy of g against labels before and after permuting each sample's
/// attribute vector with its own seeded permutation. `identity` keeps the
/// attributes in place (a control that must give a zero drop).
template <typename T>
ShuffleResult shuffle_attribute_test(const ModelBundle<T>& bundle, const Dataset& data, std::uint64_t seed,
                                     bool identity = false);

/// K unit directions in R^d drawn from an isotropic Gaussian.
Eigen::MatrixXd random_directions(int dimension, int count, std::uint64_t seed);

/// Depth of every row of `points` w.r.t. the cloud `data` (rows are
/// samples), with the supremum taken over the rows of `directions`.
/// A direction with MAD = 0 is skipped, unless the point projects away
/// from the median there, which makes its depth 0.
Eigen::VectorXd projection_depths(const Eigen::MatrixXd& points, const Eigen::MatrixXd& data,
                                  const Eigen::MatrixXd& directions);

double projection_depth(const Eigen::VectorXd& x, const Eigen::MatrixXd& data, int direction_count,
                        std::uint64_t seed);

struct DepthReport {
  Eigen::VectorXd depths;
  int direction_count = 0;
  std::uint64_t seed = 0;
};

DepthReport projection_depth_report(const Eigen::MatrixXd& points, const Eigen::MatrixXd& data, int direction_count,
                                    std::uint64_t seed);

struct DisagreementEntry {
  std::size_t sample_id = 0;
  int label = 0;
  int f_class = 0;
  std::vector<int> g_top;  // g's k best classes, best first
  bool f_correct = false;
  double depth = -1.0;  // only for f-correct entries with a reference cloud, else -1
};

struct DisagreementReport {
  int k = 1;
  std::size_t evaluated = 0;
  std::vector<DisagreementEntry> entries;
  // Per class: median depth of up to `baseline_size` unflagged samples of
  // that class, -1 when no entry of the class needed a depth.
  std::vector<double> baseline_median_depth;
};

struct DisagreementOptions {
  int k = 1;
  int direction_count = 1000;
  std::uint64_t seed = 0;
  std::size_t baseline_size = 100;
};

/// Samples whose f class is outside g's top k. Depths are computed in
/// flattened input space against `reference` samples labelled with f's class.
template <typename T>
DisagreementReport disagreement_report(const ModelBundle<T>& bundle, const Dataset& data, const Dataset& reference,
                                       const DisagreementOptions& options);

}  // namespace flint
