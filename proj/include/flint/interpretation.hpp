#pragma once

#include "flint/data.hpp"
#include "flint/models.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flint {

/// alpha_j = phi_j * w_{j,yhat}; r = alpha / max|alpha| (all-zero alpha gives r = 0).
struct LocalRelevance {
  std::size_t sample_id = 0;
  int predicted_class = 0;
  Eigen::VectorXd alpha;
  Eigen::VectorXd r;
};

/// Per-class mean of local relevance over samples predicted as that class.
/// Classes nobody was predicted as keep zeros and support 0.
struct GlobalRelevanceMatrix {
  Eigen::MatrixXd r;  // J x C
  std::vector<std::size_t> support;

  int attribute_count() const { return static_cast<int>(r.rows()); }
  int class_count() const { return static_cast<int>(r.cols()); }
  bool defined(int cls) const { return support[static_cast<std::size_t>(cls)] > 0; }
};

/// Local sets use |r| > t, global sets use signed r > t.
struct InterpretationSet {
  double threshold = 0.2;
  std::vector<int> local;
  std::vector<std::pair<int, int>> global;  // (class, attribute)
};

/// Throws ConfigError unless 0 < t < 1.
void check_threshold(double threshold);

/// Normalizes precomputed contributions.
LocalRelevance normalize_contributions(std::size_t sample_id, int predicted_class, Eigen::VectorXd alpha);

/// Relevance from attribute values and the J x C head (row-major, w_{j,c}).
LocalRelevance relevance_from_attributes(std::size_t sample_id, std::span<const double> phi,
                                         std::span<const double> head, int class_count, int predicted_class);

/// Relevance of one input row; yhat = argmax g(x), ties to the lowest class.
template <typename T>
LocalRelevance local_relevance(const ModelBundle<T>& bundle, const Matrix<T>& x, std::size_t sample_id = 0);

/// Relevance of every sample of `data` (ids are row indices).
template <typename T>
std::vector<LocalRelevance> local_relevances(const ModelBundle<T>& bundle, const Dataset& data,
                                             const PreprocessConfig& preprocess = {});

GlobalRelevanceMatrix global_relevance(std::span<const LocalRelevance> locals, int attribute_count,
                                       int class_count);

template <typename T>
GlobalRelevanceMatrix global_relevance(const ModelBundle<T>& bundle, const Dataset& data,
                                       const PreprocessConfig& preprocess = {});

/// Support-weighted combination of matrices built on disjoint sample sets.
GlobalRelevanceMatrix merge(const GlobalRelevanceMatrix& a, const GlobalRelevanceMatrix& b);

std::vector<int> local_set(const Eigen::VectorXd& r, double threshold);
std::vector<std::pair<int, int>> global_set(const GlobalRelevanceMatrix& m, double threshold);

InterpretationSet interpretation_sets(const LocalRelevance& local, const GlobalRelevanceMatrix& global,
                                      double threshold);

/// J rows x C columns; first column is the attribute index, header row
/// holds class names (or c0..). Undefined classes are written empty.
std::string relevance_csv(const GlobalRelevanceMatrix& m, const std::vector<std::string>& class_names);

}  // namespace flint
