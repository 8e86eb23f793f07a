#pragma once

#include <Eigen/Core>

#include <string>

namespace flint {

/// Batches are row-major: one sample per row, features in C*H*W order.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct Shape {
  int channels = 0;
  int height = 1;
  int width = 1;

  int size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

}  // namespace flint
