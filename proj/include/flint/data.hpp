#pragma once

#include "flint/random.hpp"
#include "flint/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flint {

enum class Split { train, test };

/// Images in [0, 1], one sample per row (C*H*W), integer labels.
struct Dataset {
  Shape shape{1, 28, 28};
  Matrix<float> images;
  std::vector<int> labels;
  int class_count = 0;
  std::vector<std::string> class_names;
  Split split = Split::train;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  /// Checks the pixel range, label range and row count.
  void validate() const;
  Dataset subset(const std::vector<std::size_t>& ids) const;
  std::vector<std::size_t> indices_of_class(int cls) const;
};

/// Reads an IDX image file (magic 0x00000803, unsigned bytes, N x H x W)
/// and label file (magic 0x00000801). Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 Split split = Split::train);

/// Writes the dataset with pixels quantized to round(255 x).
void save_idx(const Dataset& data, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);

/// Deterministic 28x28 renderings of bar, cross, box and disk, jittered in
/// position, size and rotation. Classes are balanced and interleaved.
Dataset synth_shapes(int n_per_class, std::uint64_t seed, Split split = Split::train);

struct ManifestSplit {
  Dataset train;
  Dataset test;
};

/// Reads `class_name<TAB>path` lines. Each path is an IDX image file or a
/// uint8 .npy bitmap array (N x 784). Every class is shuffled with `seed`
/// and its first `train_per_class` / next `test_per_class` samples are kept.
ManifestSplit load_manifest(const std::filesystem::path& manifest, int train_per_class, int test_per_class,
                            std::uint64_t seed);

struct PreprocessConfig {
  std::optional<double> mean;
  std::optional<double> stddev;
  int pad = 0;        // zero padding before a random crop back to H x W
  bool flip = false;  // random horizontal flip

  void validate(const Shape& shape) const;
};

struct Batch {
  Matrix<float> images;
  std::vector<int> labels;
  std::vector<std::size_t> ids;
};

/// Seeded epoch-by-epoch batch stream. Each epoch uses an order derived
/// from (seed, epoch); augmentation draws from the same derived stream.
class BatchStream {
 public:
  BatchStream(const Dataset& data, PreprocessConfig config, int batch_size, std::uint64_t seed);

  void begin_epoch(int epoch);
  bool next(Batch& out);
  std::size_t batches_per_epoch() const;

 private:
  const Dataset* data_;
  PreprocessConfig config_;
  int batch_size_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  Rng augment_{0};
};

/// Applies normalization (no augmentation); used for evaluation.
Matrix<float> normalize(const Matrix<float>& images, const PreprocessConfig& config);

}  // namespace flint
