#pragma once

#include "flint/data.hpp"
#include "flint/models.hpp"
#include "flint/training.hpp"
#include "flint/visualization.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace flint {

inline constexpr int kFormatVersion = 1;

enum class DataSource { synth, idx, manifest };

struct DataConfig {
  DataSource source = DataSource::synth;
  int train_per_class = 500;
  int test_per_class = 100;
  std::uint64_t seed = 1;
  std::string train_images, train_labels, test_images, test_labels;
  std::string manifest;
};

struct ModelConfig {
  std::string preset = "lenet_shapes";
  // Inline overrides; empty / zero keeps the preset value.
  std::string predictor, psi, decoder, taps, input_shape;
  int classes = 0;
  int attributes = 0;
  bool decoder_zero_init = true;
};

struct InterpretConfig {
  double threshold = 0.2;
  int mas_size = 3;
  // Relevance is averaged over this many seeded training samples (0 = all).
  int relevance_samples = 1000;
};

struct MetricsConfig {
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int max_k = 5;
  int disagreement_k = 3;
  int depth_directions = 1000;
};

/// Everything a command needs, parsed from `key=value` lines.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
  std::string predictor_checkpoint;  // post-hoc: source of the frozen predictor
  AmpiParams ampi;
  InterpretConfig interpret;
  MetricsConfig metrics;
  std::string output_dir = "flint_out";

  /// Fully resolved `key=value` lines in key order; the digest input.
  std::string canonical_text() const;
  std::string digest() const;
};

/// One schema entry, for `flint config --keys` style listings.
struct ConfigKey {
  std::string key;
  std::string description;
};
const std::vector<ConfigKey>& config_keys();

/// Parses `key=value` lines ('#' starts a comment). Unknown keys, duplicate
/// keys and malformed values raise ConfigError naming the line.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Applies one `key=value` override on top of an existing config.
void apply_override(RunConfig& config, const std::string& assignment);

/// Cross-field checks (stage epochs, thresholds, data paths...).
void validate(const RunConfig& config);

BundleSpec bundle_spec(const ModelConfig& model);

struct DataSplits {
  Dataset train;
  Dataset test;
};
DataSplits load_data(const DataConfig& data);

/// FLINT_OUTPUT_DIR wins over the configured directory.
std::filesystem::path output_directory(const RunConfig& config);

}  // namespace flint
