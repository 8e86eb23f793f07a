#pragma once

#include "flint/config.hpp"

#include <Eigen/Core>
#include <json.hpp>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace flint {

/// Stamped into every file a command writes.
struct ArtifactMeta {
  std::string config_digest;
  std::uint64_t seed = 0;
  int format_version = kFormatVersion;

  static ArtifactMeta of(const RunConfig& config) { return {config.digest(), config.seed, kFormatVersion}; }
  /// "# config_digest=... seed=... format_version=..." for CSV and text files.
  std::string comment_line() const;
};

/// 8-bit grayscale PNG of values in [0,1] (clamped, rounded to 255ths).
void write_png(const std::filesystem::path& path, const Eigen::MatrixXf& pixels);

/// Creates parent directories; text written verbatim.
void write_text(const std::filesystem::path& path, const std::string& text);

/// JSON-lines file; every record gets the meta fields merged in.
class JsonlWriter {
 public:
  JsonlWriter(const std::filesystem::path& path, ArtifactMeta meta);
  void write(nlohmann::ordered_json record);

 private:
  std::ofstream out_;
  ArtifactMeta meta_;
  std::filesystem::path path_;
};

/// CSV with the meta comment line first.
void write_csv(const std::filesystem::path& path, const ArtifactMeta& meta, const std::string& body);

}  // namespace flint
