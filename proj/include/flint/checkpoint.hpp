#pragma once

#include "flint/config.hpp"
#include "flint/models.hpp"

#include <filesystem>
#include <string>

namespace flint {

/// On disk: a text header
///
///   FLINTCKPT <format_version>
///   epoch <n>
///   config_digest <hex>
///   parameter_digest <hex>
///   config <line count>
///   <canonical key=value lines>
///   arrays <count>
///   <name> <owner> <trainable 0|1> float32 <rank> <dims...>
///   payload
///
/// followed by the raw little-endian float32 arrays in manifest order.
struct Checkpoint {
  int format_version = kFormatVersion;
  int epoch = 0;
  RunConfig config;
  std::string config_digest;
  std::string parameter_digest;
  ModelBundle<float> bundle;
};

void save_checkpoint(const std::filesystem::path& path, const ModelBundle<float>& bundle, const RunConfig& config,
                     int epoch);

/// Rebuilds the bundle from the echoed config and verifies both digests.
/// Anything unreadable or inconsistent raises DataError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace flint
