#pragma once

#include "flint/config.hpp"
#include "flint/training.hpp"

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace flint {

struct TrainOutcome {
  std::filesystem::path checkpoint;
  TrainReport report;
  std::string predictor_digest_before;  // post-hoc only
  std::string predictor_digest_after;
};

/// Joint or post-hoc training. Writes checkpoint.flint, train_report.jsonl
/// and summary.txt under the output directory. Progress goes to `log`.
TrainOutcome cmd_train(const RunConfig& config, std::ostream& log);

/// Checkpoint config with `overrides` applied. Model and training keys
/// describe the stored weights and cannot be overridden.
RunConfig resolve_config(const RunConfig& stored, const std::vector<std::string>& overrides);

struct InterpretRequest {
  std::filesystem::path checkpoint;
  std::vector<std::string> overrides;
  bool local = false;
  std::vector<std::size_t> sample_ids;  // local mode, row indices of `split`
  Split split = Split::test;
};

/// Global mode: relevance.csv, relevance.png and class{c}_attr{j}.png per
/// pair with r_{j,c} above the threshold. Local mode: sample{id}.png with
/// the top-3 attributes. Records go to interpret.jsonl.
void cmd_interpret(const InterpretRequest& request, std::ostream& log);

struct MetricsRequest {
  std::filesystem::path checkpoint;
  std::vector<std::string> overrides;
};

/// metrics.jsonl plus topk.csv, conciseness.csv and disagreement.csv.
void cmd_metrics(const MetricsRequest& request, std::ostream& log);

}  // namespace flint
