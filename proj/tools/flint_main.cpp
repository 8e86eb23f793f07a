#include "flint/commands.hpp"
#include "flint/config.hpp"
#include "flint/errors.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <sstream>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(flint::ErrorKind kind) {
  switch (kind) {
    case flint::ErrorKind::config: return kExitConfig;
    case flint::ErrorKind::data: return kExitData;
    case flint::ErrorKind::numeric: return kExitNumeric;
  }
  return 1;
}

int report(const std::string& command, const std::string& kind, const std::string& message, int code) {
  nlohmann::ordered_json j{{"record", "error"}, {"command", command}, {"kind", kind}, {"message", message},
                           {"exit_code", code}};
  std::cerr << j.dump() << '\n';
  return code;
}

std::vector<std::size_t> parse_ids(const std::string& text) {
  std::vector<std::size_t> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item[0] == '-') throw flint::ConfigError("bad sample id '" + item + "'");
    ids.push_back(static_cast<std::size_t>(v));
  }
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint predictor/interpreter training and interpretation"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint;
  bool local = false;
  std::string samples;
  std::string split = "test";
  std::string threshold;
  int mas_size = 0;
  int max_k = 0;

  auto* train = app.add_subcommand("train", "train a bundle (joint or post-hoc)");
  train->add_option("-c,--config", config_path, "key=value config file")->check(CLI::ExistingFile);
  train->add_option("-s,--set", overrides, "key=value override, repeatable");

  auto* interpret = app.add_subcommand("interpret", "global or local interpretation of a checkpoint");
  interpret->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  interpret->add_flag("--local", local, "local mode (needs --samples)");
  interpret->add_option("--samples", samples, "comma-separated sample ids for local mode");
  interpret->add_option("--split", split, "dataset split for local mode")->check(CLI::IsMember({"train", "test"}));
  auto* thr = interpret->add_option("--threshold", threshold, "relevance threshold 1/tau");
  auto* mas = interpret->add_option("--mas-size", mas_size, "maximum-activating samples per pair");
  interpret->add_option("-s,--set", overrides, "key=value override (data.*, ampi.*, interpret.*, output.dir)");

  auto* metrics = app.add_subcommand("metrics", "fidelity, conciseness, shuffle and disagreement metrics");
  metrics->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  auto* kopt = metrics->add_option("-k,--max-k", max_k, "largest k for top-k fidelity");
  metrics->add_option("-s,--set", overrides, "key=value override (data.*, metrics.*, output.dir)");

  auto* keys = app.add_subcommand("keys", "list config keys with defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (*keys) {
      const flint::RunConfig defaults;
      std::istringstream canonical(defaults.canonical_text());
      std::string line;
      std::size_t i = 0;
      while (std::getline(canonical, line)) std::cout << line << "    # " << flint::config_keys()[i++].description << '\n';
    } else if (*train) {
      flint::RunConfig config = config_path.empty() ? flint::RunConfig{} : flint::load_config(config_path);
      for (const auto& o : overrides) flint::apply_override(config, o);
      flint::cmd_train(config, std::cerr);
    } else if (*interpret) {
      flint::InterpretRequest req;
      req.checkpoint = checkpoint;
      req.overrides = overrides;
      req.local = local;
      req.split = split == "train" ? flint::Split::train : flint::Split::test;
      if (*thr) req.overrides.push_back("interpret.threshold=" + threshold);
      if (*mas) req.overrides.push_back("interpret.mas_size=" + std::to_string(mas_size));
      if (!samples.empty() && !local) throw flint::ConfigError("--samples only applies with --local");
      req.sample_ids = parse_ids(samples);
      flint::cmd_interpret(req, std::cerr);
    } else if (*metrics) {
      flint::MetricsRequest req;
      req.checkpoint = checkpoint;
      req.overrides = overrides;
      if (*kopt) req.overrides.push_back("metrics.max_k=" + std::to_string(max_k));
      flint::cmd_metrics(req, std::cerr);
    }
  } catch (const flint::Error& e) {
    return report(command, flint::to_string(e.kind()), e.what(), exit_code(e.kind()));
  } catch (const std::filesystem::filesystem_error& e) {
    return report(command, "data", e.what(), kExitData);
  } catch (const std::exception& e) {
    return report(command, "internal", e.what(), 1);
  }
  return 0;
}
