#include "flint/config.hpp"

#include "flint/digest.hpp"
#include "flint/errors.hpp"
#include "flint/interpretation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace flint {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename Int>
Int parse_integer(const std::string& key, const std::string& v) {
  Int out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}
std::string fmt(bool v) { return v ? "true" : "false"; }
template <typename Int>
std::string fmt_int(Int v) {
  return std::to_string(v);
}

double non_negative(const std::string& key, const std::string& v) {
  const double x = parse_real(key, v);
  if (x < 0.0) throw ConfigError(key + " must be >= 0, got " + v);
  return x;
}
double positive(const std::string& key, const std::string& v) {
  const double x = parse_real(key, v);
  if (!(x > 0.0)) throw ConfigError(key + " must be > 0, got " + v);
  return x;
}
int positive_int(const std::string& key, const std::string& v) {
  const int x = parse_integer<int>(key, v);
  if (x < 1) throw ConfigError(key + " must be >= 1, got " + v);
  return x;
}
std::optional<double> optional_real(const std::string& key, const std::string& v) {
  if (v.empty() || v == "none") return std::nullopt;
  return parse_real(key, v);
}
std::string fmt_optional(const std::optional<double>& v) { return v ? fmt(*v) : "none"; }

struct Entry {
  std::string key;
  std::string description;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Entry>& schema() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    auto add = [&](std::string key, std::string desc, std::function<void(RunConfig&, const std::string&)> set,
                   std::function<std::string(const RunConfig&)> get) {
      e.push_back({std::move(key), std::move(desc), std::move(set), std::move(get)});
    };
    add("seed", "global seed for initialization and data order",
        [](RunConfig& c, const std::string& v) { c.seed = parse_integer<std::uint64_t>("seed", v); },
        [](const RunConfig& c) { return fmt_int(c.seed); });
    add("output.dir", "output directory (FLINT_OUTPUT_DIR overrides)",
        [](RunConfig& c, const std::string& v) { c.output_dir = v; }, [](const RunConfig& c) { return c.output_dir; });

    add("model.preset", "lenet_mnist | lenet_shapes | toy",
        [](RunConfig& c, const std::string& v) {
          const auto names = preset_names();
          if (std::find(names.begin(), names.end(), v) == names.end())
            throw ConfigError("model.preset: unknown preset '" + v + "'");
          c.model.preset = v;
        },
        [](const RunConfig& c) { return c.model.preset; });
    add("model.predictor", "inline predictor layer list", [](RunConfig& c, const std::string& v) { c.model.predictor = v; },
        [](const RunConfig& c) { return c.model.predictor; });
    add("model.input_shape", "CxHxW, e.g. 1x28x28", [](RunConfig& c, const std::string& v) { c.model.input_shape = v; },
        [](const RunConfig& c) { return c.model.input_shape; });
    add("model.classes", "class count override (0 keeps preset)",
        [](RunConfig& c, const std::string& v) { c.model.classes = parse_integer<int>("model.classes", v); },
        [](const RunConfig& c) { return fmt_int(c.model.classes); });
    add("model.taps", "comma-separated 1-based hidden layer indices",
        [](RunConfig& c, const std::string& v) { c.model.taps = v; }, [](const RunConfig& c) { return c.model.taps; });
    add("model.attributes", "attribute count J override (0 keeps preset)",
        [](RunConfig& c, const std::string& v) { c.model.attributes = parse_integer<int>("model.attributes", v); },
        [](const RunConfig& c) { return fmt_int(c.model.attributes); });
    add("model.psi", "inline psi layer list", [](RunConfig& c, const std::string& v) { c.model.psi = v; },
        [](const RunConfig& c) { return c.model.psi; });
    add("model.decoder", "inline decoder layer list", [](RunConfig& c, const std::string& v) { c.model.decoder = v; },
        [](const RunConfig& c) { return c.model.decoder; });
    add("model.decoder_zero_init", "start the last decoder layer at zero",
        [](RunConfig& c, const std::string& v) { c.model.decoder_zero_init = parse_bool("model.decoder_zero_init", v); },
        [](const RunConfig& c) { return fmt(c.model.decoder_zero_init); });

    add("data.source", "synth | idx | manifest",
        [](RunConfig& c, const std::string& v) {
          if (v == "synth") c.data.source = DataSource::synth;
          else if (v == "idx") c.data.source = DataSource::idx;
          else if (v == "manifest") c.data.source = DataSource::manifest;
          else throw ConfigError("data.source: expected synth, idx or manifest, got '" + v + "'");
        },
        [](const RunConfig& c) {
          switch (c.data.source) {
            case DataSource::idx: return std::string("idx");
            case DataSource::manifest: return std::string("manifest");
            default: return std::string("synth");
          }
        });
    add("data.train_per_class", "synth/manifest training samples per class",
        [](RunConfig& c, const std::string& v) { c.data.train_per_class = positive_int("data.train_per_class", v); },
        [](const RunConfig& c) { return fmt_int(c.data.train_per_class); });
    add("data.test_per_class", "synth/manifest test samples per class",
        [](RunConfig& c, const std::string& v) { c.data.test_per_class = positive_int("data.test_per_class", v); },
        [](const RunConfig& c) { return fmt_int(c.data.test_per_class); });
    add("data.seed", "seed of the synthetic corpus / manifest split",
        [](RunConfig& c, const std::string& v) { c.data.seed = parse_integer<std::uint64_t>("data.seed", v); },
        [](const RunConfig& c) { return fmt_int(c.data.seed); });
    add("data.train_images", "IDX training images", [](RunConfig& c, const std::string& v) { c.data.train_images = v; },
        [](const RunConfig& c) { return c.data.train_images; });
    add("data.train_labels", "IDX training labels", [](RunConfig& c, const std::string& v) { c.data.train_labels = v; },
        [](const RunConfig& c) { return c.data.train_labels; });
    add("data.test_images", "IDX test images", [](RunConfig& c, const std::string& v) { c.data.test_images = v; },
        [](const RunConfig& c) { return c.data.test_images; });
    add("data.test_labels", "IDX test labels", [](RunConfig& c, const std::string& v) { c.data.test_labels = v; },
        [](const RunConfig& c) { return c.data.test_labels; });
    add("data.manifest", "class<TAB>path manifest", [](RunConfig& c, const std::string& v) { c.data.manifest = v; },
        [](const RunConfig& c) { return c.data.manifest; });

    add("train.mode", "joint | posthoc",
        [](RunConfig& c, const std::string& v) {
          if (v == "joint") c.train.mode = TrainMode::joint;
          else if (v == "posthoc") c.train.mode = TrainMode::posthoc;
          else throw ConfigError("train.mode: expected joint or posthoc, got '" + v + "'");
        },
        [](const RunConfig& c) { return std::string(to_string(c.train.mode)); });
    add("train.epochs", "number of epochs",
        [](RunConfig& c, const std::string& v) { c.train.epochs = positive_int("train.epochs", v); },
        [](const RunConfig& c) { return fmt_int(c.train.epochs); });
    add("train.batch_size", "mini-batch size",
        [](RunConfig& c, const std::string& v) { c.train.batch_size = positive_int("train.batch_size", v); },
        [](const RunConfig& c) { return fmt_int(c.train.batch_size); });
    add("train.learning_rate", "Adam step size",
        [](RunConfig& c, const std::string& v) { c.train.learning_rate = positive("train.learning_rate", v); },
        [](const RunConfig& c) { return fmt(c.train.learning_rate); });
    add("train.beta", "output fidelity weight",
        [](RunConfig& c, const std::string& v) { c.train.weights.beta = non_negative("train.beta", v); },
        [](const RunConfig& c) { return fmt(c.train.weights.beta); });
    add("train.gamma", "input fidelity weight",
        [](RunConfig& c, const std::string& v) { c.train.weights.gamma = non_negative("train.gamma", v); },
        [](const RunConfig& c) { return fmt(c.train.weights.gamma); });
    add("train.delta", "conciseness/diversity weight",
        [](RunConfig& c, const std::string& v) { c.train.weights.delta = non_negative("train.delta", v); },
        [](const RunConfig& c) { return fmt(c.train.weights.delta); });
    add("train.eta", "l1 strength inside the conciseness term",
        [](RunConfig& c, const std::string& v) { c.train.weights.eta = non_negative("train.eta", v); },
        [](const RunConfig& c) { return fmt(c.train.weights.eta); });
    add("train.use_entropy", "keep the entropy terms of L_cd",
        [](RunConfig& c, const std::string& v) { c.train.weights.use_entropy = parse_bool("train.use_entropy", v); },
        [](const RunConfig& c) { return fmt(c.train.weights.use_entropy); });
    add("train.of_epoch", "1-based epoch where L_of starts",
        [](RunConfig& c, const std::string& v) { c.train.schedule.of_epoch = positive_int("train.of_epoch", v); },
        [](const RunConfig& c) { return fmt_int(c.train.schedule.of_epoch); });
    add("train.cd_epoch", "1-based epoch where L_cd starts",
        [](RunConfig& c, const std::string& v) { c.train.schedule.cd_epoch = positive_int("train.cd_epoch", v); },
        [](const RunConfig& c) { return fmt_int(c.train.schedule.cd_epoch); });
    add("train.of_grad_into_predictor", "let L_of reach theta_f through f's probabilities",
        [](RunConfig& c, const std::string& v) {
          c.train.of_grad_into_predictor = parse_bool("train.of_grad_into_predictor", v);
        },
        [](const RunConfig& c) { return fmt(c.train.of_grad_into_predictor); });
    add("train.max_steps", "optimizer step cap, -1 for none",
        [](RunConfig& c, const std::string& v) {
          c.train.max_steps = parse_integer<long>("train.max_steps", v);
          if (c.train.max_steps < -1) throw ConfigError("train.max_steps must be >= -1");
        },
        [](const RunConfig& c) { return fmt_int(c.train.max_steps); });
    add("train.predictor_checkpoint", "post-hoc: checkpoint holding the frozen predictor",
        [](RunConfig& c, const std::string& v) { c.predictor_checkpoint = v; },
        [](const RunConfig& c) { return c.predictor_checkpoint; });

    add("preprocess.mean", "normalization mean or none",
        [](RunConfig& c, const std::string& v) { c.train.preprocess.mean = optional_real("preprocess.mean", v); },
        [](const RunConfig& c) { return fmt_optional(c.train.preprocess.mean); });
    add("preprocess.std", "normalization std or none",
        [](RunConfig& c, const std::string& v) {
          c.train.preprocess.stddev = optional_real("preprocess.std", v);
          if (c.train.preprocess.stddev && !(*c.train.preprocess.stddev > 0.0))
            throw ConfigError("preprocess.std must be > 0");
        },
        [](const RunConfig& c) { return fmt_optional(c.train.preprocess.stddev); });
    add("preprocess.pad", "zero pad before random crop (0 = off)",
        [](RunConfig& c, const std::string& v) {
          c.train.preprocess.pad = parse_integer<int>("preprocess.pad", v);
          if (c.train.preprocess.pad < 0) throw ConfigError("preprocess.pad must be >= 0");
        },
        [](const RunConfig& c) { return fmt_int(c.train.preprocess.pad); });
    add("preprocess.flip", "random horizontal flip",
        [](RunConfig& c, const std::string& v) { c.train.preprocess.flip = parse_bool("preprocess.flip", v); },
        [](const RunConfig& c) { return fmt(c.train.preprocess.flip); });

    add("ampi.lambda_phi", "attribute weight",
        [](RunConfig& c, const std::string& v) { c.ampi.lambda_phi = non_negative("ampi.lambda_phi", v); },
        [](const RunConfig& c) { return fmt(c.ampi.lambda_phi); });
    add("ampi.lambda_tv", "total variation weight",
        [](RunConfig& c, const std::string& v) { c.ampi.lambda_tv = non_negative("ampi.lambda_tv", v); },
        [](const RunConfig& c) { return fmt(c.ampi.lambda_tv); });
    add("ampi.lambda_bo", "boundedness weight",
        [](RunConfig& c, const std::string& v) { c.ampi.lambda_bo = non_negative("ampi.lambda_bo", v); },
        [](const RunConfig& c) { return fmt(c.ampi.lambda_bo); });
    add("ampi.init_scale", "initial input = scale * sample",
        [](RunConfig& c, const std::string& v) { c.ampi.init_scale = positive("ampi.init_scale", v); },
        [](const RunConfig& c) { return fmt(c.ampi.init_scale); });
    add("ampi.iterations", "ascent iterations",
        [](RunConfig& c, const std::string& v) { c.ampi.iterations = positive_int("ampi.iterations", v); },
        [](const RunConfig& c) { return fmt_int(c.ampi.iterations); });
    add("ampi.step_size", "initial Adam step",
        [](RunConfig& c, const std::string& v) { c.ampi.step_size = positive("ampi.step_size", v); },
        [](const RunConfig& c) { return fmt(c.ampi.step_size); });
    add("ampi.halving_period", "iterations between step halvings",
        [](RunConfig& c, const std::string& v) { c.ampi.step_halving_period = positive_int("ampi.halving_period", v); },
        [](const RunConfig& c) { return fmt_int(c.ampi.step_halving_period); });

    add("interpret.threshold", "relevance threshold 1/tau in (0,1)",
        [](RunConfig& c, const std::string& v) { c.interpret.threshold = parse_real("interpret.threshold", v); },
        [](const RunConfig& c) { return fmt(c.interpret.threshold); });
    add("interpret.mas_size", "maximum-activating samples per pair",
        [](RunConfig& c, const std::string& v) { c.interpret.mas_size = positive_int("interpret.mas_size", v); },
        [](const RunConfig& c) { return fmt_int(c.interpret.mas_size); });
    add("interpret.relevance_samples", "training samples for global relevance (0 = all)",
        [](RunConfig& c, const std::string& v) {
          c.interpret.relevance_samples = parse_integer<int>("interpret.relevance_samples", v);
          if (c.interpret.relevance_samples < 0) throw ConfigError("interpret.relevance_samples must be >= 0");
        },
        [](const RunConfig& c) { return fmt_int(c.interpret.relevance_samples); });

    add("metrics.thresholds", "comma-separated CNS thresholds",
        [](RunConfig& c, const std::string& v) {
          c.metrics.thresholds.clear();
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) c.metrics.thresholds.push_back(parse_real("metrics.thresholds", trim(item)));
          if (c.metrics.thresholds.empty()) throw ConfigError("metrics.thresholds is empty");
        },
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.metrics.thresholds.size(); ++i) s += (i ? "," : "") + fmt(c.metrics.thresholds[i]);
          return s;
        });
    add("metrics.max_k", "largest k for top-k fidelity",
        [](RunConfig& c, const std::string& v) { c.metrics.max_k = parse_integer<int>("metrics.max_k", v); },
        [](const RunConfig& c) { return fmt_int(c.metrics.max_k); });
    add("metrics.disagreement_k", "k of the disagreement report",
        [](RunConfig& c, const std::string& v) { c.metrics.disagreement_k = parse_integer<int>("metrics.disagreement_k", v); },
        [](const RunConfig& c) { return fmt_int(c.metrics.disagreement_k); });
    add("metrics.depth_directions", "random directions for projection depth",
        [](RunConfig& c, const std::string& v) {
          c.metrics.depth_directions = positive_int("metrics.depth_directions", v);
        },
        [](const RunConfig& c) { return fmt_int(c.metrics.depth_directions); });

    std::sort(e.begin(), e.end(), [](const Entry& a, const Entry& b) { return a.key < b.key; });
    return e;
  }();
  return entries;
}

const Entry* find_entry(const std::string& key) {
  const auto& s = schema();
  const auto it = std::lower_bound(s.begin(), s.end(), key, [](const Entry& e, const std::string& k) { return e.key < k; });
  return it != s.end() && it->key == key ? &*it : nullptr;
}

std::pair<std::string, std::string> split_assignment(const std::string& line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + line + "'");
  std::string key = trim(std::string_view(line).substr(0, eq));
  if (key.empty()) throw ConfigError(where + ": empty key");
  return {std::move(key), trim(std::string_view(line).substr(eq + 1))};
}

void assign(RunConfig& c, const std::string& key, const std::string& value, const std::string& where) {
  const Entry* e = find_entry(key);
  if (!e) throw ConfigError(where + ": unknown key '" + key + "'");
  try {
    e->set(c, value);
  } catch (const ConfigError& err) {
    throw ConfigError(where + ": " + err.what());
  }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_integer<int>(key, trim(item)));
  return out;
}

}  // namespace

std::string RunConfig::canonical_text() const {
  std::string out;
  for (const auto& e : schema()) out += e.key + "=" + e.get(*this) + "\n";
  return out;
}

// The output location never changes results, so it stays out of the digest.
std::string RunConfig::digest() const {
  std::string text;
  for (const auto& e : schema())
    if (e.key != "output.dir") text += e.key + "=" + e.get(*this) + "\n";
  return sha256_hex(text);
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : schema()) k.push_back({e.key, e.description});
    return k;
  }();
  return keys;
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(number);
    auto [key, value] = split_assignment(line, where);
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    assign(c, key, value, where);
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

void apply_override(RunConfig& config, const std::string& assignment) {
  auto [key, value] = split_assignment(assignment, "override");
  assign(config, key, value, "override");
}

void validate(const RunConfig& c) {
  c.train.validate();
  c.ampi.validate();
  check_threshold(c.interpret.threshold);
  for (double t : c.metrics.thresholds) check_threshold(t);
  if (c.metrics.max_k < 1) throw ConfigError("metrics.max_k must be >= 1");
  if (c.metrics.disagreement_k < 1) throw ConfigError("metrics.disagreement_k must be >= 1");
  if (c.data.source == DataSource::idx &&
      (c.data.train_images.empty() || c.data.train_labels.empty() || c.data.test_images.empty() ||
       c.data.test_labels.empty()))
    throw ConfigError("data.source=idx needs data.train_images/train_labels/test_images/test_labels");
  if (c.data.source == DataSource::manifest && c.data.manifest.empty())
    throw ConfigError("data.source=manifest needs data.manifest");
  if (c.train.mode == TrainMode::posthoc && c.predictor_checkpoint.empty())
    throw ConfigError("train.mode=posthoc needs train.predictor_checkpoint");
  const BundleSpec spec = bundle_spec(c.model);
  ModelBundle<float> probe(spec, 0);  // shape validation only
  c.train.preprocess.validate(spec.predictor.input_shape);
}

BundleSpec bundle_spec(const ModelConfig& m) {
  BundleSpec s = preset(m.preset);
  if (!m.predictor.empty()) s.predictor.layers = parse_layers(m.predictor);
  if (!m.input_shape.empty()) {
    std::vector<int> dims;
    std::stringstream ss(m.input_shape);
    std::string item;
    while (std::getline(ss, item, 'x')) dims.push_back(parse_integer<int>("model.input_shape", trim(item)));
    if (dims.size() != 3) throw ConfigError("model.input_shape must be CxHxW, got '" + m.input_shape + "'");
    s.predictor.input_shape = Shape{dims[0], dims[1], dims[2]};
  }
  if (m.classes != 0) s.predictor.class_count = m.classes;
  if (!m.taps.empty()) s.taps.tap_indices = parse_int_list("model.taps", m.taps);
  if (m.attributes != 0) s.interpreter.attribute_count = m.attributes;
  if (!m.psi.empty()) s.interpreter.psi_layers = parse_layers(m.psi);
  if (!m.decoder.empty()) s.decoder.layers = parse_layers(m.decoder);
  // The toy preset keeps its own choice unless the key is set explicitly
  // to something other than the default.
  if (!m.decoder_zero_init) s.decoder.zero_init_output = false;
  return s;
}

DataSplits load_data(const DataConfig& d) {
  DataSplits out;
  switch (d.source) {
    case DataSource::synth:
      out.train = synth_shapes(d.train_per_class, d.seed, Split::train);
      out.test = synth_shapes(d.test_per_class, d.seed, Split::test);
      break;
    case DataSource::idx:
      out.train = load_idx(d.train_images, d.train_labels, Split::train);
      out.test = load_idx(d.test_images, d.test_labels, Split::test);
      break;
    case DataSource::manifest: {
      ManifestSplit m = load_manifest(d.manifest, d.train_per_class, d.test_per_class, d.seed);
      out.train = std::move(m.train);
      out.test = std::move(m.test);
      break;
    }
  }
  return out;
}

std::filesystem::path output_directory(const RunConfig& config) {
  if (const char* env = std::getenv("FLINT_OUTPUT_DIR"); env && *env) return env;
  return config.output_dir;
}

}  // namespace flint
