#include "flint/commands.hpp"

#include "flint/artifacts.hpp"
#include "flint/checkpoint.hpp"
#include "flint/errors.hpp"
#include "flint/interpretation.hpp"
#include "flint/metrics.hpp"
#include "flint/random.hpp"
#include "flint/visualization.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

namespace flint {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Stream ids for seeds derived from RunConfig::seed.
constexpr std::uint64_t kRelevanceStream = 11;
constexpr std::uint64_t kShuffleStream = 12;
constexpr std::uint64_t kDepthStream = 13;

Dataset prepared(Dataset d, const PreprocessConfig& pp) {
  d.images = normalize(d.images, pp);
  return d;
}

json losses_json(const LossBreakdown& l) {
  return json{{"pred", l.pred},           {"of", l.of},
              {"cd", l.cd},               {"if", l.if_},
              {"total", l.total},         {"diversity", l.diversity},
              {"conciseness", l.conciseness}, {"l1", l.l1}};
}

json eval_json(const EvalResult& e) {
  return json{{"accuracy_f", e.accuracy_f}, {"accuracy_g", e.accuracy_g}, {"fidelity", e.fidelity}, {"count", e.count}};
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string summary_table(const RunConfig& config, const TrainReport& r, const ArtifactMeta& meta) {
  std::ostringstream os;
  os << meta.comment_line() << '\n';
  os << "mode " << to_string(r.mode) << "  batch_size " << r.batch_size << "  epochs " << r.epochs.size() << '\n';
  os << "epoch  stages     pred      of        cd        if        total\n";
  for (const auto& e : r.epochs) {
    std::string stages = std::string(e.mask.use_pred ? "P" : "-") + (config.train.weights.gamma > 0 ? "I" : "-") +
                         (e.mask.use_of ? "O" : "-") + (e.mask.use_cd ? "C" : "-");
    char line[160];
    std::snprintf(line, sizeof line, "%5d  %-6s  %8.4f  %8.4f  %8.4f  %8.4f  %8.4f\n", e.epoch, stages.c_str(),
                  e.mean.pred, e.mean.of, e.mean.cd, e.mean.if_, e.mean.total);
    os << line;
  }
  os << "split  accuracy_f  accuracy_g  fidelity\n";
  os << "train  " << fixed(r.train.accuracy_f) << "      " << fixed(r.train.accuracy_g) << "      "
     << fixed(r.train.fidelity) << '\n';
  if (r.has_test)
    os << "test   " << fixed(r.test.accuracy_f) << "      " << fixed(r.test.accuracy_g) << "      "
       << fixed(r.test.fidelity) << '\n';
  os << "parameter_digest " << r.parameter_digest << '\n';
  return os.str();
}

ModelBundle<float> posthoc_start(const RunConfig& config, const BundleSpec& spec, std::ostream& log) {
  const Checkpoint source = load_checkpoint(config.predictor_checkpoint);
  ModelBundle<float> bundle(spec, config.seed);
  for (auto& p : bundle.parameters()) {
    if (p.owner != Owner::predictor) continue;
    const std::size_t i = source.bundle.parameters().find(p.name);
    if (i == source.bundle.parameters().size() || source.bundle.parameters()[i].dims != p.dims)
      throw ConfigError("predictor checkpoint has no array matching '" + p.name + "'");
    p.value = source.bundle.parameters()[i].value;
  }
  if (bundle.parameters().digest(Owner::predictor) != source.bundle.parameters().digest(Owner::predictor))
    throw ConfigError("predictor checkpoint does not match the configured predictor");
  freeze_predictor(bundle);
  log << "loaded frozen predictor from " << config.predictor_checkpoint << '\n';
  return bundle;
}

}  // namespace

TrainOutcome cmd_train(const RunConfig& config, std::ostream& log) {
  validate(config);
  const fs::path out = output_directory(config);
  const ArtifactMeta meta = ArtifactMeta::of(config);
  const BundleSpec spec = bundle_spec(config.model);
  const DataSplits data = load_data(config.data);
  data.train.validate();
  data.test.validate();

  TrainConfig tc = config.train;
  tc.seed = config.seed;

  TrainOutcome outcome;
  ModelBundle<float> start;
  if (tc.mode == TrainMode::posthoc) {
    start = posthoc_start(config, spec, log);
    outcome.predictor_digest_before = start.parameters().digest(Owner::predictor);
  } else {
    start = ModelBundle<float>(spec, config.seed);
  }
  log << "training " << to_string(tc.mode) << " on " << data.train.size() << " samples, "
      << start.parameters().scalar_count() << " parameters\n";

  JsonlWriter report_out(out / "train_report.jsonl", meta);
  report_out.write(json{{"record", "config"}, {"mode", to_string(tc.mode)}, {"train_samples", data.train.size()},
                        {"test_samples", data.test.size()}, {"parameters", start.parameters().scalar_count()}});
  const EpochCallback on_epoch = [&](const EpochRecord& e) {
    report_out.write(json{{"record", "epoch"},
                          {"epoch", e.epoch},
                          {"stages", {{"pred", e.mask.use_pred}, {"of", e.mask.use_of}, {"cd", e.mask.use_cd}}},
                          {"batches", e.batches},
                          {"loss", losses_json(e.mean)}});
    log << "epoch " << e.epoch << " total " << fixed(e.mean.total) << " if " << fixed(e.mean.if_) << '\n';
  };

  auto [trained, report] = tc.mode == TrainMode::posthoc ? train_posthoc(start, data.train, tc, &data.test, on_epoch)
                                                         : train_joint(start, data.train, tc, &data.test, on_epoch);
  report.batch_size = tc.batch_size;
  if (tc.mode == TrainMode::posthoc) {
    outcome.predictor_digest_after = trained.parameters().digest(Owner::predictor);
    if (outcome.predictor_digest_after != outcome.predictor_digest_before)
      throw NumericError("frozen predictor changed during post-hoc training");
  }

  json final{{"record", "final"},
             {"mode", to_string(report.mode)},
             {"batch_size", report.batch_size},
             {"epochs", report.epochs.size()},
             {"train", eval_json(report.train)},
             {"test", eval_json(report.test)},
             {"fidelity", report.test.fidelity},
             {"parameter_digest", report.parameter_digest},
             {"predictor_digest", trained.parameters().digest(Owner::predictor)}};
  report_out.write(final);

  outcome.checkpoint = out / "checkpoint.flint";
  save_checkpoint(outcome.checkpoint, trained, config, static_cast<int>(report.epochs.size()));
  write_text(out / "summary.txt", summary_table(config, report, meta));
  log << "test accuracy_f " << fixed(report.test.accuracy_f) << " fidelity " << fixed(report.test.fidelity) << " ("
      << fixed(report.seconds, 1) << " s)\n";
  log << "wrote " << outcome.checkpoint.string() << '\n';
  outcome.report = std::move(report);
  return outcome;
}

RunConfig resolve_config(const RunConfig& stored, const std::vector<std::string>& overrides) {
  RunConfig c = stored;
  for (const auto& o : overrides) {
    const std::string key = o.substr(0, o.find('='));
    if (key.rfind("model.", 0) == 0 || key.rfind("train.", 0) == 0 || key.rfind("preprocess.", 0) == 0 ||
        key == "seed")
      throw ConfigError("'" + key + "' is fixed by the checkpoint");
    apply_override(c, o);
  }
  validate(c);
  return c;
}

namespace {

struct Panel {
  std::vector<Eigen::VectorXf> tiles;
  std::vector<std::string> labels;
};

void write_panel(const fs::path& png, const Panel& panel, const Shape& shape, int columns, const ArtifactMeta& meta) {
  const TileGrid grid = tile_grid(panel.tiles, shape, columns);
  write_png(png, grid.pixels);
  std::ostringstream side;
  side << meta.comment_line() << '\n' << "# tile row col label min max (pixel = (value - min) / (max - min))\n";
  for (std::size_t t = 0; t < panel.tiles.size(); ++t) {
    char line[256];
    std::snprintf(line, sizeof line, "%zu %zu %zu %s %.9g %.9g\n", t, t / static_cast<std::size_t>(columns),
                  t % static_cast<std::size_t>(columns), panel.labels[t].c_str(), grid.scales[t].first,
                  grid.scales[t].second);
    side << line;
  }
  fs::path txt = png;
  txt.replace_extension(".txt");
  write_text(txt, side.str());
}

// x_vis is unbounded during ascent; clamp to the data range for export.
Eigen::VectorXf as_tile(const Matrix<double>& row, const AmpiParams& p) {
  return Eigen::Map<const Eigen::VectorXd>(row.data(), row.size()).cwiseMax(p.lower).cwiseMin(p.upper).cast<float>();
}

Dataset split_of(const RunConfig& c, Split split) {
  DataSplits d = load_data(c.data);
  return prepared(split == Split::train ? std::move(d.train) : std::move(d.test), c.train.preprocess);
}

json ampi_json(const AmpiResult<double>& a) {
  return json{{"sample_id", a.sample_id},
              {"initial_objective", a.initial_objective},
              {"final_objective", a.final_objective},
              {"initial_activation", a.initial_activation},
              {"final_activation", a.final_activation}};
}

void interpret_global(const RunConfig& c, const ModelBundle<float>& bundle, const fs::path& out, std::ostream& log) {
  const ArtifactMeta meta = ArtifactMeta::of(c);
  const Dataset train = split_of(c, Split::train);
  Dataset subset = train;
  const auto want = static_cast<std::size_t>(c.interpret.relevance_samples);
  if (want > 0 && want < train.size()) {
    Rng rng(derive_seed(c.seed, kRelevanceStream));
    std::vector<std::size_t> ids = rng.permutation(train.size());
    ids.resize(want);
    std::sort(ids.begin(), ids.end());
    subset = train.subset(ids);
  }
  const GlobalRelevanceMatrix g = global_relevance(bundle, subset);
  write_csv(out / "relevance.csv", meta, relevance_csv(g, train.class_names));

  // Heatmap: one 8x8 block per (attribute, class) cell, min-max scaled.
  constexpr int kCell = 8;
  const double lo = g.r.minCoeff(), hi = g.r.maxCoeff();
  Eigen::MatrixXf heat(g.attribute_count() * kCell, g.class_count() * kCell);
  for (int j = 0; j < g.attribute_count(); ++j)
    for (int k = 0; k < g.class_count(); ++k)
      heat.block(j * kCell, k * kCell, kCell, kCell)
          .setConstant(hi > lo ? static_cast<float>((g.r(j, k) - lo) / (hi - lo)) : 0.0f);
  write_png(out / "relevance.png", heat);
  write_text(out / "relevance.txt", meta.comment_line() + "\nrows attributes, columns classes, " +
                                        std::to_string(kCell) + " px per cell\nmin " + fixed(lo, 9) + "\nmax " +
                                        fixed(hi, 9) + "\n");

  JsonlWriter records(out / "interpret.jsonl", meta);
  const auto pairs = global_set(g, c.interpret.threshold);
  records.write(json{{"record", "global"},
                     {"threshold", c.interpret.threshold},
                     {"relevance_samples", subset.size()},
                     {"support", g.support},
                     {"pairs", pairs.size()}});
  if (pairs.empty()) {
    records.write(json{{"record", "no_pairs"}, {"message", "no pairs above threshold"}, {"threshold", c.interpret.threshold}});
    log << "no pairs above threshold " << c.interpret.threshold << '\n';
    return;
  }

  const ModelBundle<double> exact = bundle.cast<double>();
  const Shape shape = bundle.input_shape();
  for (const auto& [cls, attr] : pairs) {
    const MasResult mas = select_mas(exact, train, cls, attr, c.interpret.mas_size);
    Panel panel;
    std::vector<AmpiResult<double>> runs;
    for (const auto& [id, act] : mas.samples) {
      panel.tiles.push_back(train.images.row(static_cast<Eigen::Index>(id)).transpose());
      panel.labels.push_back("mas:" + std::to_string(id));
    }
    for (const auto& [id, act] : mas.samples) {
      const Matrix<double> x = train.images.row(static_cast<Eigen::Index>(id)).cast<double>();
      runs.push_back(am_pi(exact, x, attr, c.ampi, id));
      panel.tiles.push_back(as_tile(runs.back().x_vis, c.ampi));
      panel.labels.push_back("ampi:" + std::to_string(id));
    }
    const std::string stem = "class" + std::to_string(cls) + "_attr" + std::to_string(attr);
    write_panel(out / (stem + ".png"), panel, shape, c.interpret.mas_size, meta);

    std::ostringstream trace;
    trace << "iteration";
    for (const auto& r : runs) trace << ",sample_" << r.sample_id;
    trace << '\n';
    trace.precision(17);
    for (int it = 0; it <= c.ampi.iterations; ++it) {
      trace << it;
      for (const auto& r : runs)
        trace << ',' << (it == 0 ? r.initial_objective : r.objective_trace[static_cast<std::size_t>(it - 1)]);
      trace << '\n';
    }
    write_csv(out / (stem + "_trace.csv"), meta, trace.str());

    json mas_json = json::array(), ampi_runs = json::array();
    for (const auto& [id, act] : mas.samples) mas_json.push_back({{"sample_id", id}, {"activation", act}});
    for (const auto& r : runs) ampi_runs.push_back(ampi_json(r));
    records.write(json{{"record", "pair"},
                       {"class", cls},
                       {"class_name", train.class_names.empty() ? "" : train.class_names[static_cast<std::size_t>(cls)]},
                       {"attribute", attr},
                       {"relevance", g.r(attr, cls)},
                       {"image", stem + ".png"},
                       {"mas", mas_json},
                       {"ampi", ampi_runs}});
    log << stem << " r=" << fixed(g.r(attr, cls)) << '\n';
  }
}

void interpret_local(const RunConfig& c, const ModelBundle<float>& bundle, const InterpretRequest& req,
                     const fs::path& out, std::ostream& log) {
  if (req.sample_ids.empty()) throw ConfigError("local interpretation needs at least one sample id");
  const ArtifactMeta meta = ArtifactMeta::of(c);
  const Dataset data = split_of(c, req.split);
  for (std::size_t id : req.sample_ids)
    if (id >= data.size())
      throw DataError("sample id " + std::to_string(id) + " out of range (split has " + std::to_string(data.size()) +
                      " samples)");

  const ModelBundle<double> exact = bundle.cast<double>();
  JsonlWriter records(out / "interpret.jsonl", meta);
  records.write(json{{"record", "local"},
                     {"split", req.split == Split::train ? "train" : "test"},
                     {"threshold", c.interpret.threshold},
                     {"samples", req.sample_ids.size()}});
  for (std::size_t id : req.sample_ids) {
    const Matrix<double> x = data.images.row(static_cast<Eigen::Index>(id)).cast<double>();
    const LocalRelevance lr = local_relevance(exact, x, id);
    const int f_class = argmax_rows(forward_with_taps(exact, x).logits)[0];

    std::vector<int> order(static_cast<std::size_t>(lr.r.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return std::abs(lr.r[a]) > std::abs(lr.r[b]); });
    order.resize(std::min<std::size_t>(3, order.size()));

    Panel panel;
    panel.tiles.push_back(data.images.row(static_cast<Eigen::Index>(id)).transpose());
    panel.labels.push_back("input:" + std::to_string(id));
    json attrs = json::array();
    for (int j : order) {
      const AmpiResult<double> run = am_pi(exact, x, j, c.ampi, id);
      panel.tiles.push_back(as_tile(run.x_vis, c.ampi));
      panel.labels.push_back("ampi:attr" + std::to_string(j));
      json a = ampi_json(run);
      a.erase("sample_id");
      attrs.push_back(json{{"attribute", j}, {"r", lr.r[j]}, {"alpha", lr.alpha[j]}, {"ampi", a}});
    }
    const std::string stem = "sample" + std::to_string(id);
    write_panel(out / (stem + ".png"), panel, bundle.input_shape(), static_cast<int>(panel.tiles.size()), meta);
    records.write(json{{"record", "sample"},
                       {"sample_id", id},
                       {"label", data.labels[id]},
                       {"f_class", f_class},
                       {"g_class", lr.predicted_class},
                       {"local_set", local_set(lr.r, c.interpret.threshold)},
                       {"image", stem + ".png"},
                       {"top_attributes", attrs}});
    log << stem << ": g class " << lr.predicted_class << ", attributes";
    for (int j : order) log << ' ' << j << " (r=" << fixed(lr.r[j], 3) << ")";
    log << '\n';
  }
}

}  // namespace

void cmd_interpret(const InterpretRequest& req, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(req.checkpoint);
  const RunConfig c = resolve_config(ck.config, req.overrides);
  const fs::path out = output_directory(c) / "interpret" / (req.local ? "local" : "global");
  if (req.local)
    interpret_local(c, ck.bundle, req, out, log);
  else
    interpret_global(c, ck.bundle, out, log);
  log << "wrote " << out.string() << '\n';
}

void cmd_metrics(const MetricsRequest& req, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(req.checkpoint);
  const RunConfig c = resolve_config(ck.config, req.overrides);
  const ModelBundle<float>& bundle = ck.bundle;
  const fs::path out = output_directory(c) / "metrics";
  const ArtifactMeta meta = ArtifactMeta::of(c);
  DataSplits splits = load_data(c.data);
  const Dataset test = prepared(std::move(splits.test), c.train.preprocess);
  const Dataset train = prepared(std::move(splits.train), c.train.preprocess);
  const int classes = bundle.class_count();

  JsonlWriter records(out / "metrics.jsonl", meta);
  const Predictions p = predict(bundle, test);
  const double fid = fidelity(p.f, p.g);
  records.write(json{{"record", "fidelity"}, {"split", "test"}, {"count", test.size()}, {"fidelity", fid}});
  log << "fidelity " << fixed(fid) << '\n';

  const Eigen::MatrixXd g_probs = p.g_probs.cast<double>();
  std::ostringstream topk;
  topk << "k,top_k_fidelity\n";
  topk.precision(17);
  for (int k = 1; k <= std::min(c.metrics.max_k, classes); ++k) {
    const double v = top_k_fidelity(p.f, g_probs, k);
    topk << k << ',' << v << '\n';
    records.write(json{{"record", "top_k_fidelity"}, {"k", k}, {"value", v}});
  }
  write_csv(out / "topk.csv", meta, topk.str());

  const std::vector<LocalRelevance> locals = local_relevances(bundle, test);
  const ConcisenessCurve cns = conciseness_curve(locals, c.metrics.thresholds);
  std::ostringstream cns_csv;
  cns_csv << "threshold,conciseness\n";
  cns_csv.precision(17);
  for (std::size_t i = 0; i < cns.thresholds.size(); ++i) {
    cns_csv << cns.thresholds[i] << ',' << cns.values[i] << '\n';
    records.write(json{{"record", "conciseness"}, {"threshold", cns.thresholds[i]}, {"value", cns.values[i]}});
  }
  write_csv(out / "conciseness.csv", meta, cns_csv.str());

  const ShuffleResult sh = shuffle_attribute_test(bundle, test, derive_seed(c.seed, kShuffleStream));
  records.write(json{{"record", "shuffle"},
                     {"accuracy", sh.accuracy},
                     {"shuffled_accuracy", sh.shuffled_accuracy},
                     {"drop_points", sh.drop_points}});
  log << "shuffle drop " << fixed(sh.drop_points, 2) << " points\n";

  DisagreementOptions opt;
  opt.k = std::min(c.metrics.disagreement_k, classes);
  opt.direction_count = c.metrics.depth_directions;
  opt.seed = derive_seed(c.seed, kDepthStream);
  const DisagreementReport dr = disagreement_report(bundle, test, train, opt);
  std::ostringstream dcsv;
  dcsv << "sample_id,label,f_class,g_top,f_correct,depth\n";
  dcsv.precision(17);
  for (const auto& e : dr.entries) {
    std::string top;
    for (std::size_t i = 0; i < e.g_top.size(); ++i) top += (i ? " " : "") + std::to_string(e.g_top[i]);
    dcsv << e.sample_id << ',' << e.label << ',' << e.f_class << ',' << top << ',' << (e.f_correct ? 1 : 0) << ','
         << e.depth << '\n';
  }
  write_csv(out / "disagreement.csv", meta, dcsv.str());
  records.write(json{{"record", "disagreement"},
                     {"k", dr.k},
                     {"evaluated", dr.evaluated},
                     {"flagged", dr.entries.size()},
                     {"depth_directions", opt.direction_count},
                     {"baseline_median_depth", dr.baseline_median_depth}});
  log << "disagreements (k=" << dr.k << ") " << dr.entries.size() << " of " << dr.evaluated << '\n';
  log << "wrote " << out.string() << '\n';
}

}  // namespace flint
