#include "support.hpp"

#include "flint/artifacts.hpp"
#include "flint/checkpoint.hpp"
#include "flint/commands.hpp"
#include "flint/config.hpp"
#include "flint/errors.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

using namespace flint;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "flint_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<json> records(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) out.push_back(json::parse(line));
  return out;
}

/// Toy-sized run on IDX files written from the toy corpus.
std::string toy_config_text(const std::string& out_dir) {
  const fs::path d = scratch();
  if (!fs::exists(d / "train-images")) {
    save_idx(test::toy_dataset(48, 1), d / "train-images", d / "train-labels");
    save_idx(test::toy_dataset(24, 2, Split::test), d / "test-images", d / "test-labels");
  }
  std::ostringstream os;
  os << "# toy run\n"
     << "seed=3\n"
     << "model.preset=toy\n"
     << "data.source=idx\n"
     << "data.train_images=" << (d / "train-images").string() << '\n'
     << "data.train_labels=" << (d / "train-labels").string() << '\n'
     << "data.test_images=" << (d / "test-images").string() << '\n'
     << "data.test_labels=" << (d / "test-labels").string() << '\n'
     << "train.epochs=20\ntrain.batch_size=8\ntrain.learning_rate=0.03\n"
     << "train.beta=0.5\ntrain.gamma=0.8\ntrain.delta=0.2\ntrain.eta=0.5\n"
     << "train.of_epoch=2\ntrain.cd_epoch=3\n"
     << "ampi.iterations=60\n"
     << "metrics.depth_directions=50\n"
     << "output.dir=" << (d / out_dir).string() << '\n';
  return os.str();
}

RunConfig toy_config(const std::string& out_dir) {
  unsetenv("FLINT_OUTPUT_DIR");
  return parse_config(toy_config_text(out_dir));
}

/// Trains the shared toy run once.
const TrainOutcome& toy_run() {
  static const TrainOutcome outcome = [] {
    std::ostringstream log;
    return cmd_train(toy_config("run"), log);
  }();
  return outcome;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FLINT_CLI) + " " + args + " >" + (scratch() / "cli.out").string() + " 2>" +
                          (scratch() / "cli.err").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> directory_contents(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return files;
}

}  // namespace

TEST_CASE("config parsing") {
  const RunConfig c = parse_config("seed=5\n  train.beta = 0.5  # trailing comment\n\n# note\nmodel.preset=toy\n");
  CHECK(c.seed == 5);
  CHECK(c.train.weights.beta == 0.5);
  CHECK(c.model.preset == "toy");
  CHECK_THROWS_AS(parse_config("train.betta=0.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed=1\nseed=2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.epochs=twelve\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.epochs\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.mode=sideways\n"), ConfigError);
  try {
    parse_config("seed=1\ntrain.bogus=3\n", "run.cfg");
    FAIL("accepted an unknown key");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:2") != std::string::npos);
  }

  CHECK_THROWS_AS(parse_config("train.beta=-0.5\n"), ConfigError);
  RunConfig stage = parse_config("train.epochs=2\ntrain.beta=0.5\ntrain.of_epoch=3\n");
  CHECK_THROWS_AS(validate(stage), ConfigError);
  RunConfig thr = parse_config("interpret.threshold=1.0\n");
  CHECK_THROWS_AS(validate(thr), ConfigError);
  RunConfig c2 = parse_config("");
  CHECK_NOTHROW(validate(c2));
  c2.train.weights.beta = -1.0;
  CHECK_THROWS_AS(validate(c2), ConfigError);
  CHECK(config_keys().size() > 40);
}

TEST_CASE("config digest is canonical") {
  const RunConfig a = parse_config("seed=5\ntrain.beta=0.5\nmodel.preset=toy\n");
  const RunConfig b = parse_config("# same thing\nmodel.preset = toy\ntrain.beta=0.50\n\nseed=5\n");
  CHECK(a.digest() == b.digest());
  CHECK(a.canonical_text() == b.canonical_text());
  CHECK(a.digest().size() == 64);
  CHECK(parse_config(a.canonical_text()).digest() == a.digest());
  CHECK(parse_config("seed=6\ntrain.beta=0.5\nmodel.preset=toy\n").digest() != a.digest());
  CHECK(parse_config("seed=5\ntrain.beta=0.5\nmodel.preset=toy\noutput.dir=x\n").digest() == a.digest());
  RunConfig c = a;
  apply_override(c, "train.beta=0.25");
  CHECK(c.train.weights.beta == 0.25);
  CHECK(c.digest() != a.digest());
  CHECK_THROWS_AS(apply_override(c, "nope=1"), ConfigError);
}

TEST_CASE("output directory override") {
  RunConfig c = parse_config("output.dir=somewhere\n");
  unsetenv("FLINT_OUTPUT_DIR");
  CHECK(output_directory(c) == fs::path("somewhere"));
  setenv("FLINT_OUTPUT_DIR", "elsewhere", 1);
  CHECK(output_directory(c) == fs::path("elsewhere"));
  unsetenv("FLINT_OUTPUT_DIR");
}

TEST_CASE("interpret and metrics may not change the trained model") {
  const RunConfig stored = toy_config("resolve");
  CHECK(resolve_config(stored, {"interpret.threshold=0.5"}).interpret.threshold == 0.5);
  CHECK_THROWS_AS(resolve_config(stored, {"train.beta=0.1"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(stored, {"model.attributes=5"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(stored, {"preprocess.pad=2"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(stored, {"seed=9"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(stored, {"metrics.max_k=0"}), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  const RunConfig c = toy_config("ckpt");
  const auto bundle = build_bundle<float>(bundle_spec(c.model), 11);
  const fs::path p = scratch() / "rt.flint";
  save_checkpoint(p, bundle, c, 7);
  const Checkpoint back = load_checkpoint(p);
  CHECK(back.format_version == kFormatVersion);
  CHECK(back.epoch == 7);
  CHECK(back.config_digest == c.digest());
  CHECK(back.config.digest() == c.digest());
  CHECK(back.parameter_digest == bundle.parameters().digest());
  REQUIRE(back.bundle.parameters().size() == bundle.parameters().size());
  for (std::size_t i = 0; i < bundle.parameters().size(); ++i) {
    const auto& a = bundle.parameters()[i];
    const auto& b = back.bundle.parameters()[i];
    CHECK(a.name == b.name);
    CHECK(a.dims == b.dims);
    CHECK(a.trainable == b.trainable);
    CHECK(std::memcmp(a.value.data(), b.value.data(), sizeof(float) * static_cast<std::size_t>(a.value.size())) == 0);
  }

  auto frozen = bundle;
  freeze_predictor(frozen);
  save_checkpoint(scratch() / "frozen.flint", frozen, c, 0);
  CHECK_FALSE(load_checkpoint(scratch() / "frozen.flint").bundle.parameters().any_trainable(Owner::predictor));
}

TEST_CASE("damaged checkpoints are rejected") {
  const RunConfig c = toy_config("ckpt");
  const auto bundle = build_bundle<float>(bundle_spec(c.model), 11);
  const fs::path p = scratch() / "good.flint";
  save_checkpoint(p, bundle, c, 1);
  const std::string good = slurp(p);
  auto variant = [&](const std::string& name, const std::string& bytes) {
    const fs::path q = scratch() / name;
    std::ofstream(q, std::ios::binary) << bytes;
    return q;
  };
  std::string flipped = good;
  flipped[flipped.size() - 5] ^= 0x40;
  CHECK_THROWS_AS(load_checkpoint(variant("flipped.flint", flipped)), DataError);
  CHECK_THROWS_AS(load_checkpoint(variant("short.flint", good.substr(0, good.size() - 3))), DataError);
  CHECK_THROWS_AS(load_checkpoint(variant("long.flint", good + "x")), DataError);
  CHECK_THROWS_AS(load_checkpoint(variant("header.flint", "FLINTCKPT 9\n" + good.substr(good.find('\n') + 1))),
                  DataError);
  std::string edited = good;
  const std::size_t at = edited.find("train.epochs=20");
  REQUIRE(at != std::string::npos);
  edited[at + 13] = '5';
  CHECK_THROWS_AS(load_checkpoint(variant("edited.flint", edited)), DataError);
  CHECK_THROWS_AS(load_checkpoint(variant("empty.flint", "")), DataError);
  CHECK_THROWS_AS(load_checkpoint(scratch() / "absent.flint"), DataError);
}

TEST_CASE("artifact writers stamp metadata") {
  const ArtifactMeta meta{"abc123", 9, kFormatVersion};
  CHECK(meta.comment_line() == "# config_digest=abc123 seed=9 format_version=1");
  const fs::path dir = scratch() / "artifacts";
  {
    JsonlWriter w(dir / "r.jsonl", meta);
    w.write(nlohmann::ordered_json{{"record", "x"}, {"value", 1.5}});
  }
  const auto r = records(dir / "r.jsonl");
  REQUIRE(r.size() == 1);
  CHECK(r[0]["value"] == 1.5);
  CHECK(r[0]["config_digest"] == "abc123");
  CHECK(r[0]["seed"] == 9);
  CHECK(r[0]["format_version"] == 1);
  write_csv(dir / "t.csv", meta, "a,b\n1,2\n");
  CHECK(slurp(dir / "t.csv") == meta.comment_line() + "\na,b\n1,2\n");

  Eigen::MatrixXf img(3, 5);
  img.setConstant(0.5f);
  img(0, 0) = -1.0f;
  write_png(dir / "i.png", img);
  const std::string png = slurp(dir / "i.png");
  REQUIRE(png.size() > 33);
  CHECK(png.substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));
  CHECK(png.substr(12, 4) == "IHDR");
  CHECK(static_cast<unsigned char>(png[19]) == 5);  // width
  CHECK(static_cast<unsigned char>(png[23]) == 3);  // height
  CHECK(static_cast<unsigned char>(png[24]) == 8);  // bit depth
  CHECK(static_cast<unsigned char>(png[25]) == 0);  // grayscale
}

TEST_CASE("train command writes checkpoint, report and summary") {
  const TrainOutcome& t = toy_run();
  const RunConfig c = toy_config("run");
  const fs::path out = scratch() / "run";
  CHECK(t.checkpoint == out / "checkpoint.flint");
  const Checkpoint ck = load_checkpoint(t.checkpoint);
  CHECK(ck.epoch == 20);
  CHECK(ck.parameter_digest == t.report.parameter_digest);

  const auto rep = records(out / "train_report.jsonl");
  REQUIRE(rep.size() == 22);
  CHECK(rep.front()["record"] == "config");
  for (int e = 1; e <= 20; ++e) {
    CHECK(rep[static_cast<std::size_t>(e)]["record"] == "epoch");
    CHECK(rep[static_cast<std::size_t>(e)]["epoch"] == e);
  }
  CHECK(rep.back()["record"] == "final");
  CHECK(rep.back().contains("fidelity"));
  CHECK(rep.back()["parameter_digest"] == t.report.parameter_digest);
  for (const auto& r : rep) {
    CHECK(r["config_digest"] == c.digest());
    CHECK(r["seed"] == 3);
    CHECK(r["format_version"] == kFormatVersion);
  }
  CHECK(slurp(out / "summary.txt").rfind(ArtifactMeta::of(c).comment_line(), 0) == 0);

  std::ostringstream log;
  const TrainOutcome again = cmd_train(toy_config("rerun"), log);
  CHECK(again.report.parameter_digest == t.report.parameter_digest);
  CHECK(load_checkpoint(again.checkpoint).parameter_digest == ck.parameter_digest);
  CHECK(load_checkpoint(again.checkpoint).config_digest == ck.config_digest);
  CHECK(slurp(scratch() / "rerun" / "train_report.jsonl") == slurp(out / "train_report.jsonl"));
}

TEST_CASE("post-hoc training through the command keeps the predictor") {
  const TrainOutcome& joint = toy_run();
  RunConfig c = toy_config("posthoc");
  apply_override(c, "train.mode=posthoc");
  apply_override(c, "train.predictor_checkpoint=" + joint.checkpoint.string());
  std::ostringstream log;
  const TrainOutcome t = cmd_train(c, log);
  CHECK_FALSE(t.predictor_digest_before.empty());
  CHECK(t.predictor_digest_before == t.predictor_digest_after);
  const Checkpoint ck = load_checkpoint(t.checkpoint);
  CHECK(ck.bundle.parameters().digest(Owner::predictor) ==
        load_checkpoint(joint.checkpoint).bundle.parameters().digest(Owner::predictor));
  CHECK_FALSE(ck.bundle.parameters().any_trainable(Owner::predictor));

  // a predictor from another architecture is refused
  const RunConfig other = parse_config("model.preset=lenet_shapes\n");
  const fs::path foreign = scratch() / "foreign.flint";
  save_checkpoint(foreign, build_bundle<float>(bundle_spec(other.model), 1), other, 0);
  apply_override(c, "train.predictor_checkpoint=" + foreign.string());
  CHECK_THROWS_AS(cmd_train(c, log), ConfigError);
}

TEST_CASE("global interpretation artifacts") {
  const TrainOutcome& t = toy_run();
  InterpretRequest req;
  req.checkpoint = t.checkpoint;
  req.overrides = {"output.dir=" + (scratch() / "interp").string(), "interpret.threshold=0.2"};
  std::ostringstream log;
  cmd_interpret(req, log);
  const fs::path out = scratch() / "interp" / "interpret" / "global";
  for (const char* f : {"relevance.csv", "relevance.png", "relevance.txt", "interpret.jsonl"})
    CHECK(fs::exists(out / f));
  const auto rec = records(out / "interpret.jsonl");
  REQUIRE_FALSE(rec.empty());
  CHECK(rec.front()["record"] == "global");
  const std::string csv = slurp(out / "relevance.csv");
  CHECK(csv.rfind("# config_digest=", 0) == 0);
  std::size_t pairs = 0;
  for (const auto& r : rec) {
    CHECK(r.contains("config_digest"));
    if (r["record"] != "pair") continue;
    ++pairs;
    const std::string stem = "class" + std::to_string(r["class"].get<int>()) + "_attr" +
                             std::to_string(r["attribute"].get<int>());
    CHECK(r["image"] == stem + ".png");
    CHECK(r["relevance"].get<double>() > 0.2);
    CHECK(fs::exists(out / (stem + ".png")));
    CHECK(slurp(out / (stem + ".txt")).rfind("# config_digest=", 0) == 0);
    CHECK(slurp(out / (stem + "_trace.csv")).rfind("# config_digest=", 0) == 0);
  }
  std::size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(out))
    if (e.path().filename().string().rfind("class", 0) == 0 && e.path().extension() == ".png") ++pngs;
  CHECK(pngs == pairs);
  CHECK(pairs > 0);

  req.overrides = {"output.dir=" + (scratch() / "interp_none").string(), "interpret.threshold=0.9999"};
  cmd_interpret(req, log);
  const auto none = records(scratch() / "interp_none" / "interpret" / "global" / "interpret.jsonl");
  bool saw = false;
  for (const auto& r : none) saw = saw || (r["record"] == "no_pairs" && r["message"] == "no pairs above threshold");
  CHECK(saw);
}

TEST_CASE("local interpretation artifacts") {
  const TrainOutcome& t = toy_run();
  InterpretRequest req;
  req.checkpoint = t.checkpoint;
  req.local = true;
  req.sample_ids = {0, 5, 7, 23};
  req.overrides = {"output.dir=" + (scratch() / "local").string()};
  std::ostringstream log;
  cmd_interpret(req, log);
  const fs::path out = scratch() / "local" / "interpret" / "local";
  const auto rec = records(out / "interpret.jsonl");
  REQUIRE(rec.size() == 5);
  CHECK(rec[0]["record"] == "local");
  for (std::size_t i = 1; i < rec.size(); ++i) {
    CHECK(rec[i]["record"] == "sample");
    CHECK(rec[i]["sample_id"] == req.sample_ids[i - 1]);
    CHECK(rec[i]["top_attributes"].size() == 3);
    double prev = 2.0;
    for (const auto& a : rec[i]["top_attributes"]) {
      CHECK(std::abs(a["r"].get<double>()) <= prev);
      prev = std::abs(a["r"].get<double>());
    }
    CHECK(fs::exists(out / ("sample" + std::to_string(req.sample_ids[i - 1]) + ".png")));
  }
  req.sample_ids = {};
  CHECK_THROWS_AS(cmd_interpret(req, log), ConfigError);
  req.sample_ids = {24};
  CHECK_THROWS_AS(cmd_interpret(req, log), DataError);
}

TEST_CASE("metrics command") {
  const TrainOutcome& t = toy_run();
  MetricsRequest req;
  req.checkpoint = t.checkpoint;
  req.overrides = {"output.dir=" + (scratch() / "metrics_a").string()};
  std::ostringstream log;
  cmd_metrics(req, log);
  const fs::path out = scratch() / "metrics_a" / "metrics";
  std::map<std::string, int> kinds;
  for (const auto& r : records(out / "metrics.jsonl")) {
    ++kinds[r["record"].get<std::string>()];
    CHECK(r["config_digest"] == toy_config("run").digest());
  }
  CHECK(kinds["fidelity"] == 1);
  CHECK(kinds["top_k_fidelity"] == 3);  // k = 1..min(5, C)
  CHECK(kinds["conciseness"] == 9);
  CHECK(kinds["shuffle"] == 1);
  CHECK(kinds["disagreement"] == 1);
  for (const char* f : {"topk.csv", "conciseness.csv", "disagreement.csv"})
    CHECK(slurp(out / f).rfind("# config_digest=", 0) == 0);

  req.overrides = {"output.dir=" + (scratch() / "metrics_b").string()};
  cmd_metrics(req, log);
  CHECK(directory_contents(out) == directory_contents(scratch() / "metrics_b" / "metrics"));

  req.overrides = {"metrics.max_k=0"};
  CHECK_THROWS_AS(cmd_metrics(req, log), ConfigError);
}

TEST_CASE("command-line exit codes") {
  const TrainOutcome& t = toy_run();
  const std::string ck = t.checkpoint.string();
  const std::string out = " -s output.dir=" + (scratch() / "cli").string();
  const fs::path cfg = scratch() / "toy.cfg";
  std::ofstream(cfg) << toy_config_text("cli");

  CHECK(run_cli("keys") == 0);
  CHECK(run_cli("train -c " + cfg.string() + " -s train.beta=-1") == 2);
  const json err = json::parse(slurp(scratch() / "cli.err"));
  CHECK(err["record"] == "error");
  CHECK(err["kind"] == "config");
  CHECK(err["exit_code"] == 2);
  CHECK(run_cli("train -c " + cfg.string() + " -s no.such.key=1") == 2);
  CHECK(run_cli("metrics " + ck + " -k 0" + out) == 2);
  CHECK(run_cli("metrics " + (scratch() / "absent.flint").string()) == 3);
  CHECK(run_cli("interpret " + ck + " --local" + out) == 2);
  CHECK(run_cli("interpret " + ck + " --local --samples 999" + out) == 3);
  CHECK(run_cli("interpret " + ck + " --threshold 0.2 --mas-size 2" + out) == 0);
  CHECK(run_cli("metrics " + ck + " -k 2" + out) == 0);
  CHECK(run_cli("frobnicate") == 2);
}
