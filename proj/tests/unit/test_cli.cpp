#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "camp/cli/cli.hpp"
#include "camp/error.hpp"
#include "doctest.h"

using namespace camp;
using namespace camp::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("camp_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

const char* kTinyConfig = R"(# small enough to train in well under a second
encoder.d_model = 16
encoder.d_mlp = 32
encoder.n_layers = 1
encoder.n_heads = 2
model.d_node = 16
train.max_epochs = 2
train.batches_per_epoch = 2
train.valid_episodes = 4
train.support_sizes = 2,4
synth.molecules_per_task = 24
split.train = 0.5
split.valid = 0.25
split.test = 0.25
)";

}  // namespace

TEST_CASE("config text parsing") {
  std::istringstream in("a = 1\n# comment\n\n  b.c=two words  # trailing\n");
  const auto m = parse_config(in);
  CHECK(m.size() == 2);
  CHECK(m.at("a") == "1");
  CHECK(m.at("b.c") == "two words");

  std::istringstream bad("no equals sign\n");
  CHECK_THROWS_AS(parse_config(bad), InvalidArgument);
  std::istringstream empty_key(" = 3\n");
  CHECK_THROWS_AS(parse_config(empty_key), InvalidArgument);
}

TEST_CASE("settings bindings") {
  auto s = Settings::defaults("desk");
  SUBCASE("every key round-trips through its text form") {
    const auto before = resolved(s);
    auto copy = Settings::defaults("paper");
    auto values = before;
    values.erase("profile");
    apply_config(copy, values);
    auto after = resolved(copy);
    after["profile"] = before.at("profile");
    CHECK(after == before);
  }
  SUBCASE("training and encoder fields are addressable") {
    apply_config(s, {{"encoder.d_model", "64"},
              {"train.base_lr", "0.002"},
              {"train.support_sizes", "2, 3"},
              {"model.layout", "naive-icl"},
              {"encoder.use_positional", "true"},
              {"seed", "9"}});
    CHECK(s.model.encoder.d_model == 64);
    CHECK(s.train.base_lr == 0.002);
    CHECK(s.train.support_sizes == std::vector<std::size_t>{2, 3});
    CHECK(s.model.layout == context::Layout::kNaiveIcl);
    CHECK(s.model.encoder.use_positional);
    CHECK(s.seed == 9);
    CHECK(s.train.seed == 9);
  }
  SUBCASE("bad input") {
    CHECK_THROWS_AS(apply_config(s, {{"no.such.key", "1"}}), InvalidArgument);
    CHECK_THROWS_AS(apply_config(s, {{"encoder.d_model", "-3"}}), InvalidArgument);
    CHECK_THROWS_AS(apply_config(s, {{"train.base_lr", "fast"}}), InvalidArgument);
    CHECK_THROWS_AS(apply_config(s, {{"train.base_lr", "nan"}}), InvalidArgument);
    CHECK_THROWS_AS(apply_config(s, {{"train.rebalance", "maybe"}}), InvalidArgument);
    CHECK_THROWS_AS(apply_config(s, {{"train.support_sizes", "4,,8"}}), InvalidArgument);
    CHECK_THROWS_AS(Settings::defaults("laptop"), InvalidArgument);
  }
  SUBCASE("profiles differ in model size") {
    const auto paper = Settings::defaults("paper");
    CHECK(paper.model.encoder.d_model == 768);
    CHECK(paper.model.encoder.n_layers == 12);
    CHECK(s.model.encoder.d_model == 128);
    CHECK(paper.train.label_flip_prob == 0.0);
    CHECK_FALSE(paper.model.scaled_init);
    CHECK(s.model.scaled_init);
  }
}

TEST_CASE("sha256") {
  TempDir dir("sha");
  {
    std::ofstream f(dir.path / "abc.txt", std::ios::binary);
    f << "abc";
  }
  CHECK(sha256_file(dir.path / "abc.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  {
    std::ofstream f(dir.path / "empty", std::ios::binary);
  }
  CHECK(sha256_file(dir.path / "empty") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK_THROWS_AS(sha256_file(dir.path / "missing"), InvalidArgument);
}

TEST_CASE("exit codes") {
  TempDir dir("codes");
  CHECK(call({}).code == kUsage);
  CHECK(call({"frobnicate"}).code == kUsage);
  const auto unknown_flag = call({"train", "--data", "x", "--out", "y", "--bogus"});
  CHECK(unknown_flag.code == kUsage);
  CHECK_FALSE(unknown_flag.err.empty());
  CHECK(call({"train", "--out", "y"}).code == kUsage);  // --data is required
  CHECK(call({"--help"}).code == kOk);
  CHECK(call({"train", "--data", (dir.path / "missing.jsonl").string(), "--out", dir.path.string()}).code ==
        kDataError);
  CHECK(call({"synth-data", "--out", (dir.path / "d.jsonl").string(), "--set", "nope=1"}).code == kDataError);
  CHECK(call({"synth-data", "--out", (dir.path / "d.jsonl").string(), "--set", "noequals"}).code == kDataError);
}

TEST_CASE("synth-data, train and evaluate end to end") {
  TempDir dir("e2e");
  const auto data = (dir.path / "tasks.jsonl").string();
  const auto cfg = (dir.path / "tiny.cfg").string();
  {
    std::ofstream f(cfg);
    f << kTinyConfig;
  }
  REQUIRE(call({"synth-data", "--tasks", "4", "--out", data, "--seed", "7", "--config", cfg}).code == kOk);
  REQUIRE(fs::exists(data));
  const auto manifest = nlohmann::json::parse(slurp(data + ".manifest.json"));
  CHECK(manifest["command"] == "synth-data");
  CHECK(manifest["seed"] == 7);
  CHECK(manifest["config"]["synth.n_tasks"] == "4");
  CHECK(manifest["outputs"][0]["sha256"] == sha256_file(data));
  CHECK(manifest.contains("started_at"));
  CHECK(manifest.contains("finished_at"));
  CHECK(manifest["tool_version"] == kToolVersion);

  const auto run_a = (dir.path / "a").string();
  const auto run_b = (dir.path / "b").string();
  for (const auto& out : {run_a, run_b}) {
    const auto r = call({"train", "--data", data, "--config", cfg, "--out", out, "--seed", "3", "--threads", "1"});
    REQUIRE(r.code == kOk);
    CHECK(r.err.find("epoch 2") != std::string::npos);
  }
  for (const auto* name : {"history.csv", "best.ckpt", "last.ckpt", "config.cfg"}) {
    CHECK(slurp(fs::path(run_a) / name) == slurp(fs::path(run_b) / name));
  }
  CHECK(fs::exists(fs::path(run_a) / "timing.csv"));

  SUBCASE("flags beat the config file, which beats the checkpoint") {
    const auto train_manifest = nlohmann::json::parse(slurp(fs::path(run_a) / "manifest.json"));
    CHECK(train_manifest["config"]["encoder.d_model"] == "16");
    CHECK(train_manifest["config"]["seed"] == "3");
    CHECK(train_manifest["inputs"][0]["sha256"] == sha256_file(data));

    const auto over = (dir.path / "override.cfg").string();
    {
      std::ofstream f(over);
      f << "eval.seeds = 4\neval.support_sizes = 2\neval.baselines = false\n";
    }
    const auto ev = (dir.path / "ev").string();
    const auto r = call({"evaluate", "--data", data, "--checkpoint", run_a, "--config", over, "--seeds", "2", "--out", ev});
    REQUIRE(r.code == kOk);
    const auto m = nlohmann::json::parse(slurp(fs::path(ev) / "manifest.json"));
    CHECK(m["config"]["encoder.d_model"] == "16");  // from the checkpoint
    CHECK(m["config"]["eval.support_sizes"] == "2");  // from the file
    CHECK(m["config"]["eval.seeds"] == "2");          // from the flag
    CHECK(fs::exists(fs::path(ev) / "sweep.csv"));
    CHECK(fs::exists(fs::path(ev) / "sweep_aggregate.csv"));
    CHECK_FALSE(fs::exists(fs::path(ev) / "sweep_centroid.csv"));
  }
  SUBCASE("evaluation output is reproducible") {
    const auto e1 = (dir.path / "e1").string();
    const auto e2 = (dir.path / "e2").string();
    for (const auto& out : {e1, e2}) {
      REQUIRE(call({"evaluate", "--data", data, "--checkpoint", run_a, "--seeds", "2", "--support-sizes", "2,4", "--out",
                    out})
                  .code == kOk);
    }
    CHECK(slurp(fs::path(e1) / "sweep.csv") == slurp(fs::path(e2) / "sweep.csv"));
    CHECK(fs::exists(fs::path(e1) / "sweep_untrained.csv"));
    CHECK(fs::exists(fs::path(e1) / "sweep_centroid.csv"));
    CHECK(slurp(fs::path(e1) / "sweep.svg").find("<svg") != std::string::npos);
  }
  SUBCASE("analyze writes attention, pca and flip artifacts") {
    const auto an = (dir.path / "an").string();
    const auto r = call({"analyze", "--data", data, "--checkpoint", run_a, "--support-sizes", "4", "--set",
                         "analyze.episodes=2", "--out", an});
    REQUIRE(r.code == kOk);
    CHECK(fs::exists(fs::path(an) / "attention" / "episode0.json"));
    CHECK(fs::exists(fs::path(an) / "pca" / "episode1_post.csv"));
    const auto flip = nlohmann::json::parse(slurp(fs::path(an) / "flip" / "episode0.json"));
    CHECK(flip["flip_row"] == 1);
  }
  SUBCASE("bench-latency") {
    const auto lat = (dir.path / "lat").string();
    const auto r = call({"bench-latency", "--data", data, "--checkpoint", run_a, "--support-sizes", "2,4", "--repeats",
                         "2", "--out", lat});
    REQUIRE(r.code == kOk);
    std::istringstream csv(slurp(fs::path(lat) / "latency.csv"));
    std::string line;
    int lines = 0;
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == 3);
  }
  SUBCASE("ablate rejects unknown variants") {
    CHECK(call({"ablate", "--data", data, "--config", cfg, "--variant", "rnn", "--out", (dir.path / "ab").string()})
              .code == kDataError);
  }
}
