#include "camp/cli/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <limits>
#include <random>
#include <sstream>

#include "camp/analysis/analysis.hpp"
#include "camp/error.hpp"
#include "camp/evalsuite/evalsuite.hpp"
#include "camp/tensorcore/checkpoint.hpp"

namespace camp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- settings

Settings Settings::defaults(const std::string& profile) {
  Settings s;
  s.profile = profile;
  if (profile == "desk") {
    s.model.encoder = transformer::EncoderConfig::desk();
    s.train = train::TrainConfig::desk();
  } else if (profile == "paper") {
    s.model.encoder = transformer::EncoderConfig::paper();
    s.train = train::TrainConfig::paper();
    s.model.scaled_init = false;
    s.eval_support_sizes = {8, 16, 32, 64, 128};
  } else {
    throw InvalidArgument("unknown profile '" + profile + "' (expected desk or paper)");
  }
  return s;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream o;
  o << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return o.str();
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) {
    throw InvalidArgument(key + ": expected a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(t);
  } catch (const std::exception&) {
    throw InvalidArgument(key + ": integer out of range '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (t.empty() || used != t.size() || !std::isfinite(d)) {
    throw InvalidArgument(key + ": expected a finite number, got '" + v + "'");
  }
  return d;
}

bool parse_bool(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw InvalidArgument(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, item));
  if (out.empty()) throw InvalidArgument(key + ": empty list");
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename T>
Binding bind_uint(const std::string& key, T& field) {
  return {key, [&field, key](const std::string& v) { field = static_cast<T>(parse_u64(key, v)); },
          [&field] { return std::to_string(field); }};
}

Binding bind_double(const std::string& key, double& field) {
  return {key, [&field, key](const std::string& v) { field = parse_double(key, v); },
          [&field] { return fmt_double(field); }};
}

Binding bind_bool(const std::string& key, bool& field) {
  return {key, [&field, key](const std::string& v) { field = parse_bool(key, v); },
          [&field] { return std::string(field ? "true" : "false"); }};
}

Binding bind_sizes(const std::string& key, std::vector<std::size_t>& field) {
  return {key, [&field, key](const std::string& v) { field = parse_sizes(key, v); },
          [&field] { return join_sizes(field); }};
}

}  // namespace

std::vector<Binding> bindings(Settings& s) {
  std::vector<Binding> b;
  b.push_back({"profile", [](const std::string&) {}, [&s] { return s.profile; }});
  b.push_back({"seed", [&s](const std::string& v) { s.seed = s.train.seed = parse_u64("seed", v); },
               [&s] { return std::to_string(s.seed); }});
  b.push_back({"threads", [&s](const std::string& v) { s.threads = s.train.threads = parse_u64("threads", v); },
               [&s] { return std::to_string(s.threads); }});

  b.push_back(bind_uint("synth.n_tasks", s.synth.n_tasks));
  b.push_back(bind_uint("synth.molecules_per_task", s.synth.molecules_per_task));
  b.push_back(bind_uint("synth.atom_feature_dim", s.synth.atom_feature_dim));
  b.push_back(bind_uint("synth.n_bond_types", s.synth.n_bond_types));
  b.push_back(bind_uint("synth.min_atoms", s.synth.min_atoms));
  b.push_back(bind_uint("synth.max_atoms", s.synth.max_atoms));
  b.push_back(bind_double("synth.noise_std", s.synth.noise_std));
  b.push_back(bind_double("synth.motif_separation", s.synth.motif_separation));

  b.push_back(bind_double("split.train", s.split[0]));
  b.push_back(bind_double("split.valid", s.split[1]));
  b.push_back(bind_double("split.test", s.split[2]));
  b.push_back(bind_uint("split.seed", s.split_seed));

  b.push_back(bind_uint("model.d_node", s.model.d_node));
  b.push_back(bind_uint("model.mpnn_steps", s.model.mpnn_steps));
  b.push_back(bind_bool("model.scaled_init", s.model.scaled_init));
  b.push_back(bind_uint("model.d_label", s.model.d_label));
  b.push_back(bind_uint("model.d_head", s.model.d_head));
  b.push_back({"model.layout",
               [&s](const std::string& v) {
                 const auto t = trim(v);
                 if (t == "camp") {
                   s.model.layout = context::Layout::kCamp;
                 } else if (t == "naive-icl") {
                   s.model.layout = context::Layout::kNaiveIcl;
                 } else {
                   throw InvalidArgument("model.layout: expected camp or naive-icl, got '" + v + "'");
                 }
               },
               [&s] { return std::string(s.model.layout == context::Layout::kCamp ? "camp" : "naive-icl"); }});

  b.push_back(bind_uint("encoder.n_layers", s.model.encoder.n_layers));
  b.push_back(bind_uint("encoder.n_heads", s.model.encoder.n_heads));
  b.push_back(bind_uint("encoder.d_model", s.model.encoder.d_model));
  b.push_back(bind_uint("encoder.d_mlp", s.model.encoder.d_mlp));
  b.push_back(bind_bool("encoder.use_positional", s.model.encoder.use_positional));

  b.push_back(bind_sizes("train.support_sizes", s.train.support_sizes));
  b.push_back(bind_uint("train.batch_size", s.train.batch_size));
  b.push_back(bind_uint("train.max_epochs", s.train.max_epochs));
  b.push_back(bind_uint("train.early_stop_window", s.train.early_stop_window));
  b.push_back(bind_double("train.base_lr", s.train.base_lr));
  b.push_back(bind_uint("train.warmup_steps", s.train.warmup_steps));
  b.push_back(bind_double("train.grad_clip_norm", s.train.grad_clip_norm));
  b.push_back(bind_double("train.dropout_rate", s.train.dropout_rate));
  b.push_back(bind_uint("train.batches_per_epoch", s.train.batches_per_epoch));
  b.push_back(bind_uint("train.valid_episodes", s.train.valid_episodes));
  b.push_back(bind_bool("train.rebalance", s.train.rebalance));
  b.push_back(bind_double("train.label_flip_prob", s.train.label_flip_prob));
  b.push_back(bind_bool("train.rotate_features", s.train.rotate_features));

  b.push_back(bind_sizes("eval.support_sizes", s.eval_support_sizes));
  b.push_back(bind_uint("eval.seeds", s.eval_seeds));
  b.push_back(bind_bool("eval.baselines", s.eval_baselines));
  b.push_back(bind_sizes("latency.support_sizes", s.latency_support_sizes));
  b.push_back(bind_uint("latency.repeats", s.latency_repeats));
  b.push_back(bind_uint("analyze.support_size", s.analyze_support_size));
  b.push_back(bind_uint("analyze.episodes", s.analyze_episodes));
  b.push_back(bind_uint("analyze.flip_row", s.analyze_flip_row));
  b.push_back(bind_uint("ablate.permutations", s.ablate_permutations));
  return b;
}

std::map<std::string, std::string> parse_config(std::istream& in, const std::string& source) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument(source + ":" + std::to_string(no) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw InvalidArgument(source + ":" + std::to_string(no) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read config file " + path.string());
  return parse_config(in, path.string());
}

void apply_config(Settings& s, const std::map<std::string, std::string>& values) {
  auto table = bindings(s);
  for (const auto& [key, value] : values) {
    auto it = std::find_if(table.begin(), table.end(), [&](const Binding& b) { return b.key == key; });
    if (it == table.end()) throw InvalidArgument("unknown config key '" + key + "'");
    it->set(value);
  }
}

std::map<std::string, std::string> resolved(const Settings& s) {
  auto& m = const_cast<Settings&>(s);
  std::map<std::string, std::string> out;
  for (const auto& b : bindings(m)) out[b.key] = b.get();
  return out;
}

void write_config(const Settings& s, std::ostream& out) {
  for (const auto& [k, v] : resolved(s)) out << k << " = " << v << '\n';
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 unavailable");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

// ---------------------------------------------------------------- runs

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream o;
  o << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return o.str();
}

struct Flags {
  std::string data;
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string support_sizes;
  std::optional<std::size_t> seeds;
  std::optional<std::size_t> tasks;
  std::optional<std::size_t> repeats;
  std::vector<std::string> variants;
  std::vector<std::string> sets;
};

class Run {
 public:
  Run(std::string command, std::ostream& out, std::ostream& err)
      : command_(std::move(command)), out_(out), err_(err), started_(utc_now()) {}

  std::ostream& out() { return out_; }
  std::ostream& err() { return err_; }

  void input(const fs::path& p) { inputs_.push_back(p); }
  void output(const fs::path& p) { outputs_.push_back(p); }

  std::ofstream open(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw InvalidArgument("cannot write " + p.string());
    output(p);
    return f;
  }

  void write_text(const fs::path& p, const std::string& text) {
    auto f = open(p);
    f << text;
  }

  void manifest(const fs::path& path, const Settings& s) {
    json j;
    j["command"] = command_;
    j["tool_version"] = kToolVersion;
    j["seed"] = s.seed;
    j["config"] = resolved(s);
    j["inputs"] = json::array();
    for (const auto& p : inputs_) j["inputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    j["outputs"] = json::array();
    for (const auto& p : outputs_) j["outputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    j["started_at"] = started_;
    j["finished_at"] = utc_now();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw InvalidArgument("cannot write " + path.string());
    f << j.dump(2) << '\n';
  }

 private:
  std::string command_;
  std::ostream& out_;
  std::ostream& err_;
  std::string started_;
  std::vector<fs::path> inputs_, outputs_;
};

// defaults(profile) < checkpoint config < --config < flags
Settings resolve(const Flags& f, const std::string& command) {
  std::map<std::string, std::string> ckpt_values, file_values;
  if (!f.checkpoint.empty()) ckpt_values = read_config_file(fs::path(f.checkpoint) / "config.cfg");
  if (!f.config.empty()) file_values = read_config_file(f.config);
  std::string profile = "desk";
  for (const auto* m : {&ckpt_values, &file_values}) {
    if (auto it = m->find("profile"); it != m->end()) profile = it->second;
  }
  if (!f.profile.empty()) profile = f.profile;
  auto s = Settings::defaults(profile);
  apply_config(s, ckpt_values);
  apply_config(s, file_values);
  std::map<std::string, std::string> flag_values;
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + kv + "'");
    flag_values[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
  }
  if (f.seed) flag_values["seed"] = std::to_string(*f.seed);
  if (f.threads) flag_values["threads"] = std::to_string(*f.threads);
  if (f.seeds) flag_values["eval.seeds"] = std::to_string(*f.seeds);
  if (f.tasks) flag_values["synth.n_tasks"] = std::to_string(*f.tasks);
  if (f.repeats) flag_values["latency.repeats"] = std::to_string(*f.repeats);
  if (!f.support_sizes.empty()) {
    if (command == "evaluate") {
      flag_values["eval.support_sizes"] = f.support_sizes;
    } else if (command == "bench-latency") {
      flag_values["latency.support_sizes"] = f.support_sizes;
    } else if (command == "analyze") {
      flag_values["analyze.support_size"] = f.support_sizes.substr(0, f.support_sizes.find(','));
    } else {
      flag_values["train.support_sizes"] = f.support_sizes;
    }
  }
  apply_config(s, flag_values);
  s.train.seed = s.seed;
  s.train.threads = s.threads;
  s.model.atom_feature_dim = s.synth.atom_feature_dim;
  s.model.n_bond_types = s.synth.n_bond_types;
  s.train.validate();
  s.model.validate();
  return s;
}

data::TaskSplit load_split(const std::string& data_path, Settings& s, Run& run) {
  if (data_path.empty()) throw InvalidArgument("--data is required");
  auto tasks = data::load_tasks(data_path);
  run.input(data_path);
  s.synth.atom_feature_dim = s.model.atom_feature_dim = tasks.atom_feature_dim;
  s.synth.n_bond_types = s.model.n_bond_types = tasks.n_bond_types;
  data::Rng rng(s.split_seed);
  return data::split_tasks(tasks, s.split, rng);
}

fs::path out_dir(const Flags& f) {
  if (f.out.empty()) throw InvalidArgument("--out is required");
  fs::create_directories(f.out);
  return fs::path(f.out);
}

// Initial weights match the ones run_training starts from with this seed.
head::CampModel load_model(const Flags& f, const Settings& s, Run& run) {
  head::CampModel model(s.model, train::derive_seed(s.seed, {1}));
  if (!f.checkpoint.empty()) {
    const auto path = fs::path(f.checkpoint) / "best.ckpt";
    tensor::load_checkpoint_into(model.parameters(), path);
    run.input(path);
  }
  return model;
}

const data::TaskSet& eval_tasks(const data::TaskSplit& split) {
  if (!split.test.empty()) return split.test;
  if (!split.valid.empty()) return split.valid;
  return split.train;
}

int cmd_synth(const Flags& f, std::ostream& out, std::ostream& err) {
  Run run("synth-data", out, err);
  auto s = resolve(f, "synth-data");
  if (f.out.empty()) throw InvalidArgument("--out is required");
  data::Rng rng(s.seed);
  const auto tasks = data::make_synthetic_tasks(s.synth, rng);
  const fs::path path(f.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  data::save_tasks(tasks, path);
  run.output(path);
  run.manifest(fs::path(path.string() + ".manifest.json"), s);
  out << "wrote " << tasks.size() << " tasks to " << path.string() << '\n';
  return kOk;
}

int cmd_train(const Flags& f, std::ostream& out, std::ostream& err) {
  Run run("train", out, err);
  auto s = resolve(f, "train");
  const auto split = load_split(f.data, s, run);
  const auto dir = out_dir(f);
  train::TrainHooks hooks;
  hooks.progress = &err;
  const auto result = train::run_training(split.train, split.valid, s.model, s.train, hooks);
  {
    auto h = run.open(dir / "history.csv");
    train::write_history_csv(result.history, h);
  }
  {
    auto t = run.open(dir / "timing.csv");
    train::write_timing_csv(result.history, t);
  }
  tensor::save_checkpoint(result.best.parameters(), dir / "best.ckpt");
  run.output(dir / "best.ckpt");
  tensor::save_checkpoint(result.last.parameters(), dir / "last.ckpt");
  run.output(dir / "last.ckpt");
  {
    auto c = run.open(dir / "config.cfg");
    write_config(s, c);
  }
  eval::Series curve{"validation", {}, {}, {}};
  for (const auto& e : result.history.epochs) {
    curve.x.push_back(static_cast<double>(e.epoch));
    curve.y.push_back(e.valid_loss);
  }
  run.write_text(dir / "history.svg",
                 eval::line_plot_svg(std::span(&curve, 1), "validation cross entropy", "epoch", "loss"));
  run.manifest(dir / "manifest.json", s);
  const auto& best = result.history.epochs.at(result.history.best_epoch - 1);
  out << "best epoch " << best.epoch << " valid_loss " << fmt_double(best.valid_loss)
      << (result.history.stopped_early ? " (stopped early)" : "") << '\n';
  return kOk;
}

int cmd_evaluate(const Flags& f, std::ostream& out, std::ostream& err) {
  Run run("evaluate", out, err);
  auto s = resolve(f, "evaluate");
  const auto split = load_split(f.data, s, run);
  const auto dir = out_dir(f);
  const auto model = load_model(f, s, run);
  const auto& test = eval_tasks(split);
  const auto report = eval::evaluate_sweep(model, test, s.eval_support_sizes, s.eval_seeds, s.seed, s.threads);
  {
    auto c = run.open(dir / "sweep.csv");
    eval::write_sweep_csv(report, c);
  }
  {
    auto c = run.open(dir / "sweep_aggregate.csv");
    eval::write_aggregate_csv(report, c);
  }
  std::vector<eval::Series> series{eval::delta_series(report, f.checkpoint.empty() ? "model (untrained)" : "model")};
  std::ostringstream summary;
  summary << "model\n";
  eval::write_sweep_summary(report, summary);
  if (s.eval_baselines) {
    const auto centroid = eval::evaluate_sweep(eval::centroid_baseline, test, s.eval_support_sizes, s.eval_seeds,
                                               s.seed, s.threads);
    auto c = run.open(dir / "sweep_centroid.csv");
    eval::write_sweep_csv(centroid, c);
    summary << "centroid baseline\n";
    eval::write_sweep_summary(centroid, summary);
    series.push_back(eval::delta_series(centroid, "centroid baseline"));
    if (!f.checkpoint.empty()) {
      const head::CampModel untrained(s.model, train::derive_seed(s.seed, {1}));
      const auto base = eval::evaluate_sweep(untrained, test, s.eval_support_sizes, s.eval_seeds, s.seed, s.threads);
      auto u = run.open(dir / "sweep_untrained.csv");
      eval::write_sweep_csv(base, u);
      summary << "untrained model (same initial weights, same episodes)\n";
      eval::write_sweep_summary(base, summary);
      series.push_back(eval::delta_series(base, "untrained"));
    }
  }
  run.write_text(dir / "sweep.txt", summary.str());
  run.write_text(dir / "sweep.svg", eval::line_plot_svg(series, "dAUPRC by support size", "support size",
                                                        "dAUPRC (mean +- SE over seeds)", true));
  run.manifest(dir / "manifest.json", s);
  out << summary.str();
  return kOk;
}

int cmd_bench(const Flags& f, std::ostream& out, std::ostream& err) {
  Run run("bench-latency", out, err);
  auto s = resolve(f, "bench-latency");
  const auto split = load_split(f.data, s, run);
  const auto dir = out_dir(f);
  const auto model = load_model(f, s, run);
  const auto report =
      eval::benchmark_latency(model, eval_tasks(split), s.latency_support_sizes, s.latency_repeats, s.seed);
  {
    auto c = run.open(dir / "latency.csv");
    eval::write_latency_csv(report, c);
  }
  run.manifest(dir / "manifest.json", s);
  bool monotone = true;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    monotone = monotone && report.rows[i].per_episode_us > report.rows[i - 1].per_episode_us;
  }
  for (const auto& r : report.rows) {
    out << "|s|=" << r.support_size << " median " << r.per_episode_us << " us/episode over " << r.n_episodes
        << " episodes\n";
  }
  out << "per-episode medians " << (monotone ? "increase" : "do not increase") << " with support size\n";
  return kOk;
}

int cmd_analyze(const Flags& f, std::ostream& out, std::ostream& err) {
  Run run("analyze", out, err);
  auto s = resolve(f, "analyze");
  const auto split = load_split(f.data, s, run);
  const auto dir = out_dir(f);
  const auto model = load_model(f, s, run);
  const auto& tasks = eval_tasks(split);
  data::Rng rng(s.seed);
  std::ostringstream summary;
  summary << "striation score is artifact-defined: 1 - within-label / total variance of attention rows\n";
  std::size_t exceeded = 0;
  for (std::size_t e = 0; e < s.analyze_episodes; ++e) {
    const auto& task = tasks.tasks[e % tasks.size()];
    const auto ep = data::sample_episode(task, s.analyze_support_size, rng);
    const auto row = s.model.layout == context::Layout::kCamp
                         ? s.analyze_flip_row
                         : analysis::label_row(s.model.layout, s.analyze_flip_row - 1, ep.support_size());
    const auto report = analysis::label_flip(model, ep, row);
    const auto tag = "episode" + std::to_string(e);
    {
      auto a = run.open(dir / "attention" / (tag + ".json"));
      transformer::write_attention_json(report.before.attention, a);
    }
    {
      auto a = run.open(dir / "attention" / (tag + "_flipped.json"));
      transformer::write_attention_json(report.after.attention, a);
    }
    const auto pre = analysis::pca_2d(report.before.pre.rows);
    const auto post = analysis::pca_2d(report.before.post);
    {
      auto c = run.open(dir / "pca" / (tag + "_pre.csv"));
      analysis::write_pca_csv(pre, report.before.roles, c);
    }
    {
      auto c = run.open(dir / "pca" / (tag + "_post.csv"));
      analysis::write_pca_csv(post, report.before.roles, c);
    }
    {
      auto flipped = post;
      flipped.coords = analysis::project(post, report.after.post);
      auto c = run.open(dir / "pca" / (tag + "_post_flipped.csv"));
      analysis::write_pca_csv(flipped, report.after.roles, c);
    }
    {
      auto j = run.open(dir / "flip" / (tag + ".json"));
      analysis::write_flip_json(report, j);
    }
    run.write_text(dir / "figures" / (tag + "_panels.svg"), analysis::embedding_panels_svg(report));
    for (const auto& rec : report.before.attention) {
      run.write_text(dir / "figures" /
                         (tag + "_attention_l" + std::to_string(rec.layer) + "h" + std::to_string(rec.head) + ".svg"),
                     analysis::attention_heatmap_svg(rec, report.before.roles));
    }
    const auto d = analysis::post_displacement(report);
    exceeded += d.exceeds_median();
    const auto ids = analysis::row_classes(report.before.roles);
    double mean_striation = 0;
    for (const auto& rec : report.before.attention) mean_striation += analysis::striation_score(rec, ids);
    mean_striation /= static_cast<double>(report.before.attention.size());
    summary << tag << ": task " << task.task_id << ", flipped row " << row << ", p(positive) "
            << report.before.prediction.probability_positive << " -> " << report.after.prediction.probability_positive
            << ", post-encoder displacement " << d.flipped << " (median other " << d.median_other
            << "), mean striation " << mean_striation << '\n';
  }
  summary << "flipped row moved more than the median other row in " << exceeded << " of " << s.analyze_episodes
          << " episodes\n";
  run.write_text(dir / "summary.txt", summary.str());
  run.manifest(dir / "manifest.json", s);
  out << summary.str();
  return kOk;
}

// Fraction of random support permutations that move a logit by more than tol.
std::size_t permutation_changes(const head::CampModel& model, const data::TaskSet& tasks, std::size_t k,
                                std::size_t n_cases, std::uint64_t seed) {
  data::Rng rng(seed);
  std::size_t changed = 0;
  for (std::size_t c = 0; c < n_cases; ++c) {
    const auto& task = tasks.tasks[c % tasks.size()];
    auto ep = data::sample_episode(task, std::min(k, task.size() - 1), rng);
    const auto base = head::predict(ep, model);
    auto perm = ep;
    do {
      std::shuffle(perm.support.begin(), perm.support.end(), rng);
    } while (perm.support == ep.support && ep.support.size() > 1);
    const auto moved = head::predict(perm, model);
    const double diff =
        std::max(std::abs(base.logits[0] - moved.logits[0]), std::abs(base.logits[1] - moved.logits[1]));
    changed += diff > 1e-6;
  }
  return changed;
}

int cmd_ablate(const Flags& f, std::ostream& out, std::ostream& err) {
  Run run("ablate", out, err);
  auto s = resolve(f, "ablate");
  const auto split = load_split(f.data, s, run);
  const auto dir = out_dir(f);
  std::vector<std::string> variants = f.variants;
  if (variants.empty()) variants = {"camp", "positional", "naive-icl"};
  if (std::find(variants.begin(), variants.end(), "camp") == variants.end()) variants.insert(variants.begin(), "camp");
  const auto& probe = eval_tasks(split);
  std::vector<eval::Series> curves;
  std::map<std::string, std::size_t> changes;
  auto curve_csv = run.open(dir / "curves.csv");
  curve_csv << "variant,epoch,valid_loss\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  std::ostringstream report;
  for (const auto& v : variants) {
    auto vs = s;
    if (v == "camp") {
      vs.model.layout = context::Layout::kCamp;
      vs.model.encoder.use_positional = false;
    } else if (v == "positional") {
      vs.model.layout = context::Layout::kCamp;
      vs.model.encoder.use_positional = true;
    } else if (v == "naive-icl") {
      vs.model.layout = context::Layout::kNaiveIcl;
      vs.model.encoder.use_positional = false;
    } else {
      throw InvalidArgument("unknown variant '" + v + "' (expected camp, positional or naive-icl)");
    }
    err << "ablate: training variant " << v << '\n';
    train::TrainHooks hooks;
    hooks.progress = &err;
    const auto result = train::run_training(split.train, split.valid, vs.model, vs.train, hooks);
    {
      auto h = run.open(dir / v / "history.csv");
      train::write_history_csv(result.history, h);
    }
    {
      auto c = run.open(dir / v / "config.cfg");
      write_config(vs, c);
    }
    tensor::save_checkpoint(result.best.parameters(), dir / v / "best.ckpt");
    run.output(dir / v / "best.ckpt");
    eval::Series curve{v, {}, {}, {}};
    for (const auto& e : result.history.epochs) {
      curve_csv << v << ',' << e.epoch << ',' << e.valid_loss << '\n';
      curve.x.push_back(static_cast<double>(e.epoch));
      curve.y.push_back(e.valid_loss);
    }
    curves.push_back(curve);
    const auto k = s.eval_support_sizes.front();
    changes[v] = permutation_changes(result.best, probe, k, s.ablate_permutations, s.seed);
    const auto& best = result.history.epochs.at(result.history.best_epoch - 1);
    report << v << ": best validation loss " << fmt_double(best.valid_loss) << " at epoch " << best.epoch << "; "
           << changes[v] << " of " << s.ablate_permutations << " support permutations change the logits by > 1e-6\n";
  }
  curve_csv.close();
  const bool camp_invariant = changes["camp"] == 0;
  report << "camp invariant under support permutation: " << (camp_invariant ? "yes" : "no") << '\n';
  if (changes.count("positional")) {
    const bool positional_breaks = changes["positional"] * 10 >= s.ablate_permutations * 9;
    report << "positional variant breaks invariance in >= 90% of cases: " << (positional_breaks ? "yes" : "no")
           << '\n';
    report << "invariance difference verified: " << (camp_invariant && positional_breaks ? "yes" : "no") << '\n';
  }
  run.write_text(dir / "report.txt", report.str());
  run.write_text(dir / "curves.svg", eval::line_plot_svg(curves, "validation loss by variant", "epoch",
                                                         "validation cross entropy"));
  run.manifest(dir / "manifest.json", s);
  out << report.str();
  return kOk;
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "Config file (key = value lines)");
  sub->add_option("--seed", f.seed, "Random seed");
  sub->add_option("--threads", f.threads, "Worker threads (1 for bit-exact runs)");
  sub->add_option("--profile", f.profile, "Default set: desk or paper");
  sub->add_option("--set", f.sets, "Override one config key (key=value), repeatable");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"In-context molecular property prediction: data, training, evaluation, analysis"};
  app.name("camp");
  app.require_subcommand(1);
  Flags f;
  std::string command;

  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic motif task set");
  add_common(synth, f);
  synth->add_option("--out", f.out, "Output dataset file (JSON lines)")->required();
  synth->add_option("--tasks", f.tasks, "Number of tasks");

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, f);
  train->add_option("--data", f.data, "Dataset file")->required();
  train->add_option("--out", f.out, "Output directory")->required();
  train->add_option("--support-sizes", f.support_sizes, "Comma-separated support sizes");

  auto* evaluate = app.add_subcommand("evaluate", "Support-size sweep of dAUPRC on the test split");
  add_common(evaluate, f);
  evaluate->add_option("--data", f.data, "Dataset file")->required();
  evaluate->add_option("--out", f.out, "Output directory")->required();
  evaluate->add_option("--checkpoint", f.checkpoint, "Training output directory (untrained model if absent)");
  evaluate->add_option("--support-sizes", f.support_sizes, "Comma-separated support sizes");
  evaluate->add_option("--seeds", f.seeds, "Number of support draws per task and size");

  auto* analyze = app.add_subcommand("analyze", "Embedding PCA, attention export and label flip");
  add_common(analyze, f);
  analyze->add_option("--data", f.data, "Dataset file")->required();
  analyze->add_option("--out", f.out, "Output directory")->required();
  analyze->add_option("--checkpoint", f.checkpoint, "Training output directory");
  analyze->add_option("--support-sizes", f.support_sizes, "Support size of the analysed episodes");

  auto* ablate = app.add_subcommand("ablate", "Train CAMP against the positional and naive-ICL variants");
  add_common(ablate, f);
  ablate->add_option("--data", f.data, "Dataset file")->required();
  ablate->add_option("--out", f.out, "Output directory")->required();
  ablate->add_option("--variant", f.variants, "camp, positional or naive-icl (repeatable)");
  ablate->add_option("--support-sizes", f.support_sizes, "Comma-separated training support sizes");

  auto* bench = app.add_subcommand("bench-latency", "Inference latency per support size");
  add_common(bench, f);
  bench->add_option("--data", f.data, "Dataset file")->required();
  bench->add_option("--out", f.out, "Output directory")->required();
  bench->add_option("--checkpoint", f.checkpoint, "Training output directory");
  bench->add_option("--support-sizes", f.support_sizes, "Comma-separated support sizes");
  bench->add_option("--repeats", f.repeats, "Timed repeats per size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(f, out, err);
    if (*train) return cmd_train(f, out, err);
    if (*evaluate) return cmd_evaluate(f, out, err);
    if (*analyze) return cmd_analyze(f, out, err);
    if (*ablate) return cmd_ablate(f, out, err);
    if (*bench) return cmd_bench(f, out, err);
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  err << app.help();
  return kUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("camp");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace camp::cli
