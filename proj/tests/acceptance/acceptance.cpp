// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failing criteria (capped at 100).
//
//   acceptance [work_dir [ids]]    e.g. ids = 1,2,5
//
// Criteria 7-9 and 11 share one desk-scale training run driven through the CLI.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "camp/analysis/analysis.hpp"
#include "camp/cli/cli.hpp"
#include "camp/evalsuite/evalsuite.hpp"
#include "camp/tensorcore/checkpoint.hpp"
#include "camp/tensorcore/ops.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace camp;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream o;
  o << std::setprecision(precision) << v;
  return o.str();
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

void cli_or_throw(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != cli::kOk) {
    throw std::runtime_error(args.front() + " exited with " + std::to_string(code) + ": " + err.str());
  }
}

data::Episode permuted(const data::Episode& ep, const std::vector<std::size_t>& perm) {
  auto out = ep;
  for (std::size_t i = 0; i < perm.size(); ++i) out.support[i] = ep.support[perm[i]];
  return out;
}

std::vector<std::size_t> non_identity_permutation(std::size_t n, std::mt19937_64& rng) {
  auto p = camp::testing::random_permutation(n, rng);
  while (n > 1 && std::is_sorted(p.begin(), p.end())) std::shuffle(p.begin(), p.end(), rng);
  return p;
}

head::ModelConfig desk_model_config() {
  head::ModelConfig cfg;
  cfg.encoder = transformer::EncoderConfig::desk();
  return cfg;
}

// Counts of (max |logit change|) over random support permutations.
struct PermutationSweep {
  double worst = 0.0;
  std::size_t changed = 0;
  double max_abs_logit = 0.0;
};

PermutationSweep permutation_sweep(const head::CampModel& model, std::size_t cases, std::uint64_t seed) {
  data::SyntheticConfig sc;
  data::Rng rng(seed);
  const auto tasks = data::make_synthetic_tasks(sc, rng);
  std::uniform_int_distribution<std::size_t> size(2, 32);
  PermutationSweep out;
  for (std::size_t c = 0; c < cases; ++c) {
    const auto& task = tasks.tasks[c % tasks.size()];
    const auto ep = data::sample_episode(task, size(rng), rng);
    const auto perm = non_identity_permutation(ep.support_size(), rng);
    const auto a = head::predict(ep, model);
    const auto b = head::predict(permuted(ep, perm), model);
    double diff = 0.0;
    for (int i = 0; i < 2; ++i) {
      diff = std::max(diff, std::abs(a.logits[i] - b.logits[i]));
      out.max_abs_logit = std::max(out.max_abs_logit, std::abs(a.logits[i]));
    }
    out.worst = std::max(out.worst, diff);
    out.changed += diff > 1e-6;
  }
  return out;
}

Verdict criterion_1() {
  const auto start = Clock::now();
  const head::CampModel model(desk_model_config(), 101);
  const auto sweep = permutation_sweep(model, 50, 1);
  const double t = seconds_since(start);
  return {sweep.worst < 1e-6 && t < 60.0, "max |dlogit| " + fmt(sweep.worst) + " over 50 cases (max |logit| " +
                                              fmt(sweep.max_abs_logit) + "), " + fmt(t, 3) + " s"};
}

Verdict criterion_2() {
  const auto start = Clock::now();
  const head::CampModel model(desk_model_config(), 102);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> length(2, 32);
  const auto d = model.config().d_model();
  double worst = 0.0;
  for (int c = 0; c < 50; ++c) {
    const auto L = length(rng);
    const auto x = camp::testing::random_tensor(L, d, rng);
    const auto perm = non_identity_permutation(L, rng);
    auto px = tensor::Tensor::zeros(L, d);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < d; ++j) px(i, j) = x(perm[i], j);
    }
    const auto y = transformer::encoder_forward(model.encoder(), x, false).output;
    const auto py = transformer::encoder_forward(model.encoder(), px, false).output;
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::abs(py(i, j) - y(perm[i], j)));
    }
  }
  const double t = seconds_since(start);
  return {worst < 1e-6 && t < 60.0, "max |f(pi x) - pi f(x)| " + fmt(worst) + " over 50 cases, L in [2, 32], " +
                                        fmt(t, 3) + " s"};
}

// At the 0.02 initialisation attention is nearly uniform, which averages the
// positional signal away (logit changes around 1e-6). A short training run
// makes attention position-sensitive; the at-initialisation count is reported
// alongside.
Verdict criterion_3() {
  auto cfg = desk_model_config();
  cfg.encoder.use_positional = true;
  const head::CampModel fresh(cfg, 103);
  const auto at_init = permutation_sweep(fresh, 50, 3);

  data::SyntheticConfig sc;
  data::Rng rng(30);
  const auto split = data::split_tasks(data::make_synthetic_tasks(sc, rng), {10.0 / 14, 2.0 / 14, 2.0 / 14}, rng);
  auto tc = train::TrainConfig::desk();
  tc.max_epochs = 1;
  tc.batches_per_epoch = 20;
  tc.valid_episodes = 8;
  tc.support_sizes = {4, 8};
  tc.seed = 103;
  const auto trained = train::run_training(split.train, split.valid, cfg, tc).last;
  const auto sweep = permutation_sweep(trained, 50, 3);
  return {sweep.changed >= 45,
          std::to_string(sweep.changed) + " of 50 permutations change the logits by > 1e-6 after 20 training steps "
                                          "(largest " + fmt(sweep.worst) + "); " + std::to_string(at_init.changed) +
              " of 50 at initialisation (largest " + fmt(at_init.worst) + ")"};
}

Verdict criterion_4() {
  using camp::testing::gradient_check;
  using camp::testing::random_tensor;
  using camp::testing::ScalarFn;
  using tensor::Tape;
  using tensor::Var;
  std::mt19937_64 rng(4);
  auto project = [](Tape& t, Var out, std::uint64_t seed) {
    std::mt19937_64 r(seed);
    return tensor::sum(tensor::matmul(out, t.constant(random_tensor(out.cols(), 1, r))));
  };
  const std::vector<std::size_t> idx{2, 0, 2, 1};
  const std::vector<std::size_t> offsets{0, 2, 5, 6};
  const std::vector<int> labels{1, 0, 1};
  const tensor::Tensor gain = random_tensor(1, 8, rng);

  struct Check {
    std::string name;
    ScalarFn fn;
    std::vector<tensor::Tensor> inputs;
    camp::testing::TapeMode mode{};
  };
  std::vector<Check> checks{
      {"matmul", [&](Tape& t, std::vector<Var>& v) { return project(t, tensor::matmul(v[0], v[1]), 1); },
       {random_tensor(3, 4, rng), random_tensor(4, 5, rng)}},
      {"add", [&](Tape& t, std::vector<Var>& v) { return project(t, tensor::add(v[0], v[1]), 2); },
       {random_tensor(3, 4, rng), random_tensor(3, 4, rng)}},
      {"add_bias", [&](Tape& t, std::vector<Var>& v) { return project(t, tensor::add_bias(v[0], v[1]), 3); },
       {random_tensor(3, 4, rng), random_tensor(1, 4, rng)}},
      {"linear", [&](Tape& t, std::vector<Var>& v) { return project(t, tensor::linear(v[0], v[1], v[2]), 4); },
       {random_tensor(3, 4, rng), random_tensor(4, 5, rng), random_tensor(1, 5, rng)}},
      {"scale", [&](Tape& t, std::vector<Var>& v) { return project(t, tensor::scale(v[0], -1.7), 5); },
       {random_tensor(3, 4, rng)}},
      {"gelu", [&](Tape& t, std::vector<Var>& v) { return project(t, tensor::gelu(v[0]), 6); },
       {random_tensor(3, 5, rng, 2.0)}},
      {"layer_norm",
       [&](Tape& t, std::vector<Var>& v) { return project(t, tensor::layer_norm(v[0], v[1], v[2]), 7); },
       {random_tensor(3, 8, rng), gain, random_tensor(1, 8, rng)}},
      {"softmax_rows", [&](Tape& t, std::vector<Var>& v) { return project(t, tensor::softmax_rows(v[0]), 8); },
       {random_tensor(4, 6, rng)}},
      {"concat_cols/concat_rows",
       [&](Tape& t, std::vector<Var>& v) {
         std::vector<Var> parts{tensor::concat_cols(v[0], v[1]), v[2]};
         return project(t, tensor::concat_rows(parts), 9);
       },
       {random_tensor(2, 3, rng), random_tensor(2, 2, rng), random_tensor(3, 5, rng)}},
      {"gather_rows/scatter_add_rows",
       [&](Tape& t, std::vector<Var>& v) {
         return project(t, tensor::gelu(tensor::scatter_add_rows(tensor::gather_rows(v[0], idx), idx, 3)), 10);
       },
       {random_tensor(3, 4, rng)}},
      {"segment_mean/segment_sum",
       [&](Tape& t, std::vector<Var>& v) {
         return tensor::add(project(t, tensor::segment_mean(v[0], offsets), 11),
                            project(t, tensor::segment_sum(v[0], offsets), 12));
       },
       {random_tensor(6, 3, rng)}},
      {"sum/mean", [&](Tape&, std::vector<Var>& v) { return tensor::add(tensor::sum(tensor::gelu(v[0])),
                                                                         tensor::mean(tensor::gelu(v[0]))); },
       {random_tensor(4, 3, rng)}},
      {"cross_entropy", [&](Tape&, std::vector<Var>& v) { return tensor::cross_entropy(v[0], labels); },
       {random_tensor(3, 2, rng, 2.0)}},
      {"dropout", [&](Tape& t, std::vector<Var>& v) { return project(t, tensor::dropout(v[0], 0.3), 13); },
       {random_tensor(4, 5, rng)}, {true, 77}},
      {"multi_head_attention",
       [&](Tape& t, std::vector<Var>& v) {
         return project(t, tensor::multi_head_attention(v[0], v[1], v[2], 3, 2, 0.0), 14);
       },
       {random_tensor(6, 4, rng), random_tensor(6, 4, rng), random_tensor(6, 4, rng)}},
      {"multi_head_attention with dropout",
       [&](Tape& t, std::vector<Var>& v) {
         return project(t, tensor::multi_head_attention(v[0], v[1], v[2], 3, 2, 0.25), 15);
       },
       {random_tensor(6, 4, rng), random_tensor(6, 4, rng), random_tensor(6, 4, rng)}, {true, 78}},
  };

  double worst = 0.0;
  std::string worst_name;
  for (auto& c : checks) {
    const double err = gradient_check(c.fn, c.inputs, 1e-5, c.mode);
    if (err > worst) {
      worst = err;
      worst_name = c.name;
    }
  }

  // End to end: episode loss of a d_model = 32 model, every parameter tensor
  // sampled, in eval mode and with fixed dropout masks.
  auto cfg = camp::testing::tiny_model_config();
  head::CampModel model(cfg, 44);
  camp::testing::spread_parameters(model.parameters(), 4);
  const auto tasks = camp::testing::synthetic_tasks(2, 24, 4, cfg.atom_feature_dim);
  data::Rng erng(4);
  std::vector<data::Episode> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(data::sample_episode(tasks.tasks[static_cast<std::size_t>(i % 2)], 4, erng));
  std::vector<int> targets;
  for (const auto& e : batch) targets.push_back(e.query->label);
  double e2e = 0.0;
  std::size_t sampled = 0;
  for (const bool training : {false, true}) {
    auto loss = [&](bool backward) {
      Tape tape(training, 99);
      const auto fwd = model.forward(tape, batch, backward);
      auto l = tensor::cross_entropy(fwd.logits, targets);
      if (backward) tape.backward(l);
      return l.value()[0];
    };
    model.parameters().clear_grad();
    for (auto& e : model.parameters()) e.value.ensure_grad();
    loss(true);
    std::mt19937_64 pick(training ? 6 : 5);
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (auto& entry : model.parameters()) {
      auto values = entry.value.data();
      const auto grad = entry.value.grad();
      for (int s = 0; s < 4; ++s) {
        const auto i = pick() % values.size();
        const double saved = values[i];
        values[i] = saved + 1e-5;
        const double up = loss(false);
        values[i] = saved - 1e-5;
        const double down = loss(false);
        values[i] = saved;
        const double fd = (up - down) / 2e-5;
        diff += (fd - grad[i]) * (fd - grad[i]);
        na += grad[i] * grad[i];
        nf += fd * fd;
        ++sampled;
      }
    }
    e2e = std::max(e2e, std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nf), 1e-12}));
  }
  return {worst < 1e-4 && e2e < 1e-4, std::to_string(checks.size()) + " primitive checks, worst " + fmt(worst) +
                                          " (" + worst_name + "); end-to-end " + fmt(e2e) + " over " +
                                          std::to_string(sampled) + " sampled parameters"};
}

// Step-wise area under the precision-recall curve from every distinct
// threshold, highest first.
double threshold_sweep(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  const double n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  double area = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) (labels[i] ? tp : fp) += 1;
    }
    const double recall = tp / n_pos;
    area += (recall - prev_recall) * tp / (tp + fp);
    prev_recall = recall;
  }
  return area;
}

Verdict criterion_5() {
  const std::vector<double> scores{0.9, 0.8, 0.7, 0.1};
  const std::vector<int> labels{1, 0, 1, 0};
  const double ap = eval::auprc(scores, labels);
  const double oracle = threshold_sweep(scores, labels);
  bool ok = std::abs(ap - 5.0 / 6.0) < 1e-12 && std::abs(ap - oracle) < 1e-12;

  std::mt19937_64 rng(5);
  int exact = 0;
  for (int c = 0; c < 20; ++c) {
    std::vector<int> y(7 + c);
    std::bernoulli_distribution coin(0.3);
    for (auto& v : y) v = coin(rng);
    y[0] = 1;
    std::vector<double> perfect(y.begin(), y.end());
    exact += eval::delta_auprc(perfect, y) == 1.0 - eval::positive_fraction(y);
  }
  ok = ok && exact == 20;
  return {ok, "auprc " + fmt(ap, 17) + " vs oracle " + fmt(oracle, 17) + "; perfect-classifier identity exact in " +
                  std::to_string(exact) + " of 20 label vectors"};
}

// The reference setting: 256 pools of 16 support molecules, 4096 support
// slots, each pool expanding to 17 episodes.
constexpr std::size_t loo_episodes(std::size_t pools, std::size_t support) { return pools * (support + 1); }
static_assert(256 * 16 == 4096);
static_assert(loo_episodes(256, 16) == 256 * 17);
static_assert(loo_episodes(16, 16) == 272);

Verdict criterion_6() {
  const auto tasks = camp::testing::synthetic_tasks(3, 40, 6);
  data::Rng rng(6);
  const auto batch = train::make_batch(tasks, 16, 16, rng);
  bool ok = batch.episodes.size() == loo_episodes(16, 16) && batch.n_pools == 16;
  for (std::size_t p = 0; ok && p < 16; ++p) {
    std::set<const data::LabeledMolecule*> pool, queries;
    for (std::size_t e = 0; e < 17; ++e) {
      const auto& ep = batch.episodes[p * 17 + e];
      std::set<const data::LabeledMolecule*> members{ep.query.get()};
      for (const auto& m : ep.support) members.insert(m.get());
      ok = ok && members.size() == 17 && ep.support_size() == 16;
      if (e == 0) pool = members;
      ok = ok && members == pool;
      queries.insert(ep.query.get());
    }
    ok = ok && queries == pool;
  }
  return {ok, std::to_string(batch.episodes.size()) + " episodes for 16 pools of 17; every pool member is the query "
                                                      "once; 16 x 256 = 4096 asserted at compile time"};
}

// Shared desk run.
struct DeskRun {
  fs::path data, dir;
  cli::Settings settings;
  data::TaskSplit split;
  std::optional<head::CampModel> trained, untrained;
  double train_seconds = 0.0;
  std::string error;
};

fs::path g_work;

void prepare_desk(DeskRun& d, const fs::path& work);

// Trained on first use.
DeskRun& desk() {
  static DeskRun run;
  static bool ready = false;
  if (!ready) {
    ready = true;
    prepare_desk(run, g_work);
  }
  return run;
}

void prepare_desk(DeskRun& d, const fs::path& work) {
  d.data = work / "desk" / "tasks.jsonl";
  d.dir = work / "desk" / "run";
  fs::remove_all(work / "desk");
  try {
    const auto start = Clock::now();
    cli_or_throw({"synth-data", "--out", d.data.string(), "--seed", "11"});
    std::cerr << "acceptance: training the desk model (d_model 128, 4 layers)\n";
    cli_or_throw({"train", "--data", d.data.string(), "--out", d.dir.string(), "--seed", "0", "--threads", "1",
                  "--profile", "desk"});
    d.train_seconds = seconds_since(start);
    const auto values = cli::read_config_file(d.dir / "config.cfg");
    d.settings = cli::Settings::defaults(values.at("profile"));
    cli::apply_config(d.settings, values);
    const auto tasks = data::load_tasks(d.data);
    data::Rng split_rng(d.settings.split_seed);
    d.split = data::split_tasks(tasks, d.settings.split, split_rng);
    d.trained.emplace(d.settings.model, train::derive_seed(d.settings.seed, {1}));
    d.untrained.emplace(*d.trained);
    tensor::load_checkpoint_into(d.trained->parameters(), d.dir / "best.ckpt");
  } catch (const std::exception& e) {
    d.error = e.what();
  }
}

Verdict criterion_7() {
  auto& d = desk();
  if (!d.trained) return {false, "desk run failed: " + d.error};
  const auto start = Clock::now();
  const auto history = read_csv(d.dir / "history.csv");
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  for (const auto& row : history) {
    const auto epoch = std::stoul(row.at(0));
    const double valid = std::stod(row.at(2));
    if (epoch <= 20 && valid < best) {
      best = valid;
      best_epoch = epoch;
    }
  }
  const std::vector<std::size_t> sizes{8};
  const auto trained = eval::evaluate_sweep(*d.trained, d.split.test, sizes, 5, 0, 1);
  const auto untrained = eval::evaluate_sweep(*d.untrained, d.split.test, sizes, 5, 0, 1);
  const double gain = trained.at_size(8).mean_delta - untrained.at_size(8).mean_delta;
  const double total = d.train_seconds + seconds_since(start);
  const bool shape = d.split.train.size() == 10 && d.split.valid.size() == 2 && d.split.test.size() == 2 &&
                     d.settings.model.encoder.d_model == 128 && d.settings.model.encoder.n_layers == 4;
  return {shape && best < 0.45 && gain >= 0.2 && total < 900.0,
          "best validation CE " + fmt(best) + " at epoch " + std::to_string(best_epoch) + "; test dAUPRC@8 " +
              fmt(trained.at_size(8).mean_delta) + " vs untrained " + fmt(untrained.at_size(8).mean_delta) +
              " (gain " + fmt(gain) + "); " + fmt(total, 4) + " s"};
}

Verdict criterion_8() {
  auto& d = desk();
  if (!d.trained) return {false, "desk run failed: " + d.error};
  const std::vector<std::size_t> sizes{4, 16};
  const auto r = eval::evaluate_sweep(*d.trained, d.split.test, sizes, 5, 0, 1);
  const double at4 = r.at_size(4).mean_delta, at16 = r.at_size(16).mean_delta;
  return {at16 >= at4 - 0.02, "mean dAUPRC " + fmt(at4) + " at |s|=4, " + fmt(at16) + " at |s|=16 (5 seeds)"};
}

Verdict criterion_9() {
  auto& d = desk();
  if (!d.trained) return {false, "desk run failed: " + d.error};
  const auto& model = *d.trained;
  const auto mol_width = model.config().molecule_width();
  data::Rng rng(9);
  int exceeded = 0;
  bool rows_ok = true;
  for (int e = 0; e < 10; ++e) {
    const auto& task = d.split.test.tasks[static_cast<std::size_t>(e) % d.split.test.size()];
    const auto ep = data::sample_episode(task, 8, rng);
    const std::size_t row = 1 + static_cast<std::size_t>(e) % 8;
    const auto report = analysis::label_flip(model, ep, row);
    const auto& a = report.before.pre.rows;
    const auto& b = report.after.pre.rows;
    for (std::size_t i = 0; i < a.rows(); ++i) {
      bool mol_same = true, label_same = true;
      for (std::size_t j = 0; j < a.cols(); ++j) {
        (j < mol_width ? mol_same : label_same) &= a(i, j) == b(i, j);
      }
      rows_ok = rows_ok && mol_same && (i == row ? !label_same : label_same);
    }
    exceeded += analysis::post_displacement(report).exceeds_median();
  }
  return {rows_ok && exceeded >= 8,
          std::string("pre-encoder rows ") + (rows_ok ? "identical except the flipped label" : "DIFFER") +
              "; flipped row moved more than the median other row in " + std::to_string(exceeded) + " of 10"};
}

Verdict criterion_10(const fs::path& work) {
  const auto root = work / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto data = (root / "tasks.jsonl").string();
  cli_or_throw({"synth-data", "--out", data, "--seed", "10"});
  for (const auto* dir : {"a", "b"}) {
    cli_or_throw({"train", "--data", data, "--out", (root / dir).string(), "--seed", "5", "--threads", "1", "--set",
                  "train.max_epochs=3", "--set", "train.batches_per_epoch=10"});
  }
  bool same = true;
  for (const auto* name : {"history.csv", "best.ckpt", "last.ckpt"}) {
    same = same && slurp(root / "a" / name) == slurp(root / "b" / name);
  }
  return {same, std::string("history.csv, best.ckpt and last.ckpt ") + (same ? "byte-identical" : "DIFFER") +
                    " across two desk-model runs (3 epochs x 10 batches)"};
}

Verdict criterion_11(const fs::path& work) {
  auto& d = desk();
  if (!d.trained) return {false, "desk run failed: " + d.error};
  const auto out = work / "latency";
  cli_or_throw({"bench-latency", "--data", d.data.string(), "--checkpoint", d.dir.string(), "--support-sizes",
                "4,8,16,32", "--repeats", "10", "--out", out.string()});
  const auto rows = read_csv(out / "latency.csv");
  std::vector<double> per_episode;
  for (const auto& r : rows) per_episode.push_back(std::stod(r.at(6)));
  bool monotone = per_episode.size() == 4;
  std::string detail = "median us/episode:";
  for (std::size_t i = 0; i < per_episode.size(); ++i) {
    detail += " " + fmt(per_episode[i]);
    if (i) monotone = monotone && per_episode[i] > per_episode[i - 1];
  }
  return {monotone, detail + " for |s| = 4, 8, 16, 32"};
}

Verdict criterion_12(const fs::path& work) {
  const auto root = work / "ablate";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto data = (root / "tasks.jsonl").string();
  cli_or_throw({"synth-data", "--out", data, "--seed", "12"});
  // Desk width on purpose: at d_model 32 and 40 steps the head is still near
  // its init, logits are ~0.02 and some position shifts fall under 1e-6.
  cli_or_throw({"ablate", "--data", data, "--out", (root / "out").string(), "--seed", "1", "--variant", "positional",
                "--variant", "naive-icl", "--set", "train.max_epochs=4", "--set", "train.batches_per_epoch=10"});
  std::set<std::string> variants;
  for (const auto& r : read_csv(root / "out" / "curves.csv")) variants.insert(r.at(0));
  const auto report = slurp(root / "out" / "report.txt");
  const bool curves = variants.count("camp") && variants.count("positional") && fs::exists(root / "out" / "curves.svg");
  const bool verified = report.find("invariance difference verified: yes") != std::string::npos;
  return {curves && verified, std::string("curves for ") + std::to_string(variants.size()) +
                                  " variants; report " + (verified ? "verifies" : "does NOT verify") +
                                  " the invariance difference"};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "camp_acceptance";
  fs::create_directories(work);
  g_work = work;
  std::set<int> only;
  if (argc > 2) {
    std::stringstream ids(argv[2]);
    std::string id;
    while (std::getline(ids, id, ',')) only.insert(std::stoi(id));
  }

  std::vector<std::pair<int, std::function<Verdict()>>> criteria{
      {1, criterion_1},
      {2, criterion_2},
      {3, criterion_3},
      {4, criterion_4},
      {5, criterion_5},
      {6, criterion_6},
      {7, criterion_7},
      {8, criterion_8},
      {9, criterion_9},
      {10, [&] { return criterion_10(work); }},
      {11, [&] { return criterion_11(work); }},
      {12, [&] { return criterion_12(work); }},
  };

  int failures = 0;
  int ran = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    ++ran;
    const auto start = Clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << "criterion " << std::setw(2) << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << "  ["
              << fmt(seconds_since(start), 3) << " s]" << std::endl;
  }
  std::cout << (ran - failures) << " of " << ran << " criteria pass" << std::endl;
  return std::min(failures, 100);
}
