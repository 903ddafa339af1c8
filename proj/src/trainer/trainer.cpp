#include "camp/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>

#include <Eigen/Dense>

#include "camp/error.hpp"
#include "camp/parallel.hpp"
#include "camp/tensorcore/ops.hpp"

namespace camp::train {

using head::CampModel;

TrainConfig TrainConfig::desk() {
  // 5e-5 leaves a d128 model on the chance plateau for all 20 epochs; the
  // rebalanced sizes keep the larger supports from starving the small ones.
  TrainConfig c;
  c.base_lr = 5e-4;
  c.rebalance = true;
  return c;
}

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.support_sizes = {16, 32, 64, 128, 256};
  c.batch_size = 256;
  c.max_epochs = 1000;
  c.warmup_steps = 2000;
  c.dropout_rate = 0.2;
  c.label_flip_prob = 0.0;
  c.rotate_features = false;
  return c;
}

void TrainConfig::validate() const {
  if (support_sizes.empty()) throw InvalidArgument("support_sizes must not be empty");
  for (auto s : support_sizes) {
    if (s == 0) throw InvalidArgument("support sizes must be positive");
  }
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (max_epochs == 0) throw InvalidArgument("max_epochs must be positive");
  if (early_stop_window == 0) throw InvalidArgument("early_stop_window must be at least 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw InvalidArgument("base_lr must be positive");
  if (warmup_steps == 0) throw InvalidArgument("warmup_steps must be positive");
  if (!(grad_clip_norm > 0.0)) throw InvalidArgument("grad_clip_norm must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("dropout_rate must lie in [0, 1)");
  if (batches_per_epoch == 0) throw InvalidArgument("batches_per_epoch must be positive");
  if (valid_episodes == 0) throw InvalidArgument("valid_episodes must be positive");
  if (!(label_flip_prob >= 0.0 && label_flip_prob <= 1.0)) throw InvalidArgument("label_flip_prob must lie in [0, 1]");
  if (threads == 0) throw InvalidArgument("threads must be positive");
}

tensor::AdamConfig TrainConfig::adam() const {
  tensor::AdamConfig a;
  a.base_lr = base_lr;
  a.warmup_steps = warmup_steps;
  return a;
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> indices) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32)};
  for (auto i : indices) {
    words.push_back(static_cast<std::uint32_t>(i));
    words.push_back(static_cast<std::uint32_t>(i >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(std::begin(out), std::end(out));
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

namespace {

std::vector<const data::PropertyTask*> tasks_of_size(const data::TaskSet& set, std::size_t min_size) {
  std::vector<const data::PropertyTask*> out;
  for (const auto& t : set.tasks) {
    if (t.size() >= min_size) out.push_back(&t);
  }
  return out;
}

void rotate_atoms(data::AtomGraph& graph, const std::vector<double>& rot) {
  const auto f = static_cast<Eigen::Index>(graph.feature_dim);
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<Mat> atoms(graph.features.data(), static_cast<Eigen::Index>(graph.n_atoms()), f);
  const Eigen::Map<const Mat> r(rot.data(), f, f);
  atoms = (atoms * r.transpose()).eval();
}

std::vector<int> query_labels(std::span<const data::Episode> episodes) {
  std::vector<int> labels;
  labels.reserve(episodes.size());
  for (const auto& e : episodes) labels.push_back(e.query->label);
  return labels;
}

}  // namespace

std::vector<double> random_orthogonal(std::size_t n, data::Rng& rng) {
  if (n == 0) throw InvalidArgument("rotation size must be positive");
  std::normal_distribution<double> normal;
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Fix column signs by diag(R) so the draw is Haar rather than QR-biased.
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  std::vector<double> out(n * n);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.data(), n, n) = q;
  return out;
}

Batch make_batch(const data::TaskSet& train, std::size_t support_size, std::size_t batch_size, data::Rng& rng,
                 const PoolAugment& augment) {
  const auto eligible = tasks_of_size(train, support_size + 1);
  if (eligible.empty()) {
    throw InvalidArgument("no training task has " + std::to_string(support_size + 1) + " molecules");
  }
  Batch batch;
  batch.support_size = support_size;
  batch.n_pools = batch_size;
  batch.episodes.reserve(batch_size * (support_size + 1));
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
  for (std::size_t p = 0; p < batch_size; ++p) {
    const auto& task = *eligible[pick(rng)];
    std::vector<data::MoleculePtr> drawn;
    if (task.size() == support_size + 1) {
      drawn = task.molecules;
      std::shuffle(drawn.begin(), drawn.end(), rng);
    } else {
      drawn = data::sample_support(task, support_size + 1, rng).support;
    }
    const bool flip = augment.label_flip_prob > 0.0 && std::bernoulli_distribution(augment.label_flip_prob)(rng);
    if (flip || augment.rotate_features) {
      std::vector<double> rot;
      if (augment.rotate_features) rot = random_orthogonal(train.atom_feature_dim, rng);
      for (auto& m : drawn) {
        auto copy = std::make_shared<data::LabeledMolecule>(*m);
        if (flip) copy->label = 1 - copy->label;
        if (!rot.empty()) rotate_atoms(copy->graph, rot);
        m = std::move(copy);
      }
    }
    auto episodes = data::expand_leave_one_out(drawn);
    std::move(episodes.begin(), episodes.end(), std::back_inserter(batch.episodes));
  }
  return batch;
}

BatchSampler::BatchSampler(const data::TaskSet& train, const TrainConfig& config, std::uint64_t seed)
    : train_(train),
      batch_size_(config.batch_size),
      augment_{config.label_flip_prob, config.rotate_features},
      rng_(seed) {
  config.validate();
  for (auto s : config.support_sizes) {
    if (!tasks_of_size(train, s + 1).empty()) {
      sizes_.push_back(s);
      weights_.push_back(config.rebalance ? 1.0 / static_cast<double>(s + 1) : 1.0);
    }
  }
  if (sizes_.empty()) throw InvalidArgument("no training task is large enough for any configured support size");
}

Batch BatchSampler::next() {
  std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
  const auto s = sizes_[pick(rng_)];
  return make_batch(train_, s, batch_size_, rng_, augment_);
}

std::vector<CampModel>& Workers::replicas(const CampModel& model) {
  const auto want = threads_ - 1;
  if (replicas_.size() != want) {
    replicas_.clear();
    replicas_.reserve(want);
    for (std::size_t i = 0; i < want; ++i) replicas_.push_back(model);
  } else {
    for (auto& r : replicas_) r.parameters().assign_values(model.parameters());
  }
  return replicas_;
}

StepResult train_step(const Batch& batch, CampModel& model, tensor::OptimizerState& opt, const TrainConfig& config,
                      std::uint64_t dropout_seed, Workers* workers) {
  if (batch.episodes.empty()) throw InvalidArgument("train_step on an empty batch");
  const std::size_t n = batch.episodes.size();
  const std::size_t n_chunks = std::min(workers ? workers->threads() : 1, n);
  std::vector<CampModel*> models{&model};
  if (n_chunks > 1) {
    auto& reps = workers->replicas(model);
    for (std::size_t i = 0; i + 1 < n_chunks; ++i) models.push_back(&reps[i]);
  }
  for (auto* m : models) {
    for (auto& e : m->parameters()) e.value.ensure_grad();
    m->parameters().zero_grad();
  }

  std::vector<double> chunk_loss(n_chunks, 0.0);
  const double norm = 1.0 / static_cast<double>(config.batch_size);
  const std::span<const data::Episode> all(batch.episodes);
  try {
    run_parallel(n_chunks, [&](std::size_t c) {
      const auto lo = c * n / n_chunks;
      const auto hi = (c + 1) * n / n_chunks;
      const auto part = all.subspan(lo, hi - lo);
      tensor::Tape tape(true, derive_seed(dropout_seed, {c}));
      const auto fwd = models[c]->forward(tape, part, true);
      const auto labels = query_labels(part);
      auto loss = tensor::scale(tensor::cross_entropy(fwd.logits, labels), norm);
      chunk_loss[c] = loss.value()[0];
      tape.backward(loss);
    });
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(e.what()) + " (batch: support size " + std::to_string(batch.support_size) +
                         ", " + std::to_string(n) + " episodes, step " + std::to_string(opt.step()) + ")");
  }

  auto& params = model.parameters();
  for (std::size_t c = 1; c < n_chunks; ++c) {
    auto it = models[c]->parameters().begin();
    for (auto& e : params) {
      auto dst = e.value.grad();
      const auto src = it->value.grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      ++it;
    }
  }

  StepResult r;
  for (double l : chunk_loss) r.loss += l;
  if (!std::isfinite(r.loss)) {
    throw NumericalError("non-finite loss at step " + std::to_string(opt.step()) + " (support size " +
                         std::to_string(batch.support_size) + ")");
  }
  r.grad_norm = tensor::global_grad_norm(params);
  tensor::clip_global_norm(params, config.grad_clip_norm);
  r.lr = tensor::lr_at_step(opt);
  tensor::adam_step(params, opt);
  params.zero_grad();
  return r;
}

double validate(const CampModel& model, const data::TaskSet& valid, std::size_t support_size,
                std::size_t n_episodes, std::uint64_t seed, std::size_t threads) {
  const auto eligible = tasks_of_size(valid, support_size + 1);
  if (eligible.empty()) {
    throw InvalidArgument("no validation task has " + std::to_string(support_size + 1) + " molecules");
  }
  if (n_episodes == 0) throw InvalidArgument("validate needs at least one episode");
  data::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
  std::vector<data::Episode> episodes;
  episodes.reserve(n_episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) episodes.push_back(data::sample_episode(*eligible[pick(rng)], support_size, rng));

  const auto n_chunks = std::min(std::max<std::size_t>(threads, 1), n_episodes);
  std::vector<head::Prediction> preds(n_episodes);
  run_parallel(n_chunks, [&](std::size_t c) {
    const auto lo = c * n_episodes / n_chunks;
    const auto hi = (c + 1) * n_episodes / n_chunks;
    const auto part = head::predict_batch(std::span(episodes).subspan(lo, hi - lo), model);
    std::copy(part.begin(), part.end(), preds.begin() + static_cast<std::ptrdiff_t>(lo));
  });
  double total = 0.0;
  for (std::size_t i = 0; i < n_episodes; ++i) total += head::episode_loss(preds[i], episodes[i].query->label);
  return total / static_cast<double>(n_episodes);
}

double validation_loss(const CampModel& model, const data::TaskSet& valid, const TrainConfig& config,
                       std::size_t epoch) {
  double total = 0.0;
  std::size_t used = 0;
  for (auto s : config.support_sizes) {
    if (tasks_of_size(valid, s + 1).empty()) continue;
    total += validate(model, valid, s, config.valid_episodes, derive_seed(config.seed, {0x7a11d, epoch, s}),
                      config.threads);
    ++used;
  }
  if (used == 0) throw InvalidArgument("no validation task is large enough for any configured support size");
  return total / static_cast<double>(used);
}

EarlyStopper::EarlyStopper(std::size_t window) : window_(window), best_(std::numeric_limits<double>::infinity()) {
  if (window == 0) throw InvalidArgument("early stopping window must be at least 1");
}

bool EarlyStopper::update(double loss) {
  ++seen_;
  if (loss < best_) {
    best_ = loss;
    best_epoch_ = seen_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

void write_history_csv(const TrainHistory& history, std::ostream& out) {
  out << "epoch,train_loss,valid_loss,steps,best\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : history.epochs) {
    out << r.epoch << ',' << r.train_loss << ',' << r.valid_loss << ',' << r.steps << ','
        << (r.epoch == history.best_epoch ? 1 : 0) << '\n';
  }
}

void write_timing_csv(const TrainHistory& history, std::ostream& out) {
  out << "epoch,seconds\n" << std::fixed << std::setprecision(3);
  for (const auto& r : history.epochs) out << r.epoch << ',' << r.seconds << '\n';
}

TrainResult run_training(const data::TaskSet& train, const data::TaskSet& valid, head::ModelConfig model_config,
                         const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (train.empty() || valid.empty()) throw InvalidArgument("training needs non-empty train and valid task sets");
  for (const auto& t : train.tasks) {
    for (const auto& v : valid.tasks) {
      if (t.task_id == v.task_id) throw InvalidArgument("task " + t.task_id + " is in both train and valid");
    }
  }
  model_config.encoder.dropout_rate = config.dropout_rate;
  CampModel model(model_config, derive_seed(config.seed, {1}));
  tensor::OptimizerState opt(model.parameters(), config.adam());
  BatchSampler sampler(train, config, derive_seed(config.seed, {2}));
  Workers workers(config.threads);
  EarlyStopper stopper(config.early_stop_window);

  TrainResult result{model, model, {}};
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < config.batches_per_epoch; ++b) {
      const auto batch = sampler.next();
      const auto seed = derive_seed(config.seed, {3, opt.step()});
      const auto step = train_step(batch, model, opt, config, seed, &workers);
      // per query, comparable with the validation loss
      loss_sum += step.loss * static_cast<double>(config.batch_size) / static_cast<double>(batch.episodes.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(config.batches_per_epoch);
    rec.valid_loss = validation_loss(model, valid, config, epoch);
    rec.steps = opt.step();
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(rec.valid_loss)) throw NumericalError("validation loss is not finite at epoch " + std::to_string(epoch));
    if (stopper.update(rec.valid_loss)) {
      result.best.parameters().assign_values(model.parameters());
      result.history.best_epoch = epoch;
    }
    result.history.epochs.push_back(rec);
    if (hooks.progress) {
      *hooks.progress << "epoch " << epoch << " train " << std::fixed << std::setprecision(4) << rec.train_loss
                      << " valid " << rec.valid_loss << " lr " << std::scientific << std::setprecision(2)
                      << tensor::lr_at_step(opt) << std::defaultfloat << " (" << std::setprecision(3) << rec.seconds
                      << "s)" << std::endl;
    }
    if (hooks.on_epoch) hooks.on_epoch(rec, model);
    if (stopper.should_stop()) {
      result.history.stopped_early = true;
      break;
    }
  }
  result.last.parameters().assign_values(model.parameters());
  return result;
}

}  // namespace camp::train
