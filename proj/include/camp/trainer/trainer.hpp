#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "camp/camphead/model.hpp"
#include "camp/moldata/moldata.hpp"
#include "camp/tensorcore/optim.hpp"

namespace camp::train {

struct TrainConfig {
  std::vector<std::size_t> support_sizes{4, 8, 16};
  std::size_t batch_size = 8;
  std::size_t max_epochs = 20;
  std::size_t early_stop_window = 10;
  double base_lr = 5e-5;
  std::uint64_t warmup_steps = 100;
  double grad_clip_norm = 1.0;
  double dropout_rate = 0.1;
  std::uint64_t seed = 0;
  // Episodic sampling has no natural pass over the data.
  std::size_t batches_per_epoch = 100;
  // Validation episodes per support size and epoch.
  std::size_t valid_episodes = 64;
  // Pick sizes with probability proportional to 1/(|s|+1) instead of uniformly.
  bool rebalance = false;
  // Pool augmentations (training only). With a handful of tasks the model can
  // memorise every motif; flipping all labels of a pool and rotating its atom
  // feature space leave the support-to-query relation as the only usable cue.
  double label_flip_prob = 0.5;
  bool rotate_features = true;
  std::size_t threads = 1;

  static TrainConfig desk();
  static TrainConfig paper();
  void validate() const;
  tensor::AdamConfig adam() const;
};

// Mixes a base seed with stream indices (epoch, step, ...) into an independent seed.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> indices);

struct Batch {
  std::size_t support_size = 0;
  std::size_t n_pools = 0;
  std::vector<data::Episode> episodes;
};

struct PoolAugment {
  double label_flip_prob = 0.0;
  // Apply one Haar-random orthogonal map to all atom features of the pool.
  bool rotate_features = false;
};

// Builds one leave-one-out batch at a fixed support size: batch_size pools of
// |s|+1 molecules, each drawn from a task chosen uniformly among those with at
// least |s|+1 molecules.
Batch make_batch(const data::TaskSet& train, std::size_t support_size, std::size_t batch_size, data::Rng& rng,
                 const PoolAugment& augment = {});

// Orthogonal n x n matrix (row-major) drawn uniformly from O(n).
std::vector<double> random_orthogonal(std::size_t n, data::Rng& rng);

// Endless stream of batches; each picks its support size from the config.
class BatchSampler {
 public:
  BatchSampler(const data::TaskSet& train, const TrainConfig& config, std::uint64_t seed);
  Batch next();
  // Sizes for which at least one task is large enough.
  const std::vector<std::size_t>& feasible_sizes() const { return sizes_; }

 private:
  const data::TaskSet& train_;
  std::size_t batch_size_;
  PoolAugment augment_;
  std::vector<std::size_t> sizes_;
  std::vector<double> weights_;
  data::Rng rng_;
};

// Gradient workers for train_step. Replicas are refreshed from the main model
// at every step; with one thread the main model does all the work.
class Workers {
 public:
  explicit Workers(std::size_t threads = 1) : threads_(threads ? threads : 1) {}
  std::size_t threads() const { return threads_; }
  std::vector<head::CampModel>& replicas(const head::CampModel& model);

 private:
  std::size_t threads_;
  std::vector<head::CampModel> replicas_;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

// loss = sum of episode cross entropies / batch_size; backward, clip, Adam,
// clear gradients. `dropout_seed` fixes the dropout masks of this step.
StepResult train_step(const Batch& batch, head::CampModel& model, tensor::OptimizerState& opt,
                      const TrainConfig& config, std::uint64_t dropout_seed, Workers* workers = nullptr);

// Mean query cross entropy over n_episodes eval-mode episodes drawn with `seed`.
double validate(const head::CampModel& model, const data::TaskSet& valid, std::size_t support_size,
                std::size_t n_episodes, std::uint64_t seed, std::size_t threads = 1);

// Mean of validate() over the configured support sizes that valid can serve.
double validation_loss(const head::CampModel& model, const data::TaskSet& valid, const TrainConfig& config,
                       std::size_t epoch);

// Stops after `window` consecutive epochs without a strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t window);
  // Returns true when `loss` is a new best.
  bool update(double loss);
  bool should_stop() const { return since_best_ >= window_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  std::size_t window_;
  std::size_t seen_ = 0;
  std::size_t since_best_ = 0;
  std::size_t best_epoch_ = 0;
  double best_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean cross entropy per query over the epoch
  double valid_loss = 0.0;
  std::uint64_t steps = 0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

// history.csv: epoch,train_loss,valid_loss,steps,best. Wall-clock times are
// kept out so identical runs give identical files.
void write_history_csv(const TrainHistory& history, std::ostream& out);
void write_timing_csv(const TrainHistory& history, std::ostream& out);

struct TrainResult {
  head::CampModel best;
  head::CampModel last;
  TrainHistory history;
};

struct TrainHooks {
  std::ostream* progress = nullptr;
  std::function<void(const EpochRecord&, const head::CampModel&)> on_epoch;
};

// Trains a fresh model built from `model_config` (dropout taken from the train
// config) and returns the lowest-validation-loss snapshot.
TrainResult run_training(const data::TaskSet& train, const data::TaskSet& valid, head::ModelConfig model_config,
                         const TrainConfig& config, const TrainHooks& hooks = {});

}  // namespace camp::train
