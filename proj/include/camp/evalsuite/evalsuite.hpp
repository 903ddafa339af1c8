#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "camp/camphead/model.hpp"
#include "camp/moldata/moldata.hpp"

namespace camp::eval {

// Average precision: mean over positives (ranked by descending score, ties in
// input order) of the precision at that rank.
double auprc(std::span<const double> scores, std::span<const int> labels);
double positive_fraction(std::span<const int> labels);
// auprc minus the positive fraction, i.e. the gain over a random ranking.
double delta_auprc(std::span<const double> scores, std::span<const int> labels);

struct PrecisionRecallSummary {
  double auprc = 0.0;
  double positive_fraction = 0.0;
  double delta_auprc = 0.0;
  std::size_t n_query = 0;
};

PrecisionRecallSummary summarize(std::span<const double> scores, std::span<const int> labels);

// Probability of the positive class for each episode.
using Scorer = std::function<std::vector<double>(std::span<const data::Episode>)>;

Scorer model_scorer(const head::CampModel& model);

// Softmax over negative Euclidean distances between the query's mean atom
// features and the two class means of the support.
double centroid_probability(const data::Episode& episode);
std::vector<double> centroid_baseline(std::span<const data::Episode> episodes);

struct TaskSummary {
  std::size_t support_size = 0;
  std::size_t seed = 0;
  std::string task_id;
  PrecisionRecallSummary pr;
};

// Across seeds of the per-seed task means at one support size.
struct SizeAggregate {
  std::size_t support_size = 0;
  std::size_t n_seeds = 0;
  std::vector<double> seed_auprc;
  std::vector<double> seed_delta;
  double mean_auprc = 0.0;
  double se_auprc = 0.0;
  double mean_delta = 0.0;
  double se_delta = 0.0;
};

struct SweepReport {
  std::vector<TaskSummary> tasks;
  std::vector<SizeAggregate> aggregates;
  std::vector<std::string> warnings;
  std::size_t skipped_infeasible = 0;
  std::size_t skipped_no_positive = 0;

  const SizeAggregate& at_size(std::size_t support_size) const;
};

// Sample standard deviation over sqrt(n); needs n >= 2.
double standard_error(std::span<const double> values);

// Groups task rows by (size, seed), averages over tasks, then over seeds.
// Sizes with fewer than two seeds get no aggregate row.
std::vector<SizeAggregate> aggregate(std::span<const TaskSummary> rows);

// For every size, seed and task: one stratified support, every remaining
// molecule as a query against it. The support draw depends only on
// (base_seed, seed, size, task), so two scorers see identical episodes.
SweepReport evaluate_sweep(const Scorer& scorer, const data::TaskSet& test, std::span<const std::size_t> support_sizes,
                           std::size_t n_seeds, std::uint64_t base_seed = 0, std::size_t threads = 1);
SweepReport evaluate_sweep(const head::CampModel& model, const data::TaskSet& test,
                           std::span<const std::size_t> support_sizes, std::size_t n_seeds, std::uint64_t base_seed = 0,
                           std::size_t threads = 1);

// Per-task rows.
void write_sweep_csv(const SweepReport& report, std::ostream& out);
void write_aggregate_csv(const SweepReport& report, std::ostream& out);
void write_sweep_summary(const SweepReport& report, std::ostream& out);

struct LatencyRow {
  std::size_t support_size = 0;
  std::size_t n_episodes = 0;
  std::vector<double> seconds;  // one per repeat, whole query sets
  double mean = 0.0;
  double stddev = 0.0;
  double median = 0.0;
  double per_episode_us = 0.0;  // median / n_episodes
};

struct LatencyReport {
  std::vector<LatencyRow> rows;
  double total_seconds = 0.0;
};

// Wall-clock time of scoring the query sets of all test tasks, per size.
// Single-threaded; one untimed warm-up pass per size.
LatencyReport benchmark_latency(const head::CampModel& model, const data::TaskSet& test,
                                std::span<const std::size_t> support_sizes, std::size_t repeats,
                                std::uint64_t seed = 0);

void write_latency_csv(const LatencyReport& report, std::ostream& out);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // empty or one per point
};

// Line plot with optional error bars; log2 x axis when `log_x`.
std::string line_plot_svg(std::span<const Series> series, const std::string& title, const std::string& x_label,
                          const std::string& y_label, bool log_x = false);

Series delta_series(const SweepReport& report, const std::string& name);

}  // namespace camp::eval
