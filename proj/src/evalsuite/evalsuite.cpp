#include "camp/evalsuite/evalsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "camp/error.hpp"
#include "camp/parallel.hpp"

namespace camp::eval {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty()) throw InvalidArgument("no scores");
  if (scores.size() != labels.size()) {
    throw InvalidArgument("scores and labels differ in length (" + std::to_string(scores.size()) + " vs " +
                          std::to_string(labels.size()) + ")");
  }
  for (auto l : labels) {
    if (l != 0 && l != 1) throw InvalidArgument("labels must be 0 or 1");
  }
  for (auto s : scores) {
    if (!std::isfinite(s)) throw InvalidArgument("non-finite score");
  }
}

std::mt19937_64 episode_rng(std::uint64_t base, std::size_t seed, std::size_t size, std::size_t task) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(size),
                    static_cast<std::uint32_t>(task)};
  return std::mt19937_64(seq);
}

std::vector<data::Episode> query_set(const data::PropertyTask& task, std::size_t k, data::Rng& rng) {
  auto sample = data::sample_support(task, k, rng);
  std::vector<data::Episode> out;
  out.reserve(sample.remainder.size());
  for (const auto& q : sample.remainder) out.push_back(data::Episode{sample.support, q});
  return out;
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return s.str();
}

}  // namespace

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) throw InvalidArgument("AUPRC is undefined without positive labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] != 1) continue;
    ++tp;
    sum += static_cast<double>(tp) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(n_pos);
}

double positive_fraction(std::span<const int> labels) {
  if (labels.empty()) throw InvalidArgument("no labels");
  return static_cast<double>(std::count(labels.begin(), labels.end(), 1)) / static_cast<double>(labels.size());
}

double delta_auprc(std::span<const double> scores, std::span<const int> labels) {
  return auprc(scores, labels) - positive_fraction(labels);
}

PrecisionRecallSummary summarize(std::span<const double> scores, std::span<const int> labels) {
  PrecisionRecallSummary s;
  s.auprc = auprc(scores, labels);
  s.positive_fraction = positive_fraction(labels);
  s.delta_auprc = s.auprc - s.positive_fraction;
  s.n_query = labels.size();
  return s;
}

Scorer model_scorer(const head::CampModel& model) {
  return [&model](std::span<const data::Episode> episodes) {
    const auto preds = head::predict_batch(episodes, model);
    std::vector<double> out;
    out.reserve(preds.size());
    for (const auto& p : preds) out.push_back(p.probability_positive);
    return out;
  };
}

double centroid_probability(const data::Episode& episode) {
  data::validate_episode(episode);
  const auto dim = episode.query->graph.feature_dim;
  std::vector<double> sum[2] = {std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  std::size_t count[2] = {0, 0};
  for (const auto& m : episode.support) {
    const auto f = data::mean_atom_features(m->graph);
    if (f.size() != dim) throw InvalidArgument("support and query feature widths differ");
    const auto l = static_cast<std::size_t>(m->label);
    for (std::size_t c = 0; c < dim; ++c) sum[l][c] += f[c];
    ++count[l];
  }
  if (count[0] == 0 || count[1] == 0) throw InvalidArgument("centroid baseline needs both classes in the support");
  const auto q = data::mean_atom_features(episode.query->graph);
  double dist[2];
  for (std::size_t l = 0; l < 2; ++l) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double diff = q[c] - sum[l][c] / static_cast<double>(count[l]);
      d2 += diff * diff;
    }
    dist[l] = std::sqrt(d2);
  }
  // softmax(-d)[1]
  return 1.0 / (1.0 + std::exp(dist[1] - dist[0]));
}

std::vector<double> centroid_baseline(std::span<const data::Episode> episodes) {
  std::vector<double> out;
  out.reserve(episodes.size());
  for (const auto& e : episodes) out.push_back(centroid_probability(e));
  return out;
}

const SizeAggregate& SweepReport::at_size(std::size_t support_size) const {
  for (const auto& a : aggregates) {
    if (a.support_size == support_size) return a;
  }
  throw InvalidArgument("no aggregate for support size " + std::to_string(support_size));
}

double standard_error(std::span<const double> values) {
  if (values.size() < 2) throw InvalidArgument("standard error needs at least two values");
  const double m = mean(values);
  double ss = 0.0;
  for (auto v : values) ss += (v - m) * (v - m);
  const double n = static_cast<double>(values.size());
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

std::vector<SizeAggregate> aggregate(std::span<const TaskSummary> rows) {
  // size -> seed -> (sum auprc, sum delta, count)
  struct Acc {
    double auprc = 0.0, delta = 0.0;
    std::size_t n = 0;
  };
  std::map<std::size_t, std::map<std::size_t, Acc>> acc;
  for (const auto& r : rows) {
    auto& a = acc[r.support_size][r.seed];
    a.auprc += r.pr.auprc;
    a.delta += r.pr.delta_auprc;
    ++a.n;
  }
  std::vector<SizeAggregate> out;
  for (const auto& [size, seeds] : acc) {
    if (seeds.size() < 2) continue;
    SizeAggregate g;
    g.support_size = size;
    g.n_seeds = seeds.size();
    for (const auto& [seed, a] : seeds) {
      g.seed_auprc.push_back(a.auprc / static_cast<double>(a.n));
      g.seed_delta.push_back(a.delta / static_cast<double>(a.n));
    }
    g.mean_auprc = mean(g.seed_auprc);
    g.se_auprc = standard_error(g.seed_auprc);
    g.mean_delta = mean(g.seed_delta);
    g.se_delta = standard_error(g.seed_delta);
    out.push_back(std::move(g));
  }
  return out;
}

SweepReport evaluate_sweep(const Scorer& scorer, const data::TaskSet& test, std::span<const std::size_t> support_sizes,
                           std::size_t n_seeds, std::uint64_t base_seed, std::size_t threads) {
  if (test.tasks.empty()) throw InvalidArgument("no test tasks");
  if (support_sizes.empty()) throw InvalidArgument("no support sizes");
  if (n_seeds == 0) throw InvalidArgument("need at least one seed");
  SweepReport report;
  struct Job {
    std::size_t size, seed, task;
  };
  std::vector<Job> jobs;
  for (auto k : support_sizes) {
    if (k == 0) throw InvalidArgument("support size must be positive");
    std::vector<std::size_t> feasible;
    for (std::size_t t = 0; t < test.tasks.size(); ++t) {
      if (test.tasks[t].size() < k + 1) {
        ++report.skipped_infeasible;
        report.warnings.push_back("task " + test.tasks[t].task_id + " has " + std::to_string(test.tasks[t].size()) +
                                  " molecules, skipped at support size " + std::to_string(k));
      } else {
        feasible.push_back(t);
      }
    }
    for (std::size_t s = 0; s < n_seeds; ++s) {
      for (auto t : feasible) jobs.push_back({k, s, t});
    }
  }
  std::vector<std::optional<PrecisionRecallSummary>> results(jobs.size());
  const auto n_workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(jobs.size(), 1));
  run_parallel(n_workers, [&](std::size_t w) {
    for (std::size_t j = w; j < jobs.size(); j += n_workers) {
      const auto& job = jobs[j];
      auto rng = episode_rng(base_seed, job.seed, job.size, job.task);
      const auto episodes = query_set(test.tasks[job.task], job.size, rng);
      std::vector<int> labels;
      for (const auto& e : episodes) labels.push_back(e.query->label);
      if (std::count(labels.begin(), labels.end(), 1) == 0) continue;
      const auto scores = scorer(episodes);
      results[j] = summarize(scores, labels);
    }
  });
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& job = jobs[j];
    if (!results[j]) {
      ++report.skipped_no_positive;
      report.warnings.push_back("task " + test.tasks[job.task].task_id + " has no positive query at support size " +
                                std::to_string(job.size) + ", seed " + std::to_string(job.seed));
      continue;
    }
    report.tasks.push_back({job.size, job.seed, test.tasks[job.task].task_id, *results[j]});
  }
  report.aggregates = aggregate(report.tasks);
  if (n_seeds < 2) report.warnings.push_back("fewer than two seeds: no aggregate rows");
  return report;
}

SweepReport evaluate_sweep(const head::CampModel& model, const data::TaskSet& test,
                           std::span<const std::size_t> support_sizes, std::size_t n_seeds, std::uint64_t base_seed,
                           std::size_t threads) {
  return evaluate_sweep(model_scorer(model), test, support_sizes, n_seeds, base_seed, threads);
}

void write_sweep_csv(const SweepReport& report, std::ostream& out) {
  out << "support_size,seed,task_id,n_query,positive_fraction,auprc,delta_auprc\n";
  for (const auto& r : report.tasks) {
    out << r.support_size << ',' << r.seed << ',' << r.task_id << ',' << r.pr.n_query << ','
        << fmt(r.pr.positive_fraction) << ',' << fmt(r.pr.auprc) << ',' << fmt(r.pr.delta_auprc) << '\n';
  }
}

void write_aggregate_csv(const SweepReport& report, std::ostream& out) {
  out << "support_size,n_seeds,mean_auprc,se_auprc,mean_delta_auprc,se_delta_auprc\n";
  for (const auto& a : report.aggregates) {
    out << a.support_size << ',' << a.n_seeds << ',' << fmt(a.mean_auprc) << ',' << fmt(a.se_auprc) << ','
        << fmt(a.mean_delta) << ',' << fmt(a.se_delta) << '\n';
  }
}

void write_sweep_summary(const SweepReport& report, std::ostream& out) {
  out << "support sweep: " << report.tasks.size() << " task evaluations\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& a : report.aggregates) {
    out << "  |s|=" << a.support_size << "  dAUPRC " << a.mean_delta << " +- " << a.se_delta << "  AUPRC "
        << a.mean_auprc << " +- " << a.se_auprc << "  (" << a.n_seeds << " seeds)\n";
  }
  out << std::defaultfloat;
  if (report.skipped_infeasible) out << "  skipped (too small): " << report.skipped_infeasible << '\n';
  if (report.skipped_no_positive) out << "  skipped (no positive query): " << report.skipped_no_positive << '\n';
  for (const auto& w : report.warnings) out << "  warning: " << w << '\n';
}

LatencyReport benchmark_latency(const head::CampModel& model, const data::TaskSet& test,
                                std::span<const std::size_t> support_sizes, std::size_t repeats, std::uint64_t seed) {
  if (repeats == 0) throw InvalidArgument("repeats must be positive");
  if (support_sizes.empty()) throw InvalidArgument("no support sizes");
  LatencyReport report;
  for (auto k : support_sizes) {
    std::vector<std::vector<data::Episode>> sets;
    for (std::size_t t = 0; t < test.tasks.size(); ++t) {
      if (test.tasks[t].size() < k + 1) continue;
      auto rng = episode_rng(seed, 0, k, t);
      sets.push_back(query_set(test.tasks[t], k, rng));
    }
    if (sets.empty()) throw InvalidArgument("no test task supports size " + std::to_string(k));
    LatencyRow row;
    row.support_size = k;
    for (const auto& s : sets) row.n_episodes += s.size();
    auto run_all = [&] {
      for (const auto& s : sets) (void)head::predict_batch(s, model);
    };
    run_all();
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      run_all();
      row.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    row.mean = mean(row.seconds);
    double ss = 0.0;
    for (auto v : row.seconds) ss += (v - row.mean) * (v - row.mean);
    row.stddev = repeats > 1 ? std::sqrt(ss / static_cast<double>(repeats - 1)) : 0.0;
    auto sorted = row.seconds;
    std::sort(sorted.begin(), sorted.end());
    const auto n = sorted.size();
    row.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    row.per_episode_us = row.median / static_cast<double>(row.n_episodes) * 1e6;
    for (auto v : row.seconds) report.total_seconds += v;
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_latency_csv(const LatencyReport& report, std::ostream& out) {
  out << "support_size,n_episodes,repeats,mean_s,std_s,median_s,per_episode_us\n";
  for (const auto& r : report.rows) {
    out << r.support_size << ',' << r.n_episodes << ',' << r.seconds.size() << ',' << fmt(r.mean) << ','
        << fmt(r.stddev) << ',' << fmt(r.median) << ',' << fmt(r.per_episode_us) << '\n';
  }
}

Series delta_series(const SweepReport& report, const std::string& name) {
  Series s;
  s.name = name;
  for (const auto& a : report.aggregates) {
    s.x.push_back(static_cast<double>(a.support_size));
    s.y.push_back(a.mean_delta);
    s.err.push_back(a.se_delta);
  }
  return s;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string line_plot_svg(std::span<const Series> series, const std::string& title, const std::string& x_label,
                          const std::string& y_label, bool log_x) {
  constexpr double W = 640, H = 420, left = 70, right = 150, top = 40, bottom = 60;
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  auto tx = [&](double x) { return log_x ? std::log2(x) : x; };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size() || (!s.err.empty() && s.err.size() != s.y.size())) {
      throw InvalidArgument("series '" + s.name + "' has mismatched lengths");
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (log_x && s.x[i] <= 0) throw InvalidArgument("log axis needs positive x");
      const double e = s.err.empty() ? 0.0 : s.err[i];
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i] - e);
      y1 = std::max(y1, s.y[i] + e);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.08 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (tx(x) - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = y0 + (y1 - y0) * i / 4.0;
    o << "<line x1=\"" << left - 4 << "\" x2=\"" << left << "\" y1=\"" << py(y) << "\" y2=\"" << py(y)
      << "\" stroke=\"#333\"/><text x=\"" << left - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">"
      << std::setprecision(3) << y << std::setprecision(2) << "</text>\n";
  }
  std::vector<double> xs;
  for (const auto& s : series) xs.insert(xs.end(), s.x.begin(), s.x.end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  for (auto x : xs) {
    o << "<line x1=\"" << px(x) << "\" x2=\"" << px(x) << "\" y1=\"" << top + ph << "\" y2=\"" << top + ph + 4
      << "\" stroke=\"#333\"/><text x=\"" << px(x) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
      << std::defaultfloat << x << std::fixed << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">" << xml_escape(x_label)
    << "</text>\n";
  o << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << xml_escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* col = palette[k % std::size(palette)];
    o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!s.err.empty() && s.err[i] > 0) {
        o << "<line x1=\"" << px(s.x[i]) << "\" x2=\"" << px(s.x[i]) << "\" y1=\"" << py(s.y[i] - s.err[i])
          << "\" y2=\"" << py(s.y[i] + s.err[i]) << "\" stroke=\"" << col << "\"/>\n";
      }
      o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << col << "\"/>\n";
    }
    const double ly = top + 16 + 18.0 * static_cast<double>(k);
    o << "<line x1=\"" << W - right + 12 << "\" x2=\"" << W - right + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
      << "\" stroke=\"" << col << "\" stroke-width=\"2\"/><text x=\"" << W - right + 38 << "\" y=\"" << ly + 4
      << "\">" << xml_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace camp::eval
