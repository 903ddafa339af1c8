#include "camp/analysis/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <ostream>
#include <sstream>

#include "camp/error.hpp"

namespace camp::analysis {

using tensor::Tensor;

namespace {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0); }

Vec mat_vec(const Vec& m, const Vec& v) {
  const auto n = v.size();
  Vec out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += m[i * n + j] * v[j];
    out[i] = s;
  }
  return out;
}

bool normalize(Vec& v) {
  const double n = std::sqrt(dot(v, v));
  if (n == 0.0 || !std::isfinite(n)) return false;
  for (auto& x : v) x /= n;
  return true;
}

// Largest-norm column of a symmetric matrix: a start vector that is never
// orthogonal to the dominant eigenvector unless the matrix vanishes.
Vec start_vector(const Vec& m, std::size_t n) {
  std::size_t best = 0;
  double best_norm = -1.0;
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += m[i * n + j] * m[i * n + j];
    if (s > best_norm) best_norm = s, best = j;
  }
  Vec v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = m[i * n + best];
  return v;
}

std::pair<Vec, double> power_iteration(const Vec& m, std::size_t n) {
  Vec v = start_vector(m, n);
  if (!normalize(v)) return {Vec(), 0.0};
  double lambda = dot(v, mat_vec(m, v));
  for (std::size_t it = 0; it < kPowerIterations; ++it) {
    Vec w = mat_vec(m, v);
    if (!normalize(w)) return {Vec(), 0.0};
    const double next = dot(w, mat_vec(m, w));
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(std::abs(w[i]) - std::abs(v[i])));
    v = std::move(w);
    const bool done = change < kPowerTolerance && std::abs(next - lambda) <= kPowerTolerance * std::abs(next);
    lambda = next;
    if (done) break;
  }
  return {v, lambda};
}

void fix_sign(Vec& v) {
  const auto it = std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
  if (*it < 0) {
    for (auto& x : v) x = -x;
  }
}

// Some unit vector orthogonal to `a`.
Vec orthogonal_to(const Vec& a) {
  for (std::size_t k = 0; k < a.size(); ++k) {
    Vec e(a.size(), 0.0);
    e[k] = 1.0;
    const double p = dot(e, a);
    for (std::size_t i = 0; i < a.size(); ++i) e[i] -= p * a[i];
    if (normalize(e)) return e;
  }
  throw InvalidArgument("no orthogonal direction");
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

PcaProjection pca_2d(const Tensor& rows) {
  const auto L = rows.rows(), d = rows.cols();
  if (rows.rank() != 2 || L < 3 || d < 2) throw InvalidArgument("PCA needs at least 3 rows of width 2 or more");
  PcaProjection p;
  p.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < L; ++r) {
    for (std::size_t c = 0; c < d; ++c) p.mean[c] += rows(r, c);
  }
  for (auto& m : p.mean) m /= static_cast<double>(L);
  Vec cov(d * d, 0.0);
  for (std::size_t r = 0; r < L; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = rows(r, i) - p.mean[i];
      for (std::size_t j = 0; j < d; ++j) cov[i * d + j] += xi * (rows(r, j) - p.mean[j]);
    }
  }
  double total = 0.0;
  for (auto& c : cov) c /= static_cast<double>(L - 1);
  for (std::size_t i = 0; i < d; ++i) total += cov[i * d + i];
  if (!(total > 0.0)) throw InvalidArgument("PCA input has no variance (all rows identical)");

  auto [v1, l1] = power_iteration(cov, d);
  fix_sign(v1);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) cov[i * d + j] -= l1 * v1[i] * v1[j];
  }
  auto [v2, l2] = power_iteration(cov, d);
  // Rank-one data leaves nothing after deflation.
  if (v2.empty() || l2 <= total * 1e-14) {
    v2 = orthogonal_to(v1);
    l2 = 0.0;
  } else {
    // Re-orthogonalise against round-off.
    const double pr = dot(v2, v1);
    for (std::size_t i = 0; i < d; ++i) v2[i] -= pr * v1[i];
    normalize(v2);
  }
  fix_sign(v2);
  p.axes = {std::move(v1), std::move(v2)};
  p.eigenvalues = {l1, std::max(l2, 0.0)};
  p.explained = {std::clamp(l1 / total, 0.0, 1.0), std::clamp(p.eigenvalues[1] / total, 0.0, 1.0)};
  p.coords = project(p, rows);
  return p;
}

std::vector<Point> project(const PcaProjection& pca, const Tensor& rows) {
  if (rows.cols() != pca.mean.size()) throw InvalidArgument("row width does not match the projection");
  std::vector<Point> out(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t a = 0; a < 2; ++a) {
      double s = 0.0;
      for (std::size_t c = 0; c < pca.mean.size(); ++c) s += (rows(r, c) - pca.mean[c]) * pca.axes[a][c];
      out[r][a] = s;
    }
  }
  return out;
}

std::string to_string(Role role) {
  switch (role) {
    case Role::kQuery: return "query";
    case Role::kPositive: return "positive";
    case Role::kNegative: return "negative";
    case Role::kLabelToken: return "label";
  }
  return "?";
}

namespace {

std::vector<Role> roles_of(const data::Episode& episode, context::Layout layout) {
  std::vector<Role> roles;
  auto of = [](const data::MoleculePtr& m) { return m->label == 1 ? Role::kPositive : Role::kNegative; };
  if (layout == context::Layout::kCamp) {
    roles.push_back(Role::kQuery);
    for (const auto& m : episode.support) roles.push_back(of(m));
  } else {
    for (const auto& m : episode.support) {
      roles.push_back(of(m));
      roles.push_back(Role::kLabelToken);
    }
    roles.push_back(Role::kQuery);
  }
  return roles;
}

}  // namespace

Snapshot snapshot_embeddings(const head::CampModel& model, const data::Episode& episode) {
  Snapshot s;
  s.pre = model.embed(episode);
  auto fwd = transformer::encoder_forward(model.encoder(), s.pre.rows, true);
  s.post = std::move(fwd.output);
  s.attention = std::move(fwd.attention);
  s.roles = roles_of(episode, model.config().layout);
  s.prediction = model.predict_sequence(s.pre);
  return s;
}

std::size_t label_row(context::Layout layout, std::size_t support_index, std::size_t support_size) {
  if (support_index >= support_size) throw InvalidArgument("support index out of range");
  return layout == context::Layout::kCamp ? support_index + 1 : 2 * support_index + 1;
}

LabelFlipReport label_flip(const head::CampModel& model, const data::Episode& episode, std::size_t flip_index) {
  data::validate_episode(episode);
  const auto k = episode.support_size();
  const auto layout = model.config().layout;
  LabelFlipReport r;
  r.flip_index = flip_index;
  if (layout == context::Layout::kCamp) {
    if (flip_index == 0) throw InvalidArgument("row 0 is the query; only support rows can be flipped");
    if (flip_index > k) throw InvalidArgument("flip index beyond the sequence");
    r.support_index = flip_index - 1;
  } else {
    if (flip_index == 2 * k) throw InvalidArgument("the last row is the query; only support rows can be flipped");
    if (flip_index > 2 * k) throw InvalidArgument("flip index beyond the sequence");
    r.support_index = flip_index / 2;
  }
  r.before = snapshot_embeddings(model, episode);
  data::Episode flipped = episode;
  auto m = std::make_shared<data::LabeledMolecule>(*episode.support[r.support_index]);
  m->label = 1 - m->label;
  flipped.support[r.support_index] = std::move(m);
  r.after = snapshot_embeddings(model, flipped);
  return r;
}

namespace {

Displacement finish(std::vector<double> per_row, std::size_t flipped) {
  Displacement d;
  d.flipped = per_row[flipped];
  for (std::size_t i = 0; i < per_row.size(); ++i) {
    if (i != flipped) d.others.push_back(per_row[i]);
  }
  d.median_other = median(d.others);
  return d;
}

}  // namespace

Displacement post_displacement(const LabelFlipReport& report) {
  const auto& a = report.before.post;
  const auto& b = report.after.post;
  std::vector<double> per_row(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) s += (a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
    per_row[r] = std::sqrt(s);
  }
  return finish(std::move(per_row), report.flip_index);
}

Displacement pca_displacement(const LabelFlipReport& report) {
  const auto pca = pca_2d(report.before.post);
  const auto after = project(pca, report.after.post);
  std::vector<double> per_row(after.size());
  for (std::size_t r = 0; r < after.size(); ++r) {
    per_row[r] = std::hypot(after[r][0] - pca.coords[r][0], after[r][1] - pca.coords[r][1]);
  }
  return finish(std::move(per_row), report.flip_index);
}

double striation_score(const transformer::AttentionRecord& record, std::span<const int> row_classes) {
  const auto& w = record.weights;
  const auto L = w.rows(), n = w.cols();
  if (row_classes.size() != L) {
    throw InvalidArgument("attention has " + std::to_string(L) + " rows but " + std::to_string(row_classes.size()) +
                          " class ids were given");
  }
  Vec grand(n, 0.0);
  for (std::size_t r = 0; r < L; ++r) {
    for (std::size_t c = 0; c < n; ++c) grand[c] += w(r, c) / static_cast<double>(L);
  }
  double total = 0.0;
  for (std::size_t r = 0; r < L; ++r) {
    for (std::size_t c = 0; c < n; ++c) total += (w(r, c) - grand[c]) * (w(r, c) - grand[c]);
  }
  if (total <= 1e-300) return 0.0;
  std::vector<int> ids(row_classes.begin(), row_classes.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  double within = 0.0;
  for (int g : ids) {
    Vec mean(n, 0.0);
    std::size_t count = 0;
    for (std::size_t r = 0; r < L; ++r) {
      if (row_classes[r] != g) continue;
      ++count;
      for (std::size_t c = 0; c < n; ++c) mean[c] += w(r, c);
    }
    for (auto& m : mean) m /= static_cast<double>(count);
    for (std::size_t r = 0; r < L; ++r) {
      if (row_classes[r] != g) continue;
      for (std::size_t c = 0; c < n; ++c) within += (w(r, c) - mean[c]) * (w(r, c) - mean[c]);
    }
  }
  return std::clamp(1.0 - within / total, 0.0, 1.0);
}

std::vector<int> row_classes(std::span<const Role> roles) {
  std::vector<int> out;
  out.reserve(roles.size());
  for (auto r : roles) {
    switch (r) {
      case Role::kQuery: out.push_back(2); break;
      case Role::kLabelToken: out.push_back(3); break;
      case Role::kPositive: out.push_back(1); break;
      case Role::kNegative: out.push_back(0); break;
    }
  }
  return out;
}

void write_pca_csv(const PcaProjection& pca, std::span<const Role> roles, std::ostream& out) {
  if (roles.size() != pca.coords.size()) throw InvalidArgument("one role per projected row expected");
  out << "row,role,pc1,pc2\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t r = 0; r < roles.size(); ++r) {
    out << r << ',' << to_string(roles[r]) << ',' << pca.coords[r][0] << ',' << pca.coords[r][1] << '\n';
  }
}

void write_flip_json(const LabelFlipReport& report, std::ostream& out) {
  using nlohmann::json;
  const auto l2 = post_displacement(report);
  const auto plane = pca_displacement(report);
  json j;
  j["flip_row"] = report.flip_index;
  j["support_index"] = report.support_index;
  j["role_before"] = to_string(report.before.roles[report.flip_index]);
  j["role_after"] = to_string(report.after.roles[report.flip_index]);
  j["p_positive_before"] = report.before.prediction.probability_positive;
  j["p_positive_after"] = report.after.prediction.probability_positive;
  j["post_l2"] = {{"flipped", l2.flipped}, {"median_other", l2.median_other}, {"others", l2.others}};
  j["post_pca"] = {{"flipped", plane.flipped}, {"median_other", plane.median_other}, {"others", plane.others}};
  // Artifact-defined metric, see striation_score.
  json heads = json::array();
  const auto before_ids = row_classes(report.before.roles);
  const auto after_ids = row_classes(report.after.roles);
  for (std::size_t i = 0; i < report.before.attention.size(); ++i) {
    const auto& a = report.before.attention[i];
    heads.push_back({{"layer", a.layer},
                     {"head", a.head},
                     {"striation_before", striation_score(a, before_ids)},
                     {"striation_after", striation_score(report.after.attention[i], after_ids)}});
  }
  j["striation_artifact_defined"] = heads;
  out << j.dump(2) << '\n';
}

namespace {

const char* role_colour(Role r) {
  switch (r) {
    case Role::kQuery: return "#2ca02c";
    case Role::kPositive: return "#d62728";
    case Role::kNegative: return "#1f77b4";
    case Role::kLabelToken: return "#7f7f7f";
  }
  return "#000";
}

void scatter_panel(std::ostringstream& o, double x, double y, double w, double h, const std::string& title,
                   const std::vector<Point>& pts, std::span<const Role> roles, std::size_t highlight) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& p : pts) {
    x0 = std::min(x0, p[0]), x1 = std::max(x1, p[0]);
    y0 = std::min(y0, p[1]), y1 = std::max(y1, p[1]);
  }
  const double padx = 0.1 * std::max(x1 - x0, 1e-9), pady = 0.1 * std::max(y1 - y0, 1e-9);
  x0 -= padx, x1 += padx, y0 -= pady, y1 += pady;
  o << "<g><rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
    << "\" fill=\"none\" stroke=\"#333\"/>\n<text x=\"" << x + w / 2 << "\" y=\"" << y - 8
    << "\" text-anchor=\"middle\">" << title << "</text>\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double px = x + (pts[i][0] - x0) / (x1 - x0) * w;
    const double py = y + (1 - (pts[i][1] - y0) / (y1 - y0)) * h;
    const char* col = role_colour(roles[i]);
    if (roles[i] == Role::kQuery) {
      o << "<rect x=\"" << px - 5 << "\" y=\"" << py - 5 << "\" width=\"10\" height=\"10\" fill=\"" << col << "\"/>\n";
    } else {
      o << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"5\" fill=\"" << col << "\"/>\n";
    }
    if (i == highlight) {
      o << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"9\" fill=\"none\" stroke=\"black\"/>\n";
    }
  }
  o << "</g>\n";
}

}  // namespace

std::string embedding_panels_svg(const LabelFlipReport& report) {
  const auto pre = pca_2d(report.before.pre.rows);
  const auto post = pca_2d(report.before.post);
  const auto flipped = project(post, report.after.post);
  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"960\" height=\"360\" font-family=\"sans-serif\" "
       "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  scatter_panel(o, 20, 40, 280, 280, "before encoder", pre.coords, report.before.roles, report.flip_index);
  scatter_panel(o, 340, 40, 280, 280, "after encoder", post.coords, report.before.roles, report.flip_index);
  scatter_panel(o, 660, 40, 280, 280, "after encoder, label flipped", flipped, report.after.roles, report.flip_index);
  o << "<text x=\"20\" y=\"345\">green square: query, red: positive, blue: negative, ringed: flipped row</text>\n";
  o << "</svg>\n";
  return o.str();
}

std::string attention_heatmap_svg(const transformer::AttentionRecord& record, std::span<const Role> roles) {
  const auto& w = record.weights;
  const auto L = w.rows();
  if (roles.size() != L) throw InvalidArgument("one role per attention row expected");
  const double cell = std::max(6.0, std::min(24.0, 480.0 / static_cast<double>(L)));
  const double off = 40, size = cell * static_cast<double>(L);
  double peak = 0.0;
  for (auto v : w.data()) peak = std::max(peak, v);
  if (peak <= 0) peak = 1;
  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + off + 20 << "\" height=\"" << size + off + 20
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << off << "\" y=\"14\">layer " << record.layer << " head " << record.head << "</text>\n";
  for (std::size_t i = 0; i < L; ++i) {
    o << "<rect x=\"" << off - 10 << "\" y=\"" << off + cell * i << "\" width=\"8\" height=\"" << cell << "\" fill=\""
      << role_colour(roles[i]) << "\"/>\n";
    o << "<rect x=\"" << off + cell * i << "\" y=\"" << off - 10 << "\" width=\"" << cell << "\" height=\"8\" fill=\""
      << role_colour(roles[i]) << "\"/>\n";
    for (std::size_t j = 0; j < L; ++j) {
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - w(i, j) / peak)));
      o << "<rect x=\"" << off + cell * j << "\" y=\"" << off + cell * i << "\" width=\"" << cell << "\" height=\""
        << cell << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\"/>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace camp::analysis
