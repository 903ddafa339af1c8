#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <random>
#include <sstream>

#include "camp/analysis/analysis.hpp"
#include "camp/error.hpp"
#include "doctest.h"
#include "support/fixtures.hpp"

using namespace camp;
using namespace camp::analysis;
using tensor::Tensor;

namespace {

Tensor random_rows(std::size_t L, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor t = Tensor::zeros(L, d);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

transformer::AttentionRecord record_of(std::vector<std::vector<double>> rows) {
  transformer::AttentionRecord r;
  std::vector<double> flat;
  for (const auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
  r.weights = Tensor::matrix(rows.size(), rows.front().size(), flat);
  return r;
}

data::Episode episode_of(const data::TaskSet& tasks, std::size_t k, std::uint64_t seed) {
  data::Rng rng(seed);
  return data::sample_episode(tasks.tasks[0], k, rng);
}

}  // namespace

TEST_CASE("pca_2d") {
  SUBCASE("axis-aligned 2-D data") {
    const Tensor x = Tensor::matrix(4, 2, {2, 0, -2, 0, 0, 1, 0, -1});
    const auto p = pca_2d(x);
    CHECK(std::abs(std::abs(p.axes[0][0]) - 1.0) < 1e-12);
    CHECK(std::abs(p.axes[0][1]) < 1e-12);
    CHECK(std::abs(std::abs(p.axes[1][1]) - 1.0) < 1e-12);
    CHECK(p.eigenvalues[0] == doctest::Approx(4.0 * p.eigenvalues[1]));
    for (std::size_t r = 0; r < 4; ++r) {
      CHECK(std::abs(std::abs(p.coords[r][0]) - std::abs(x(r, 0))) < 1e-12);
      CHECK(std::abs(std::abs(p.coords[r][1]) - std::abs(x(r, 1))) < 1e-12);
    }
    CHECK(p.explained[0] == doctest::Approx(0.8));
  }
  SUBCASE("random 8x16 against a dense eigensolver") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto x = random_rows(8, 16, seed);
      const auto p = pca_2d(x);
      Eigen::MatrixXd m(8, 16);
      for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 16; ++c) m(r, c) = x(r, c);
      }
      const Eigen::MatrixXd centred = m.rowwise() - m.colwise().mean();
      const Eigen::MatrixXd cov = centred.transpose() * centred / 7.0;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
      const auto& ev = es.eigenvalues();  // ascending
      CHECK(std::abs(p.eigenvalues[0] - ev(15)) < 1e-6);
      CHECK(std::abs(p.eigenvalues[1] - ev(14)) < 1e-6);
      CHECK(std::abs(p.explained[0] - ev(15) / cov.trace()) < 1e-6);
      for (int a = 0; a < 2; ++a) {
        const Eigen::VectorXd oracle = es.eigenvectors().col(15 - a);
        double d = 0;
        for (int c = 0; c < 16; ++c) d += oracle(c) * p.axes[a][c];
        CHECK(std::abs(std::abs(d) - 1.0) < 1e-6);
      }
      // Orthonormal axes, sign convention, centred coordinates.
      double n0 = 0, n1 = 0, cross = 0;
      for (int c = 0; c < 16; ++c) {
        n0 += p.axes[0][c] * p.axes[0][c];
        n1 += p.axes[1][c] * p.axes[1][c];
        cross += p.axes[0][c] * p.axes[1][c];
      }
      CHECK(std::abs(n0 - 1) < 1e-9);
      CHECK(std::abs(n1 - 1) < 1e-9);
      CHECK(std::abs(cross) < 1e-9);
      for (const auto& axis : p.axes) {
        const auto big = *std::max_element(axis.begin(), axis.end(),
                                           [](double a, double b) { return std::abs(a) < std::abs(b); });
        CHECK(big > 0);
      }
      double m0 = 0, m1 = 0;
      for (const auto& c : p.coords) m0 += c[0], m1 += c[1];
      CHECK(std::abs(m0 / 8) < 1e-9);
      CHECK(std::abs(m1 / 8) < 1e-9);
      CHECK(p.explained[0] >= p.explained[1]);
      CHECK(p.explained[1] >= 0.0);
      CHECK(p.explained[0] + p.explained[1] <= 1.0 + 1e-12);
    }
  }
  SUBCASE("rank-one data") {
    const Tensor x = Tensor::matrix(3, 3, {1, 2, 3, 2, 4, 6, -1, -2, -3});
    const auto p = pca_2d(x);
    CHECK(p.eigenvalues[1] == 0.0);
    CHECK(p.explained[0] == doctest::Approx(1.0));
    double cross = 0;
    for (int c = 0; c < 3; ++c) cross += p.axes[0][c] * p.axes[1][c];
    CHECK(std::abs(cross) < 1e-12);
  }
  SUBCASE("degenerate inputs") {
    CHECK_THROWS_AS(pca_2d(Tensor::matrix(3, 2, {1, 1, 1, 1, 1, 1})), InvalidArgument);
    CHECK_THROWS_AS(pca_2d(Tensor::matrix(2, 2, {1, 2, 3, 4})), InvalidArgument);
    CHECK_THROWS_AS(pca_2d(Tensor::matrix(3, 1, {1, 2, 3})), InvalidArgument);
  }
  SUBCASE("projection with foreign axes") {
    const auto x = random_rows(6, 4, 3);
    const auto p = pca_2d(x);
    const auto again = project(p, x);
    for (std::size_t r = 0; r < 6; ++r) CHECK(again[r] == p.coords[r]);
    CHECK_THROWS_AS(project(p, random_rows(3, 5, 1)), InvalidArgument);
  }
}

TEST_CASE("snapshot_embeddings") {
  const auto tasks = camp::testing::synthetic_tasks(1, 20, 3);
  auto cfg = camp::testing::tiny_model_config();
  const head::CampModel model(cfg, 2);
  const auto before = model.parameters();
  const auto ep = episode_of(tasks, 6, 1);
  const auto s = snapshot_embeddings(model, ep);
  CHECK(s.pre.rows.values() == model.embed(ep).rows.values());
  CHECK(s.post.rows() == 7);
  CHECK(s.attention.size() == cfg.encoder.n_layers * cfg.encoder.n_heads);
  CHECK(std::count(s.roles.begin(), s.roles.end(), Role::kQuery) == 1);
  CHECK(s.roles[s.pre.query_index] == Role::kQuery);
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    CHECK(s.roles[i + 1] == (ep.support[i]->label ? Role::kPositive : Role::kNegative));
  }
  CHECK(s.prediction.probability_positive == head::predict(ep, model).probability_positive);
  CHECK(model.parameters().same_values(before));

  SUBCASE("naive layout roles") {
    auto ncfg = cfg;
    ncfg.layout = context::Layout::kNaiveIcl;
    ncfg.d_label = 0;
    const head::CampModel naive(ncfg, 2);
    const auto n = snapshot_embeddings(naive, ep);
    CHECK(n.roles.size() == 13);
    CHECK(n.roles.back() == Role::kQuery);
    CHECK(n.roles[1] == Role::kLabelToken);
    CHECK(label_row(context::Layout::kNaiveIcl, 2, 6) == 5);
  }
}

TEST_CASE("label_flip") {
  const auto tasks = camp::testing::synthetic_tasks(1, 20, 3);
  auto cfg = camp::testing::tiny_model_config();
  head::CampModel model(cfg, 2);
  camp::testing::spread_parameters(model.parameters(), 4);
  const auto ep = episode_of(tasks, 6, 2);
  const auto support_copy = ep.support;
  const auto r = label_flip(model, ep, 3);
  CHECK(r.support_index == 2);
  CHECK(ep.support == support_copy);
  CHECK((ep.support[2]->label == 1) == (r.before.roles[3] == Role::kPositive));
  const auto& a = r.before.pre.rows;
  const auto& b = r.after.pre.rows;
  const auto d_label = cfg.label_width();
  for (std::size_t row = 0; row < a.rows(); ++row) {
    const auto ra = a.row_view(row), rb = b.row_view(row);
    if (row != 3) {
      CHECK(std::equal(ra.begin(), ra.end(), rb.begin()));
      continue;
    }
    const auto mol = ra.size() - d_label;
    CHECK(std::equal(ra.begin(), ra.begin() + mol, rb.begin()));
    const auto old_id = static_cast<std::size_t>(ep.support[2]->label);
    const auto table_old = model.labels().table().row_view(old_id);
    const auto table_new = model.labels().table().row_view(1 - old_id);
    CHECK(std::equal(ra.begin() + mol, ra.end(), table_old.begin()));
    CHECK(std::equal(rb.begin() + mol, rb.end(), table_new.begin()));
  }
  CHECK(r.after.roles[3] != r.before.roles[3]);
  const auto l2 = post_displacement(r);
  CHECK(l2.others.size() == a.rows() - 1);
  CHECK(l2.flipped > 0.0);
  const auto plane = pca_displacement(r);
  CHECK(plane.others.size() == a.rows() - 1);

  std::ostringstream js;
  write_flip_json(r, js);
  const auto j = nlohmann::json::parse(js.str());
  CHECK(j["flip_row"] == 3);
  CHECK(j["striation_artifact_defined"].size() == cfg.encoder.n_layers * cfg.encoder.n_heads);
  const auto svg = embedding_panels_svg(r);
  CHECK(svg.find("after encoder, label flipped") != std::string::npos);

  CHECK_THROWS_AS(label_flip(model, ep, 0), InvalidArgument);
  CHECK_THROWS_AS(label_flip(model, ep, 7), InvalidArgument);
}

TEST_CASE("striation_score") {
  SUBCASE("rows identical within groups") {
    const auto r = record_of({{0.5, 0.5, 0}, {0.1, 0.1, 0.8}, {0.5, 0.5, 0}, {0.1, 0.1, 0.8}});
    const int ids[] = {0, 1, 0, 1};
    CHECK(striation_score(r, ids) == doctest::Approx(1.0));
  }
  SUBCASE("all rows identical") {
    const auto r = record_of({{0.2, 0.8}, {0.2, 0.8}, {0.2, 0.8}});
    const int ids[] = {0, 1, 0};
    CHECK(striation_score(r, ids) == 0.0);
  }
  SUBCASE("uniform random rows score near zero") {
    std::mt19937_64 rng(12);
    std::exponential_distribution<double> e;
    std::bernoulli_distribution coin;
    double sum = 0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<std::vector<double>> rows(16, std::vector<double>(16));
      std::vector<int> ids(16);
      for (std::size_t i = 0; i < 16; ++i) {
        double z = 0;
        for (auto& v : rows[i]) z += (v = e(rng));
        for (auto& v : rows[i]) v /= z;  // uniform on the simplex
        ids[i] = coin(rng);
      }
      const double s = striation_score(record_of(rows), ids);
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
      sum += s;
    }
    CHECK(sum / 100 < 0.2);
  }
  SUBCASE("permuting rows within a group") {
    const auto r1 = record_of({{0.5, 0.5, 0}, {0.2, 0.3, 0.5}, {0.6, 0.2, 0.2}, {0.1, 0.1, 0.8}});
    const auto r2 = record_of({{0.6, 0.2, 0.2}, {0.2, 0.3, 0.5}, {0.5, 0.5, 0}, {0.1, 0.1, 0.8}});
    const int ids[] = {0, 1, 0, 1};
    CHECK(striation_score(r1, ids) == doctest::Approx(striation_score(r2, ids)).epsilon(1e-14));
  }
  SUBCASE("mismatched labels") {
    const auto r = record_of({{1, 0}, {0, 1}});
    const int ids[] = {0};
    CHECK_THROWS_AS(striation_score(r, ids), InvalidArgument);
  }
}

TEST_CASE("exports") {
  const auto x = random_rows(4, 3, 5);
  const auto p = pca_2d(x);
  const Role roles[] = {Role::kQuery, Role::kPositive, Role::kNegative, Role::kPositive};
  std::ostringstream csv;
  write_pca_csv(p, roles, csv);
  CHECK(csv.str().rfind("row,role,pc1,pc2\n0,query,", 0) == 0);
  const auto rec = record_of({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}});
  const auto svg = attention_heatmap_svg(rec, roles);
  CHECK(svg.find("<svg") == 0);
  CHECK_THROWS_AS(write_pca_csv(p, std::span(roles, 2), csv), InvalidArgument);
}
