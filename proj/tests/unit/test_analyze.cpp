#include "doctest.h"

#include <cmath>
#include <random>

#include "json.hpp"
#include "npshape/analyze.hpp"
#include "npshape/error.hpp"
#include "oracles.hpp"

using namespace npshape;
using namespace npshape::analyze;

namespace {

Eigen::MatrixXd from_rows(const oracle::Matrix& m) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m[0].size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i][j];
  return x;
}

oracle::Matrix to_rows(const Eigen::MatrixXd& x) {
  oracle::Matrix m(static_cast<std::size_t>(x.rows()), std::vector<double>(static_cast<std::size_t>(x.cols())));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = x(i, j);
  return m;
}

Eigen::MatrixXd column(std::initializer_list<double> v) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double d : v) x(i++, 0) = d;
  return x;
}

std::vector<std::string> random_labels(std::mt19937_64& rng, std::size_t n, int k) {
  std::vector<std::string> y;
  for (std::size_t i = 0; i < n; ++i) y.push_back(std::string(1, static_cast<char>('a' + rng() % k)));
  return y;
}

// Three classes around a triangle of side `spacing`; the same noise pattern
// scaled by `spread` at every stage.
Stage ramp_stage(const std::string& id, double spacing, double spread) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g(0.0, 1.0);
  const double cx[] = {0.0, 1.0, 0.5}, cy[] = {0.0, 0.0, 0.866};
  Stage s{id, Eigen::MatrixXd(60, 4), {}};
  for (int i = 0; i < 60; ++i) {
    const int k = i % 3;
    s.x(i, 0) = spacing * cx[k] + spread * g(rng);
    s.x(i, 1) = spacing * cy[k] + spread * g(rng);
    s.x(i, 2) = spread * g(rng);
    s.x(i, 3) = spread * g(rng);
    s.y.push_back(std::string(1, static_cast<char>('p' + k)));
  }
  return s;
}

}  // namespace

TEST_SUITE("analyze") {
  TEST_CASE("collinear points project onto the diagonal") {
    Eigen::MatrixXd x(3, 2);
    x << 0, 0, 1, 1, 2, 2;
    const auto p = pca_fit_transform(x);
    CHECK(p.components(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(p.components(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(p.projected(0, 0) == doctest::Approx(-std::sqrt(2.0)));
    CHECK(std::abs(p.projected(1, 0)) < 1e-12);
    CHECK(p.projected(2, 0) == doctest::Approx(std::sqrt(2.0)));
    CHECK(std::abs(p.explained_variance[1]) < 1e-12);
    CHECK(p.explained_variance[0] == doctest::Approx(2.0));
  }

  TEST_CASE("pca agrees with the jacobi oracle up to sign") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed);
      const auto rows = oracle::random_matrix(rng, 30, 5, -3.0, 3.0);
      const auto p = pca_fit_transform(from_rows(rows));
      std::vector<double> values;
      oracle::Matrix vectors;
      oracle::jacobi_eigen(oracle::covariance(rows), values, vectors);
      for (int k = 0; k < 2; ++k) {
        CHECK(std::abs(p.explained_variance[static_cast<std::size_t>(k)] - values[static_cast<std::size_t>(k)]) < 1e-8);
        double dot = 0.0;
        for (int d = 0; d < 5; ++d) dot += p.components(k, d) * vectors[static_cast<std::size_t>(d)][static_cast<std::size_t>(k)];
        const double sign = dot < 0 ? -1.0 : 1.0;
        for (int d = 0; d < 5; ++d) {
          CHECK(std::abs(p.components(k, d) - sign * vectors[static_cast<std::size_t>(d)][static_cast<std::size_t>(k)]) < 1e-8);
        }
      }
    }
  }

  TEST_CASE("pca components are orthonormal with a fixed sign convention") {
    std::mt19937_64 rng(5);
    const auto x = from_rows(oracle::random_matrix(rng, 25, 6));
    const auto p = pca_fit_transform(x);
    const Eigen::MatrixXd gram = p.components * p.components.transpose();
    CHECK((gram - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
    for (int k = 0; k < 2; ++k) {
      Eigen::Index arg;
      p.components.row(k).cwiseAbs().maxCoeff(&arg);
      CHECK(p.components(k, arg) > 0);
    }
    CHECK(p.explained_variance[0] >= p.explained_variance[1]);
  }

  TEST_CASE("duplicating rows leaves components unchanged") {
    std::mt19937_64 rng(6);
    const auto x = from_rows(oracle::random_matrix(rng, 12, 4));
    Eigen::MatrixXd doubled(24, 4);
    doubled << x, x;
    const auto a = pca_fit_transform(x);
    const auto b = pca_fit_transform(doubled);
    CHECK((a.components - b.components).cwiseAbs().maxCoeff() < 1e-10);
  }

  TEST_CASE("pca is translation invariant and rotation equivariant") {
    std::mt19937_64 rng(7);
    const auto x = from_rows(oracle::random_matrix(rng, 20, 3, -2.0, 2.0));
    const auto base = pca_fit_transform(x);
    Eigen::RowVector3d shift(10.0, -4.0, 2.5);
    const auto moved = pca_fit_transform(x.rowwise() + shift);
    CHECK((moved.projected - base.projected).cwiseAbs().maxCoeff() < 1e-10);

    const Eigen::Matrix3d q = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
    const auto rotated = pca_fit_transform(x * q.transpose());
    for (int k = 0; k < 2; ++k) {
      const Eigen::VectorXd a = base.projected.col(k), b = rotated.projected.col(k);
      CHECK(std::min((a - b).cwiseAbs().maxCoeff(), (a + b).cwiseAbs().maxCoeff()) < 1e-9);
    }
  }

  TEST_CASE("pca input checks and degenerate data") {
    CHECK_THROWS_AS(pca_fit_transform(Eigen::MatrixXd::Zero(1, 3)), ValidationError);
    CHECK_THROWS_AS(pca_fit_transform(Eigen::MatrixXd::Zero(4, 1)), ValidationError);
    const auto flat = pca_fit_transform(Eigen::MatrixXd::Constant(5, 3, 2.0));
    CHECK(flat.explained_variance[0] == 0.0);
    CHECK(flat.explained_variance[1] == 0.0);
    CHECK((flat.components * flat.components.transpose() - Eigen::MatrixXd::Identity(2, 2))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }

  TEST_CASE("variance split examples") {
    const std::vector<std::string> one{"a", "a", "a"};
    CHECK(between_within_variance(column({1, 2, 6}), one).between == 0.0);
    const std::vector<std::string> two{"a", "a", "b", "b"};
    const auto s = between_within_variance(column({0, 0, 4, 4}), two);
    CHECK(s.between == 4.0);
    CHECK(s.within == 0.0);
    CHECK_THROWS_AS(between_within_variance(Eigen::MatrixXd(0, 2), {}), ValidationError);
    CHECK_THROWS_AS(between_within_variance(column({1, 2}), one), ValidationError);
  }

  TEST_CASE("between plus within is total variance") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      std::mt19937_64 rng(seed);
      const auto rows = oracle::random_matrix(rng, 40, 7, -5.0, 5.0);
      const auto y = random_labels(rng, 40, 4);
      const auto s = between_within_variance(from_rows(rows), y);
      const double total = oracle::total_variance(rows);
      CHECK(std::abs(s.between + s.within - total) < 1e-9);
      CHECK(std::abs(total_variance(from_rows(rows)) - total) < 1e-9);
    }
  }

  TEST_CASE("silhouette examples") {
    const std::vector<std::string> y{"a", "a", "b", "b"};
    CHECK(silhouette(column({0, 0, 10, 10}), y) == 1.0);
    CHECK(silhouette(column({0, 2, 6, 8}), y) ==
          doctest::Approx((5.0 / 7 + 3.0 / 5 + 3.0 / 5 + 5.0 / 7) / 4).epsilon(1e-14));
    const std::vector<std::string> single{"a", "a", "a"};
    CHECK_THROWS_AS(silhouette(column({0, 1, 2}), single), ValidationError);
    const std::vector<std::string> pair{"a", "b"};
    CHECK_THROWS_AS(silhouette(column({0, 1}), pair), ValidationError);
    // Singleton classes contribute 0.
    const std::vector<std::string> lone{"a", "a", "b"};
    CHECK(silhouette(column({0, 0, 5}), lone) == doctest::Approx(2.0 / 3.0));
  }

  TEST_CASE("silhouette equals the brute-force oracle exactly") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      const int n = 3 + static_cast<int>(rng() % 18);
      const auto rows = oracle::random_matrix(rng, n, 3);
      auto y = random_labels(rng, static_cast<std::size_t>(n), 3);
      y[0] = "a";
      y[1] = "b";
      const double got = silhouette(from_rows(rows), y);
      CHECK(got == oracle::silhouette(rows, y));
      CHECK(got >= -1.0);
      CHECK(got <= 1.0);
    }
  }

  TEST_CASE("relabeling classes leaves every metric unchanged") {
    std::mt19937_64 rng(8);
    const auto x = from_rows(oracle::random_matrix(rng, 30, 4));
    const auto y = random_labels(rng, 30, 3);
    std::vector<std::string> renamed;
    for (const auto& l : y) renamed.push_back(l == "a" ? "zeta" : l == "b" ? "alpha" : "mid");
    const auto a = cluster_metrics(x, y);
    const auto b = cluster_metrics(x, renamed);
    CHECK(a.between_class_variance == doctest::Approx(b.between_class_variance).epsilon(1e-14));
    CHECK(a.within_class_variance == doctest::Approx(b.within_class_variance).epsilon(1e-14));
    CHECK(a.silhouette == doctest::Approx(b.silhouette).epsilon(1e-14));
  }

  TEST_CASE("silhouette grows as centroids move apart") {
    double last = -2.0;
    for (double spacing : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
      const auto s = ramp_stage("s", spacing, 1.0);
      const double v = silhouette(s.x, s.y);
      CHECK(v > last);
      last = v;
    }
    CHECK(last > 0.8);
  }

  TEST_CASE("timeline on a separating ramp") {
    const std::vector<Stage> stages{ramp_stage("early", 1.0, 1.0), ramp_stage("mid", 3.0, 0.7),
                                    ramp_stage("late", 6.0, 0.4)};
    const auto t = stage_timeline(stages);
    REQUIRE(t.size() == 3);
    for (std::size_t i = 1; i < t.size(); ++i) {
      CHECK(t[i].metrics.between_class_variance > t[i - 1].metrics.between_class_variance);
      CHECK(t[i].metrics.within_class_variance < t[i - 1].metrics.within_class_variance);
      CHECK(t[i].metrics.silhouette > t[i - 1].metrics.silhouette);
    }
    CHECK(t[0].id == "early");
    CHECK(t[2].metrics.n_per_class.at("q") == 20);

    const auto pca = stage_timeline(stages, MetricSpace::pca2);
    CHECK(pca[2].metrics.silhouette > pca[0].metrics.silhouette);
    CHECK(pca[1].metrics.between_class_variance == t[1].metrics.between_class_variance);
  }

  TEST_CASE("timeline edge cases and csv") {
    const auto s = ramp_stage("a", 2.0, 1.0);
    auto copy = s;
    copy.id = "b";
    const std::vector<Stage> same{s, copy};
    const auto t = stage_timeline(same);
    CHECK(t[0].metrics.silhouette == t[1].metrics.silhouette);
    CHECK(t[0].metrics.within_class_variance == t[1].metrics.within_class_variance);
    CHECK(stage_timeline(std::vector<Stage>{s}).size() == 1);
    CHECK_THROWS_WITH_AS(stage_timeline(std::vector<Stage>{s, s}), doctest::Contains("duplicate"),
                         ValidationError);

    const auto csv = timeline_csv(t);
    CHECK(csv.rfind("stage,between,within,silhouette\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.find("\nb,") != std::string::npos);

    const auto doc = nlohmann::json::parse(metrics_json(t[0].metrics));
    CHECK(doc["silhouette"].get<double>() == t[0].metrics.silhouette);
    CHECK(doc["n_per_class"]["p"] == 20);
  }

  TEST_CASE("projection csv") {
    Eigen::MatrixXd x(3, 2);
    x << 0, 0, 1, 1, 2, 2;
    const auto p = pca_fit_transform(x);
    const std::vector<std::string> ids{"m1", "m2", "m3"};
    const std::vector<std::string> labels{"cube", "cube", "pyramid"};
    const auto csv = projection_csv(ids, p, labels);
    CHECK(csv.rfind("id,pc1,pc2,label\n", 0) == 0);
    CHECK(csv.find(",pyramid\n") != std::string::npos);
    CHECK(projection_csv(ids, p, {}).find("m3,") != std::string::npos);
    const std::vector<std::string> short_ids{"m1"};
    CHECK_THROWS_AS(projection_csv(short_ids, p, {}), ValidationError);
  }

  TEST_CASE("embedding matrices convert to dense form") {
    embed::EmbeddingMatrix m;
    m.dim = 2;
    m.ids = {"a", "b"};
    m.values = {1.5f, 2.0f, -3.0f, 0.25f};
    const auto x = to_matrix(m);
    CHECK(x(1, 0) == -3.0);
    CHECK(x(0, 1) == 2.0);
    CHECK(to_rows(x).size() == 2);
  }
}
