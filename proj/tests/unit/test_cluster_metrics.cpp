#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "calsm/cluster_metrics.hpp"

using namespace calsm;

TEST_CASE("row normalization") {
  MatrixXd x(3, 2);
  x << 3, 4, 0, 0, -1, 1;
  const MatrixXd y = normalize_rows(x);
  CHECK(y(0, 0) == doctest::Approx(0.6));
  CHECK(y(0, 1) == doctest::Approx(0.8));
  CHECK(y.row(1).isZero(0.0));
  CHECK((normalize_rows(y) - y).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("k-means edge cases") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  MatrixXd x(7, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);

  const KMeansResult all = kmeans(x, 7, 5, 1);
  CHECK(all.objective == doctest::Approx(0.0));
  const KMeansResult one = kmeans(x, 1, 3, 1);
  CHECK((one.centroids.row(0) - x.colwise().mean()).norm() < 1e-12);
  CHECK(one.objective == doctest::Approx((x.rowwise() - x.colwise().mean()).squaredNorm()));
  CHECK_THROWS_AS(kmeans(x, 8, 1, 1), InputError);

  const KMeansResult a = kmeans(x, 3, 10, 42);
  const KMeansResult b = kmeans(x, 3, 10, 42);
  CHECK(a.partition.labels == b.partition.labels);
}

TEST_CASE("k-means reaches the exhaustive optimum on two blobs") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 0.3);
  MatrixXd x(8, 2);
  for (int i = 0; i < 8; ++i) {
    const double cx = i < 4 ? -2.0 : 2.0;
    x(i, 0) = cx + normal(rng);
    x(i, 1) = normal(rng);
  }
  double best = std::numeric_limits<double>::infinity();
  for (int mask = 1; mask < (1 << 8) - 1; ++mask) {
    std::vector<int> labels(8);
    for (int i = 0; i < 8; ++i) labels[i] = (mask >> i) & 1;
    best = std::min(best, kmeans_objective(x, Partition(labels, 2)));
  }
  CHECK(kmeans(x, 2, 20, 7).objective == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("rand index") {
  const std::vector<int> a{0, 0, 1}, b{0, 1, 1};
  CHECK(rand_index(a, a) == 1.0);
  CHECK(rand_index(a, b) == doctest::Approx(1.0 / 3.0));
  const std::vector<int> relabeled{5, 5, 2};
  CHECK(rand_index(relabeled, b) == rand_index(a, b));
  CHECK(rand_index(b, a) == rand_index(a, b));
  const std::vector<int> shorter{0, 1};
  CHECK_THROWS_AS(rand_index(a, shorter), DimensionError);
}

TEST_CASE("pearson correlation") {
  const std::vector<double> a{1.0, 2.5, -0.3, 4.0, 0.7};
  const std::vector<double> b{0.2, 1.9, 0.1, 2.2, -0.4};
  double ma = 0, mb = 0;
  for (int i = 0; i < 5; ++i) ma += a[i] / 5, mb += b[i] / 5;
  double num = 0, da = 0, db = 0;
  for (int i = 0; i < 5; ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    da += (a[i] - ma) * (a[i] - ma);
    db += (b[i] - mb) * (b[i] - mb);
  }
  CHECK(pcc(a, b) == doctest::Approx(num / std::sqrt(da * db)).epsilon(1e-12));
  CHECK(pcc(a, a) == doctest::Approx(1.0));
  std::vector<double> neg(a);
  for (auto& v : neg) v = -v;
  CHECK(pcc(a, neg) == doctest::Approx(-1.0));
  const std::vector<double> flat(5, 0.3);
  CHECK_THROWS_AS(pcc(a, flat), NumericalError);

  MatrixXd t(3, 3), e(3, 3);
  t << 9, 0.1, 0.2, 0.1, 9, 0.5, 0.2, 0.5, 9;
  e << -4, 0.3, 0.5, 0.3, 7, 1.1, 0.5, 1.1, 1;
  CHECK(probability_pcc(t, e) == doctest::Approx(1.0));  // diagonal ignored
}

TEST_CASE("diff metric") {
  auto d = diff_metric({{"a", 0.9}, {"b", 0.7}});
  CHECK(d["a"] == doctest::Approx(0.1));
  CHECK(d["b"] == doctest::Approx(-0.1));
  d = diff_metric({{"a", 0.5}, {"b", 0.5}, {"c", 0.5}});
  for (auto& [k, v] : d) CHECK(v == 0.0);
  const auto shifted = diff_metric({{"a", 10.9}, {"b", 10.7}, {"c", 10.2}});
  const auto plain = diff_metric({{"a", 0.9}, {"b", 0.7}, {"c", 0.2}});
  double sum = 0;
  for (auto& [k, v] : shifted) {
    CHECK(v == doctest::Approx(plain.at(k)));
    sum += v;
  }
  CHECK(std::abs(sum) < 1e-12);
  CHECK_THROWS_AS(diff_metric({{"a", 1.0}}), InputError);
}
