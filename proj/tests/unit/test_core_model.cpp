#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "calsm/core_model.hpp"

using namespace calsm;

namespace {

Network random_network(int n, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(p);
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (coin(rng)) edges.push_back({i, j});
  return Network::from_edges(n, edges);
}

}  // namespace

TEST_CASE("logistic and its log are stable in the tails") {
  CHECK(logistic(0.0) == doctest::Approx(0.5));
  CHECK(logistic(800.0) == 1.0);
  CHECK(logistic(-800.0) >= 0.0);
  CHECK(log_logistic(-800.0) == doctest::Approx(-800.0));
  CHECK(log_logistic(800.0) == doctest::Approx(0.0));
  for (double x : {-5.0, -1.0, 0.3, 4.0}) {
    CHECK(log_logistic(x) == doctest::Approx(std::log(1.0 / (1.0 + std::exp(-x)))).epsilon(1e-14));
  }
}

TEST_CASE("jj coefficient") {
  CHECK(jj_coefficient(0.0) == 0.125);
  CHECK(jj_coefficient(1e-12) == 0.125);
  CHECK(jj_coefficient(2.0) == doctest::Approx(std::tanh(1.0) / 8.0));
  // A(xi) = (logistic(xi) - 1/2) / (2 xi).
  CHECK(jj_coefficient(3.0) == doctest::Approx((logistic(3.0) - 0.5) / 6.0));
  CHECK_THROWS_AS(jj_coefficient(-1.0), InputError);
}

TEST_CASE("tangent bound lies below log logistic and touches at xi = |eta|") {
  for (double eta = -8.0; eta <= 8.0; eta += 0.37) {
    for (double xi = 0.0; xi <= 9.0; xi += 0.41) {
      CHECK(jj_lower_bound(eta, xi) <= log_logistic(eta) + 1e-12);
    }
    CHECK(jj_lower_bound(eta, std::abs(eta)) == doctest::Approx(log_logistic(eta)).epsilon(1e-12));
  }
}

TEST_CASE("bernoulli bound reduces to the plain bound") {
  for (double eta : {-2.5, -0.1, 0.0, 1.7}) {
    const double xi = 1.3;
    CHECK(jj_bernoulli_bound(1, eta, eta * eta, xi) == doctest::Approx(jj_lower_bound(eta, xi)));
    CHECK(jj_bernoulli_bound(0, eta, eta * eta, xi) == doctest::Approx(jj_lower_bound(-eta, xi)));
  }
}

TEST_CASE("log likelihood matches a pair-by-pair evaluation") {
  const Network net = random_network(9, 0.4, 3);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 0.8);
  LatentParams params;
  params.beta = -0.7;
  params.x = MatrixXd(9, 2);
  for (Eigen::Index i = 0; i < params.x.size(); ++i) params.x.data()[i] = normal(rng);
  params.b = MatrixXd(0, 2);

  double oracle = 0.0;
  for (int i = 0; i < 9; ++i) {
    for (int j = i + 1; j < 9; ++j) {
      const double eta = params.beta + params.x(i, 0) * params.x(j, 0) + params.x(i, 1) * params.x(j, 1);
      const double p = 1.0 / (1.0 + std::exp(-eta));
      oracle += net.y(i, j) ? std::log(p) : std::log(1.0 - p);
    }
  }
  ModelConfig cfg;
  CHECK(log_likelihood(net, params, cfg) == doctest::Approx(oracle).epsilon(1e-12));
  cfg.alpha = 0.5;
  CHECK(log_likelihood(net, params, cfg) == doctest::Approx(0.5 * oracle).epsilon(1e-12));

  params.x = MatrixXd(8, 2);
  CHECK_THROWS_AS(log_likelihood(net, params, cfg), DimensionError);
}

TEST_CASE("network construction") {
  const std::vector<Edge> edges{{0, 1}, {1, 2}, {1, 2}};
  const Network net = Network::from_edges(4, edges);
  CHECK(net.num_positive() == 2);
  CHECK(net.has_edge(2, 1));
  CHECK(net.degree(1) == 2);
  CHECK(net.degree(3) == 0);
  CHECK(net.num_pairs() == 6);
  CHECK(net.density() == doctest::Approx(2.0 / 6.0));

  const std::vector<Edge> loop{{2, 2}};
  CHECK_THROWS_AS(Network::from_edges(4, loop), InputError);
  const std::vector<Edge> far{{0, 4}};
  CHECK_THROWS_AS(Network::from_edges(4, far), InputError);

  AdjacencyMatrix adj = AdjacencyMatrix::Zero(3, 3);
  adj(0, 1) = 1;
  CHECK_THROWS_AS(Network::from_adjacency(adj), InputError);
  adj(1, 0) = 1;
  adj(2, 2) = 1;
  const Network from_adj = Network::from_adjacency(adj);
  CHECK(from_adj.y(2, 2) == 0);
  CHECK(from_adj.num_positive() == 1);
  CHECK(Network::from_adjacency(adj, true).y(2, 2) == 1);
}

TEST_CASE("covariates and config") {
  MatrixXd z(2, 2);
  z << 3, 4, 0, 0;
  const Covariates c(z, true);
  CHECK(c.z(0, 0) == doctest::Approx(0.6));
  CHECK(c.z(1, 1) == 0.0);
  CHECK(Covariates::none(5).p() == 0);

  CHECK(ModelConfig::defaults_for(2, 2).beta_prior_var == 1.0);
  CHECK(ModelConfig::defaults_for(1000, 2).beta_prior_var == doctest::Approx(std::log(1000.0)));
  ModelConfig bad;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(bad.validate(), InputError);

  const Network net = random_network(5, 0.5, 1);
  CHECK_THROWS_AS(check_dimensions(net, Covariates(MatrixXd(4, 2))), DimensionError);
  CHECK_NOTHROW(check_dimensions(net, Covariates(MatrixXd(5, 2))));
}
