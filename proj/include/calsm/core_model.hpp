#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "calsm/error.hpp"

namespace calsm {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using AdjacencyMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Unordered node pair with i < j.
struct Edge {
  int i = 0;
  int j = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

// Undirected binary graph. Keeps a dense symmetric 0/1 adjacency and the
// list of upper-triangular positive entries; the two always agree.
class Network {
 public:
  Network() = default;

  // Builds from an edge list. Pairs are symmetrized and deduplicated.
  // Self-loops are rejected unless include_diagonal is set.
  static Network from_edges(int n, std::span<const Edge> edges, bool include_diagonal = false);

  // Validates symmetry and binarity. Any nonzero diagonal entry is kept only
  // when include_diagonal is set.
  static Network from_adjacency(const AdjacencyMatrix& adjacency, bool include_diagonal = false);

  int n() const { return n_; }
  bool include_diagonal() const { return include_diagonal_; }
  const AdjacencyMatrix& adjacency() const { return adjacency_; }
  const std::vector<Edge>& positive_edges() const { return positive_edges_; }
  bool has_edge(int i, int j) const { return adjacency_(i, j) != 0; }
  int y(int i, int j) const { return adjacency_(i, j); }
  int degree(int i) const { return degree_[static_cast<std::size_t>(i)]; }

  std::int64_t num_pairs() const { return static_cast<std::int64_t>(n_) * (n_ - 1) / 2; }
  std::int64_t num_positive() const { return static_cast<std::int64_t>(positive_edges_.size()); }
  std::int64_t num_negative() const { return num_pairs() - num_positive(); }
  double density() const;

 private:
  void index();

  int n_ = 0;
  bool include_diagonal_ = false;
  AdjacencyMatrix adjacency_;
  std::vector<Edge> positive_edges_;
  std::vector<int> degree_;
};

// n x p node features. p may be zero.
struct Covariates {
  MatrixXd z;
  bool normalized = false;

  Covariates() = default;
  explicit Covariates(MatrixXd values, bool normalize = false);

  static Covariates none(int n) { return Covariates(MatrixXd(n, 0)); }

  int n() const { return static_cast<int>(z.rows()); }
  int p() const { return static_cast<int>(z.cols()); }
};

struct ModelConfig {
  int d = 2;
  double alpha = 1.0;           // fractional-likelihood power
  double beta_prior_mean = 0.0;
  double beta_prior_var = 1.0;

  // Intercept prior N(0, log n), clamped below at 1 for tiny graphs.
  static ModelConfig defaults_for(int n, int d);
  void validate() const;
};

struct LatentParams {
  double beta = 0.0;
  MatrixXd x;  // n x d
  MatrixXd b;  // p x d
};

double logistic(double x);
// log(logistic(x)) without overflow.
double log_logistic(double x);

// Jaakkola-Jordan coefficient tanh(xi/2) / (4 xi), with the 1/8 limit at 0.
double jj_coefficient(double xi);

// Quadratic lower bound on log logistic(eta), tight at xi = |eta|.
double jj_lower_bound(double eta, double xi);

// Bernoulli version of the tangent bound:
// (y - 1/2) eta + log logistic(xi) - xi/2 - A(xi) (eta^2 - xi^2).
// eta_sq is passed separately so callers can use E[eta^2].
double jj_bernoulli_bound(int y, double eta, double eta_sq, double xi);

// alpha * sum_{i<j} log Bernoulli(Y_ij | logistic(beta + x_i'x_j)).
double log_likelihood(const Network& net, const LatentParams& params, const ModelConfig& cfg);

void check_dimensions(const Network& net, const Covariates& cov);

}  // namespace calsm
