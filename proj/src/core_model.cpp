#include "calsm/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "calsm/kernels.hpp"

namespace calsm {

Network Network::from_edges(int n, std::span<const Edge> edges, bool include_diagonal) {
  if (n < 0) throw InputError("network: negative node count");
  Network net;
  net.n_ = n;
  net.include_diagonal_ = include_diagonal;
  net.adjacency_ = AdjacencyMatrix::Zero(n, n);
  for (const Edge& e : edges) {
    if (e.i < 0 || e.j < 0 || e.i >= n || e.j >= n) {
      throw InputError("network: edge (" + std::to_string(e.i) + "," + std::to_string(e.j) +
                       ") out of range for n=" + std::to_string(n));
    }
    if (e.i == e.j && !include_diagonal) {
      throw InputError("network: self-loop at node " + std::to_string(e.i));
    }
    net.adjacency_(e.i, e.j) = 1;
    net.adjacency_(e.j, e.i) = 1;
  }
  net.index();
  return net;
}

Network Network::from_adjacency(const AdjacencyMatrix& adjacency, bool include_diagonal) {
  if (adjacency.rows() != adjacency.cols()) {
    throw DimensionError("network: adjacency is " + std::to_string(adjacency.rows()) + "x" +
                         std::to_string(adjacency.cols()) + ", expected square");
  }
  const auto n = adjacency.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (adjacency(i, j) > 1) {
        throw InputError("network: non-binary entry at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
      if (adjacency(i, j) != adjacency(j, i)) {
        throw InputError("network: asymmetric entry at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  Network net;
  net.n_ = static_cast<int>(n);
  net.include_diagonal_ = include_diagonal;
  net.adjacency_ = adjacency;
  if (!include_diagonal) net.adjacency_.diagonal().setZero();
  net.index();
  return net;
}

void Network::index() {
  positive_edges_.clear();
  degree_.assign(static_cast<std::size_t>(n_), 0);
  for (int i = 0; i < n_; ++i) {
    for (int j = i + 1; j < n_; ++j) {
      if (adjacency_(i, j)) {
        positive_edges_.push_back({i, j});
        ++degree_[static_cast<std::size_t>(i)];
        ++degree_[static_cast<std::size_t>(j)];
      }
    }
  }
}

double Network::density() const {
  const auto pairs = num_pairs();
  return pairs > 0 ? static_cast<double>(num_positive()) / static_cast<double>(pairs) : 0.0;
}

Covariates::Covariates(MatrixXd values, bool normalize) : z(std::move(values)), normalized(normalize) {
  if (!normalize) return;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double norm = z.row(i).norm();
    if (norm > 0.0) z.row(i) /= norm;
  }
}

ModelConfig ModelConfig::defaults_for(int n, int d) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.beta_prior_var = std::max(1.0, std::log(static_cast<double>(std::max(n, 1))));
  return cfg;
}

void ModelConfig::validate() const {
  if (d < 1) throw InputError("model: latent dimension d must be >= 1");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("model: alpha must lie in (0, 1]");
  if (!(beta_prior_var > 0.0)) throw InputError("model: beta_prior_var must be positive");
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_logistic(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double jj_coefficient(double xi) {
  if (xi < 0.0) throw InputError("jj_coefficient: xi must be nonnegative");
  if (xi < 1e-8) return 0.125;
  return std::tanh(0.5 * xi) / (4.0 * xi);
}

double jj_lower_bound(double eta, double xi) {
  return log_logistic(xi) + 0.5 * (eta - xi) - jj_coefficient(xi) * (eta * eta - xi * xi);
}

double jj_bernoulli_bound(int y, double eta, double eta_sq, double xi) {
  return (y - 0.5) * eta + log_logistic(xi) - 0.5 * xi - jj_coefficient(xi) * (eta_sq - xi * xi);
}

double log_likelihood(const Network& net, const LatentParams& params, const ModelConfig& cfg) {
  if (params.x.rows() != net.n()) {
    throw DimensionError("log_likelihood: x has " + std::to_string(params.x.rows()) +
                         " rows but the network has n=" + std::to_string(net.n()));
  }
  if (params.x.cols() != cfg.d) {
    throw DimensionError("log_likelihood: x has " + std::to_string(params.x.cols()) +
                         " columns but d=" + std::to_string(cfg.d));
  }
  return cfg.alpha * kernels::pair_loglik(net, params.beta, params.x);
}

void check_dimensions(const Network& net, const Covariates& cov) {
  if (cov.n() != net.n()) {
    throw DimensionError("covariates have n=" + std::to_string(cov.n()) + " rows but the network has n=" +
                         std::to_string(net.n()));
  }
}

}  // namespace calsm
