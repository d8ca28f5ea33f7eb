#include "calsm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace calsm::kernels {

namespace {

int g_workers = 0;  // 0 = not yet configured

int configured_workers() {
  if (g_workers > 0) return g_workers;
  int workers = 1;
#ifdef _OPENMP
  workers = omp_get_max_threads();
#endif
  if (const char* env = std::getenv("CALSM_NUM_THREADS")) {
    const int requested = std::atoi(env);
    if (requested > 0) workers = requested;
  }
  g_workers = workers;
  return g_workers;
}

// Row i of the result holds vec(Sigma_i + mu_i mu_i').
MatrixXd flat_second_moments(const PredictorMoments& m) {
  const auto n = m.means.rows();
  const auto d = m.means.cols();
  MatrixXd flat(n, d * d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const MatrixXd s = m.covs[static_cast<std::size_t>(i)] + m.means.row(i).transpose() * m.means.row(i);
    flat.row(i) = Eigen::Map<const VectorXd>(s.data(), d * d).transpose();
  }
  return flat;
}

double sum_rows(const VectorXd& partial) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < partial.size(); ++i) total += partial[i];
  return total;
}

double pair_term(int y, double eta) { return y ? log_logistic(eta) : log_logistic(-eta); }

}  // namespace

int worker_count() { return configured_workers(); }

void set_worker_count(int workers) { g_workers = workers > 0 ? workers : 0; }

void expected_eta_sq(const PredictorMoments& m, MatrixXd& out) {
  const auto n = m.means.rows();
  const MatrixXd flat = flat_second_moments(m);
  const double beta_sq = m.beta_mean * m.beta_mean + m.beta_var;
  out.resize(n, n);
  out.diagonal().setZero();
#pragma omp parallel for schedule(dynamic, 16) num_threads(configured_workers())
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = flat.row(i).dot(flat.row(j)) + 2.0 * m.beta_mean * m.means.row(i).dot(m.means.row(j)) + beta_sq;
      out(i, j) = v;
      out(j, i) = v;
    }
  }
}

void tangent_update(const PredictorMoments& m, MatrixXd& xi, MatrixXd& a) {
  const auto n = m.means.rows();
  MatrixXd eta_sq;
  expected_eta_sq(m, eta_sq);
  xi.resize(n, n);
  a.resize(n, n);
  xi.diagonal().setZero();
  a.diagonal().setZero();
  int bad_row = -1;
#pragma omp parallel for schedule(dynamic, 16) num_threads(configured_workers())
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double v = eta_sq(i, j);
      if (v < -1e-10) {
#pragma omp critical
        bad_row = static_cast<int>(i);
      }
      v = std::sqrt(std::max(v, 0.0));
      const double coef = jj_coefficient(v);
      xi(i, j) = xi(j, i) = v;
      a(i, j) = a(j, i) = coef;
    }
  }
  if (bad_row >= 0) {
    throw NumericalError("update_xi: negative second moment of the predictor in row " + std::to_string(bad_row));
  }
}

double tangent_loglik(const Network& net, const PredictorMoments& m, const MatrixXd& xi, double alpha) {
  const auto n = m.means.rows();
  const MatrixXd flat = flat_second_moments(m);
  const double beta_sq = m.beta_mean * m.beta_mean + m.beta_var;
  VectorXd partial = VectorXd::Zero(n);
#pragma omp parallel for schedule(dynamic, 16) num_threads(configured_workers())
  for (Eigen::Index i = 0; i < n; ++i) {
    double row = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double inner = m.means.row(i).dot(m.means.row(j));
      const double eta = m.beta_mean + inner;
      const double eta_sq = flat.row(i).dot(flat.row(j)) + 2.0 * m.beta_mean * inner + beta_sq;
      row += jj_bernoulli_bound(net.y(static_cast<int>(i), static_cast<int>(j)), eta, eta_sq, xi(i, j));
    }
    partial[i] = row;
  }
  return alpha * sum_rows(partial);
}

double pair_loglik(const Network& net, double beta, const MatrixXd& x) {
  const int n = net.n();
  const int start_offset = net.include_diagonal() ? 0 : 1;
  VectorXd partial = VectorXd::Zero(n);
#pragma omp parallel for schedule(dynamic, 16) num_threads(configured_workers())
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = i + start_offset; j < n; ++j) {
      row += pair_term(net.y(i, j), beta + x.row(i).dot(x.row(j)));
    }
    partial[i] = row;
  }
  return sum_rows(partial);
}

void probabilities(double beta, const MatrixXd& x, MatrixXd& out) {
  const auto n = x.rows();
  out.resize(n, n);
  const MatrixXd gram = x * x.transpose();
#pragma omp parallel for schedule(static) num_threads(configured_workers())
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) out(i, j) = logistic(beta + gram(i, j));
  }
}

double mean_abs_upper_diff(const MatrixXd& a, const MatrixXd& b) {
  const auto n = a.rows();
  if (n < 2) return 0.0;
  VectorXd partial = VectorXd::Zero(n);
#pragma omp parallel for schedule(dynamic, 16) num_threads(configured_workers())
  for (Eigen::Index i = 0; i < n; ++i) {
    double row = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) row += std::abs(a(i, j) - b(i, j));
    partial[i] = row;
  }
  return sum_rows(partial) / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

namespace serial {

void expected_eta_sq(const PredictorMoments& m, MatrixXd& out) {
  const auto n = m.means.rows();
  out = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd mu_i = m.means.row(i).transpose();
    const MatrixXd& cov_i = m.covs[static_cast<std::size_t>(i)];
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const VectorXd mu_j = m.means.row(j).transpose();
      const MatrixXd& cov_j = m.covs[static_cast<std::size_t>(j)];
      const double inner = mu_i.dot(mu_j);
      const double v = (cov_i * cov_j).trace() + mu_i.dot(cov_j * mu_i) + mu_j.dot(cov_i * mu_j) + inner * inner +
                       2.0 * m.beta_mean * inner + m.beta_mean * m.beta_mean + m.beta_var;
      out(i, j) = v;
      out(j, i) = v;
    }
  }
}

void tangent_update(const PredictorMoments& m, MatrixXd& xi, MatrixXd& a) {
  MatrixXd eta_sq;
  serial::expected_eta_sq(m, eta_sq);
  const auto n = eta_sq.rows();
  xi = MatrixXd::Zero(n, n);
  a = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (eta_sq(i, j) < -1e-10) throw NumericalError("update_xi: negative second moment of the predictor");
      xi(i, j) = xi(j, i) = std::sqrt(std::max(eta_sq(i, j), 0.0));
      a(i, j) = a(j, i) = jj_coefficient(xi(i, j));
    }
  }
}

double tangent_loglik(const Network& net, const PredictorMoments& m, const MatrixXd& xi, double alpha) {
  MatrixXd eta_sq;
  serial::expected_eta_sq(m, eta_sq);
  double total = 0.0;
  for (int i = 0; i < net.n(); ++i) {
    for (int j = i + 1; j < net.n(); ++j) {
      const double eta = m.beta_mean + m.means.row(i).dot(m.means.row(j));
      total += jj_bernoulli_bound(net.y(i, j), eta, eta_sq(i, j), xi(i, j));
    }
  }
  return alpha * total;
}

double pair_loglik(const Network& net, double beta, const MatrixXd& x) {
  double total = 0.0;
  for (int i = 0; i < net.n(); ++i) {
    for (int j = net.include_diagonal() ? i : i + 1; j < net.n(); ++j) {
      const double p = logistic(beta + x.row(i).dot(x.row(j)));
      total += net.y(i, j) ? std::log(p) : std::log1p(-p);
    }
  }
  return total;
}

void probabilities(double beta, const MatrixXd& x, MatrixXd& out) {
  const auto n = x.rows();
  out.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = logistic(beta + x.row(i).dot(x.row(j)));
  }
}

double mean_abs_upper_diff(const MatrixXd& a, const MatrixXd& b) {
  const auto n = a.rows();
  if (n < 2) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) total += std::abs(a(i, j) - b(i, j));
  }
  return total / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

}  // namespace serial

}  // namespace calsm::kernels
