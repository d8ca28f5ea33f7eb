#pragma once

#include <span>

#include "calsm/core_model.hpp"

// Dense O(n^2) pair kernels shared by the engines. Each kernel has an OpenMP
// version (calsm::kernels) and a plain serial reference (calsm::kernels::serial)
// written straight from the closed forms; tests check them against each other.
//
// Reductions accumulate per-row partial sums and then add rows in index order,
// so results do not depend on the number of workers.
namespace calsm::kernels {

// Number of OpenMP workers used by the parallel kernels. Reads
// CALSM_NUM_THREADS on first use; defaults to the OpenMP runtime's choice.
int worker_count();
void set_worker_count(int workers);

// Moments of the linear predictor eta_ij = beta + x_i'x_j under independent
// Gaussian factors q(beta) = N(beta_mean, beta_var), q(x_i) = N(means_i, covs_i).
struct PredictorMoments {
  const MatrixXd& means;            // n x d
  std::span<const MatrixXd> covs;   // n blocks, d x d
  double beta_mean;
  double beta_var;
};

// Writes E[eta_ij^2] to the strict upper and lower triangles of out; diagonal 0.
void expected_eta_sq(const PredictorMoments& m, MatrixXd& out);

// Sets xi_ij = sqrt(E[eta_ij^2]) and a_ij = A(xi_ij) for i != j; diagonals 0.
void tangent_update(const PredictorMoments& m, MatrixXd& xi, MatrixXd& a);

// alpha * sum_{i<j} E_q[tangent bound of log p(y_ij | eta_ij)] at fixed xi.
double tangent_loglik(const Network& net, const PredictorMoments& m, const MatrixXd& xi, double alpha);

// sum over i<j (and i=j when the network models its diagonal) of the exact
// Bernoulli log-likelihood at eta = beta + x_i'x_j. Not scaled by alpha.
double pair_loglik(const Network& net, double beta, const MatrixXd& x);

// logistic(beta + x_i'x_j) for all i, j.
void probabilities(double beta, const MatrixXd& x, MatrixXd& out);

// Mean of |a_ij - b_ij| over i<j.
double mean_abs_upper_diff(const MatrixXd& a, const MatrixXd& b);

namespace serial {

void expected_eta_sq(const PredictorMoments& m, MatrixXd& out);
void tangent_update(const PredictorMoments& m, MatrixXd& xi, MatrixXd& a);
double tangent_loglik(const Network& net, const PredictorMoments& m, const MatrixXd& xi, double alpha);
double pair_loglik(const Network& net, double beta, const MatrixXd& x);
void probabilities(double beta, const MatrixXd& x, MatrixXd& out);
double mean_abs_upper_diff(const MatrixXd& a, const MatrixXd& b);

}  // namespace serial

}  // namespace calsm::kernels
