#pragma once

#include <cstdint>
#include <vector>

#include "calsm/core_model.hpp"
#include "calsm/fit_report.hpp"

// Closed-form coordinate ascent for the covariate-assisted latent space model.
//
// Model: y_ij ~ Bernoulli(logistic(beta + x_i'x_j)) for i<j,
//        x_i ~ N(B'z_i, lambda_xi^2 tau_x^2 I),  b_k ~ N(0, lambda_bk^2 tau_b^2 I),
//        all lambda, tau half-Cauchy, written as Inverse-Gamma mixtures
//        s^2 | v ~ IG(1/2, 1/v), v ~ IG(1/2, 1).
// The Bernoulli terms are replaced by the Jaakkola-Jordan tangent bound with
// one auxiliary xi_ij per pair, which makes every factor conditionally
// conjugate. Each update below is the exact maximizer of the resulting ELBO
// over its own factor, so the ELBO never decreases.
namespace calsm::cavi {

struct GaussianBlock {
  VectorXd mean;
  MatrixXd cov;
};

// IG(shape, rate) with density proportional to x^(-shape-1) exp(-rate/x).
struct InverseGammaBlock {
  double shape = 1.0;
  double rate = 1.0;

  double mean_inverse() const { return shape / rate; }  // E[1/x]
  double mean_log() const;                              // E[log x]
  double entropy() const;
};

// Variational parameters, stored block-wise per family.
struct CaviState {
  double beta_mean = 0.0;
  double beta_var = 1.0;

  MatrixXd x_means;               // n x d
  std::vector<MatrixXd> x_covs;   // n blocks, d x d
  MatrixXd b_means;               // p x d
  std::vector<MatrixXd> b_covs;   // p blocks, d x d

  std::vector<InverseGammaBlock> lambda_x;   // lambda_{x_i}^2
  std::vector<InverseGammaBlock> v_x_local;  // v_{x_i}
  InverseGammaBlock tau_x;                   // tau_x^2
  InverseGammaBlock v_x_global;              // v_x
  std::vector<InverseGammaBlock> lambda_b;
  std::vector<InverseGammaBlock> v_b_local;
  InverseGammaBlock tau_b;
  InverseGammaBlock v_b_global;

  MatrixXd xi;        // symmetric tangent parameters, zero diagonal
  MatrixXd jj_coef;   // A(xi_ij), cached alongside xi

  int cycle_count = 0;
  std::vector<double> elbo_trace;

  int n() const { return static_cast<int>(x_means.rows()); }
  int p() const { return static_cast<int>(b_means.rows()); }
  int d() const { return static_cast<int>(x_means.cols()); }

  GaussianBlock x_block(int i) const;
  GaussianBlock b_block(int k) const;

  // E[1/lambda_xi^2] E[1/tau_x^2], the prior precision of x_i around B'z_i.
  double x_prior_precision(int i) const;
  double b_prior_precision(int k) const;
};

struct FitOptions {
  int max_cycles = 200;
  double prob_tolerance = 1e-4;
  bool track_elbo = true;
  // Verify symmetric positive definite covariances after every cycle.
  bool check_invariants = false;
};

struct CaviFit {
  CaviState state;
  FitReport report;
};

// Top-d eigenvectors of the centered adjacency scaled by sqrt of their
// (nonnegative) eigenvalues, then shrunk by a common factor so the largest row
// norm is at most 1.
MatrixXd spectral_positions(const Network& net, int d);

CaviState init_state(const Network& net, const Covariates& cov, const ModelConfig& cfg, std::uint64_t seed);

void update_xi(CaviState& state, const Network& net, const ModelConfig& cfg);
void update_beta(CaviState& state, const Network& net, const ModelConfig& cfg);
void update_x(CaviState& state, const Network& net, const Covariates& cov, const ModelConfig& cfg);
void update_scales_x(CaviState& state, const Covariates& cov, const ModelConfig& cfg);
void update_b(CaviState& state, const Covariates& cov, const ModelConfig& cfg);
void update_scales_b(CaviState& state, const ModelConfig& cfg);

// E||x_i - B'z_i||^2 under the current factors, for every node.
VectorXd expected_residuals(const CaviState& state, const Covariates& cov);

// Tangent-bound ELBO at the stored xi. All expectations are closed form.
double compute_elbo(const CaviState& state, const Network& net, const Covariates& cov, const ModelConfig& cfg);

// One full cycle in the fixed order xi, beta, x, node scales, b, covariate scales.
void run_cycle(CaviState& state, const Network& net, const Covariates& cov, const ModelConfig& cfg);

CaviFit fit_cavi(const Network& net, const Covariates& cov, const ModelConfig& cfg, const FitOptions& opts,
                 std::uint64_t seed);

// Plug-in logistic(beta_mean + mu_i'mu_j). The diagonal is filled by the same
// formula but does not correspond to a modeled pair.
MatrixXd predict_probabilities(const CaviState& state);

// Throws NumericalError when a covariance is asymmetric or not positive
// definite, or an Inverse-Gamma block or xi entry is invalid.
void check_state(const CaviState& state);

}  // namespace calsm::cavi
