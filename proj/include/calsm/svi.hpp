#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "calsm/core_model.hpp"
#include "calsm/fit_report.hpp"
#include "calsm/random.hpp"

// Stochastic variational inference for large sparse networks.
//
// Variational family: q(beta) = N(mu, s^2); q(x_i) = N(mu_i, s_i^2 I);
// q(b_k) = N(mu_k, s_k^2 I); Gamma factors on every local scale lambda_xi,
// lambda_bk and on the global scales tau_x, tau_b. Each step subsamples
// positive edges, draws negatives, and ascends a Monte-Carlo ELBO estimate
// whose likelihood part is the reweighted minibatch sum.
namespace calsm::svi {

enum class NegativeScheme {
  uniform,       // uniform over all unordered non-edges
  row_anchored,  // (i, j') with j' uniform over non-neighbours of i
};

struct GammaInit {
  double lambda_shape = 10.0;
  double lambda_rate = 10.0;
  double tau_shape = 0.1;
  double tau_rate = 1.0;
};

struct SviConfig {
  double learning_rate = 0.005;
  double weight_decay = 1e-4;
  int batch_size = 256;
  int negatives_per_positive = 5;
  int mc_samples = 10;
  int max_epochs = 200;
  int early_stop_patience = 50;
  double lr_decay_factor = 0.5;
  int lr_decay_patience = 20;
  double grad_clip_norm = 1.0;
  GammaInit gamma_init;
  NegativeScheme negative_scheme = NegativeScheme::uniform;
  double elbo_smoothing = 0.9;
  // Sampled scales are floored here; the floored draw carries no gradient.
  double min_scale = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
};

// All unconstrained parameters live in one flat vector so the optimizer can
// treat them uniformly; the accessors expose the named blocks. Standard
// deviations and Gamma shape/rate are stored as logarithms.
class SviState {
 public:
  SviState() = default;
  SviState(int n, int p, int d);

  int n() const { return n_; }
  int p() const { return p_; }
  int d() const { return d_; }

  double& beta_mean() { return theta_[0]; }
  double beta_mean() const { return theta_[0]; }
  double& beta_log_sd() { return theta_[1]; }
  double beta_log_sd() const { return theta_[1]; }

  Eigen::Map<MatrixXd> x_means() { return {theta_.data() + x_mean_, n_, d_}; }
  Eigen::Map<const MatrixXd> x_means() const { return {theta_.data() + x_mean_, n_, d_}; }
  Eigen::Map<VectorXd> x_log_sd() { return {theta_.data() + x_sd_, n_}; }
  Eigen::Map<const VectorXd> x_log_sd() const { return {theta_.data() + x_sd_, n_}; }
  Eigen::Map<MatrixXd> b_means() { return {theta_.data() + b_mean_, p_, d_}; }
  Eigen::Map<const MatrixXd> b_means() const { return {theta_.data() + b_mean_, p_, d_}; }
  Eigen::Map<VectorXd> b_log_sd() { return {theta_.data() + b_sd_, p_}; }
  Eigen::Map<const VectorXd> b_log_sd() const { return {theta_.data() + b_sd_, p_}; }

  // Gamma(shape, rate) blocks: lambda_x has n entries, lambda_b has p, the
  // global tau blocks one each.
  Eigen::Map<VectorXd> lambda_x_log_shape() { return {theta_.data() + lx_, n_}; }
  Eigen::Map<const VectorXd> lambda_x_log_shape() const { return {theta_.data() + lx_, n_}; }
  Eigen::Map<VectorXd> lambda_x_log_rate() { return {theta_.data() + lx_ + n_, n_}; }
  Eigen::Map<const VectorXd> lambda_x_log_rate() const { return {theta_.data() + lx_ + n_, n_}; }
  double& tau_x_log_shape() { return theta_[tx_]; }
  double tau_x_log_shape() const { return theta_[tx_]; }
  double& tau_x_log_rate() { return theta_[tx_ + 1]; }
  double tau_x_log_rate() const { return theta_[tx_ + 1]; }
  Eigen::Map<VectorXd> lambda_b_log_shape() { return {theta_.data() + lb_, p_}; }
  Eigen::Map<const VectorXd> lambda_b_log_shape() const { return {theta_.data() + lb_, p_}; }
  Eigen::Map<VectorXd> lambda_b_log_rate() { return {theta_.data() + lb_ + p_, p_}; }
  Eigen::Map<const VectorXd> lambda_b_log_rate() const { return {theta_.data() + lb_ + p_, p_}; }
  double& tau_b_log_shape() { return theta_[tb_]; }
  double tau_b_log_shape() const { return theta_[tb_]; }
  double& tau_b_log_rate() { return theta_[tb_ + 1]; }
  double tau_b_log_rate() const { return theta_[tb_ + 1]; }

  VectorXd& theta() { return theta_; }
  const VectorXd& theta() const { return theta_; }

  // Same layout, all zeros: used as a gradient buffer.
  SviState zeros_like() const { return SviState(n_, p_, d_); }

 private:
  int n_ = 0;
  int p_ = 0;
  int d_ = 0;
  Eigen::Index x_mean_ = 0, x_sd_ = 0, b_mean_ = 0, b_sd_ = 0, lx_ = 0, tx_ = 0, lb_ = 0, tb_ = 0;
  VectorXd theta_;
};

struct NegativeSample {
  std::vector<Edge> edges;
  int skipped_rows = 0;  // anchors with no non-neighbour to draw from
};

// Uniform sample without replacement of min(batch_size, |E+|) positive edges.
std::vector<Edge> sample_minibatch(const Network& net, int batch_size, Rng& rng);

// For each positive (i, j), `ratio` pairs (i, j') with j' != i and y_ij' = 0,
// drawn uniformly by rejection. Rows without any non-neighbour are skipped
// with a warning.
NegativeSample sample_negatives(const Network& net, std::span<const Edge> positives, int ratio, Rng& rng);

// `count` unordered non-edges drawn uniformly with replacement.
std::vector<Edge> sample_uniform_negatives(const Network& net, std::int64_t count, Rng& rng);

// (|E+|/|E~+|) sum_{E~+} log p(y=1) + (|E-|/|E~-|) sum_{E~-} log p(y=0).
// An empty negative sample falls back to the exact negative sum.
double weighted_loglik(const Network& net, const MatrixXd& x, double beta, std::span<const Edge> positives,
                       std::span<const Edge> negatives);

// Initial state: spectral latent means, zero coefficients, intercept at the
// logit of the observed density, small Gaussian spreads, Gamma factors from
// svicfg.gamma_init.
SviState init_state(const Network& net, const Covariates& cov, const ModelConfig& cfg, const SviConfig& svicfg);

struct ElboEstimate {
  double value = 0.0;
  double loglik = 0.0;  // the weighted likelihood part, averaged over draws
};

// Monte-Carlo ELBO at the given edge samples. When grad is non-null it
// receives the gradient of the estimate in the state's layout.
ElboEstimate estimate_elbo(const SviState& state, const Network& net, const Covariates& cov, const ModelConfig& cfg,
                           const SviConfig& svicfg, std::span<const Edge> positives, std::span<const Edge> negatives,
                           Rng& rng, SviState* grad = nullptr);

// Draws its own minibatch and negatives, then calls estimate_elbo.
double elbo_estimate(const SviState& state, const Network& net, const Covariates& cov, const ModelConfig& cfg,
                     const SviConfig& svicfg, Rng& rng);

struct SviFit {
  SviState state;
  FitReport report;
  double initial_elbo = 0.0;
  std::vector<double> epoch_elbo;     // mean step estimate per epoch
  std::vector<double> smoothed_elbo;  // exponentially smoothed
};

SviFit fit_svi(const Network& net, const Covariates& cov, const ModelConfig& cfg, const SviConfig& svicfg);

MatrixXd predict_probabilities(const SviState& state);

// Gamma(shape, 1) draw together with d draw / d shape (implicit
// reparameterization through the CDF).
struct GammaDraw {
  double value = 0.0;
  double dshape = 0.0;
};
GammaDraw sample_standard_gamma(double shape, Rng& rng);

}  // namespace calsm::svi
