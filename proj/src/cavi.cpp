#include "calsm/cavi.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include <boost/math/special_functions/digamma.hpp>

#include "calsm/kernels.hpp"

namespace calsm::cavi {

namespace {

constexpr double kInitCovScale = 0.1;
constexpr double kInitJitter = 1e-2;
const double kLogTwoPi = std::log(2.0 * std::numbers::pi);
const double kLogGammaHalf = std::lgamma(0.5);

kernels::PredictorMoments moments_of(const CaviState& s) {
  return {s.x_means, s.x_covs, s.beta_mean, s.beta_var};
}

MatrixXd flat_second_moment(const MatrixXd& mean_rows, const std::vector<MatrixXd>& covs) {
  const auto n = mean_rows.rows();
  const auto d = mean_rows.cols();
  MatrixXd flat(n, d * d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const MatrixXd s = covs[static_cast<std::size_t>(i)] + mean_rows.row(i).transpose() * mean_rows.row(i);
    flat.row(i) = Eigen::Map<const Eigen::RowVectorXd>(s.data(), d * d);
  }
  return flat;
}

// E[log p(s^2 | v)] + E[log p(v)] for s^2 | v ~ IG(1/2, 1/v), v ~ IG(1/2, 1).
double half_cauchy_prior_term(const InverseGammaBlock& scale, const InverseGammaBlock& aux) {
  const double scale_term =
      -0.5 * aux.mean_log() - kLogGammaHalf - 1.5 * scale.mean_log() - aux.mean_inverse() * scale.mean_inverse();
  const double aux_term = -kLogGammaHalf - 1.5 * aux.mean_log() - aux.mean_inverse();
  return scale_term + aux_term;
}

double gaussian_entropy(const MatrixXd& cov) {
  const auto d = static_cast<double>(cov.rows());
  Eigen::LLT<MatrixXd> llt(cov);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * d * (1.0 + kLogTwoPi) + 0.5 * log_det;
}

MatrixXd symmetrized(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

double InverseGammaBlock::mean_log() const { return std::log(rate) - boost::math::digamma(shape); }

double InverseGammaBlock::entropy() const {
  return shape + std::log(rate) + std::lgamma(shape) - (1.0 + shape) * boost::math::digamma(shape);
}

GaussianBlock CaviState::x_block(int i) const {
  return {x_means.row(i).transpose(), x_covs[static_cast<std::size_t>(i)]};
}

GaussianBlock CaviState::b_block(int k) const {
  return {b_means.row(k).transpose(), b_covs[static_cast<std::size_t>(k)]};
}

double CaviState::x_prior_precision(int i) const {
  return lambda_x[static_cast<std::size_t>(i)].mean_inverse() * tau_x.mean_inverse();
}

double CaviState::b_prior_precision(int k) const {
  return lambda_b[static_cast<std::size_t>(k)].mean_inverse() * tau_b.mean_inverse();
}

MatrixXd spectral_positions(const Network& net, int d) {
  const int n = net.n();
  MatrixXd centered = net.adjacency().cast<double>();
  centered.array() -= centered.mean();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(centered);
  // Eigenvalues come back ascending; take the d largest.
  MatrixXd x(n, d);
  for (int c = 0; c < d; ++c) {
    const Eigen::Index col = n - 1 - c;
    const double value = std::max(eig.eigenvalues()[col], 0.0);
    x.col(c) = eig.eigenvectors().col(col) * std::sqrt(value);
  }
  const double max_norm = x.rowwise().norm().maxCoeff();
  if (max_norm > 1.0) x /= max_norm;
  return x;
}

CaviState init_state(const Network& net, const Covariates& cov, const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  check_dimensions(net, cov);
  const int n = net.n();
  const int p = cov.p();
  const int d = cfg.d;
  if (n < d + 1) {
    throw InputError("init_state: need n >= d + 1 nodes (n=" + std::to_string(n) + ", d=" + std::to_string(d) + ")");
  }

  CaviState s;
  s.beta_mean = 0.0;
  s.beta_var = cfg.beta_prior_var;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, kInitJitter);
  s.x_means = spectral_positions(net, d);
  for (Eigen::Index i = 0; i < s.x_means.size(); ++i) s.x_means.data()[i] += jitter(rng);
  s.x_covs.assign(static_cast<std::size_t>(n), kInitCovScale * MatrixXd::Identity(d, d));
  s.b_means = MatrixXd::Zero(p, d);
  s.b_covs.assign(static_cast<std::size_t>(p), kInitCovScale * MatrixXd::Identity(d, d));

  // Every Inverse-Gamma block starts at its update shape with E[1/x] = 1.
  const double local_shape = 0.5 * (d + 1);
  s.lambda_x.assign(static_cast<std::size_t>(n), {local_shape, local_shape});
  s.v_x_local.assign(static_cast<std::size_t>(n), {1.0, 1.0});
  s.tau_x = {0.5 * (n * d + 1), 0.5 * (n * d + 1)};
  s.v_x_global = {1.0, 1.0};
  s.lambda_b.assign(static_cast<std::size_t>(p), {local_shape, local_shape});
  s.v_b_local.assign(static_cast<std::size_t>(p), {1.0, 1.0});
  s.tau_b = {0.5 * (p * d + 1), 0.5 * (p * d + 1)};
  s.v_b_global = {1.0, 1.0};

  update_xi(s, net, cfg);
  return s;
}

void update_xi(CaviState& state, const Network& net, const ModelConfig& /*cfg*/) {
  if (state.n() != net.n()) throw DimensionError("update_xi: state n does not match network n");
  kernels::tangent_update(moments_of(state), state.xi, state.jj_coef);
}

void update_beta(CaviState& state, const Network& net, const ModelConfig& cfg) {
  const int n = net.n();
  const MatrixXd gram = state.x_means * state.x_means.transpose();
  double a_sum = 0.0;
  double data_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double a = state.jj_coef(i, j);
      a_sum += a;
      data_sum += net.y(i, j) - 0.5 - 2.0 * a * gram(i, j);
    }
  }
  const double prior_precision = 1.0 / cfg.beta_prior_var;
  state.beta_var = 1.0 / (prior_precision + 2.0 * cfg.alpha * a_sum);
  state.beta_mean = state.beta_var * (cfg.alpha * data_sum + cfg.beta_prior_mean * prior_precision);
}

void update_x(CaviState& state, const Network& net, const Covariates& cov, const ModelConfig& cfg) {
  const int n = state.n();
  const int d = state.d();
  const double alpha = cfg.alpha;
  MatrixXd second = flat_second_moment(state.x_means, state.x_covs);
  const MatrixXd prior_means = cov.p() > 0 ? MatrixXd(cov.z * state.b_means) : MatrixXd::Zero(n, d);
  const MatrixXd identity = MatrixXd::Identity(d, d);
  VectorXd coef(n);

  // Sequential sweep: node i sees the already-updated blocks of nodes < i.
  for (int i = 0; i < n; ++i) {
    const double w = state.x_prior_precision(i);
    const Eigen::RowVectorXd prec_flat = (2.0 * alpha) * state.jj_coef.row(i) * second;
    MatrixXd precision = Eigen::Map<const MatrixXd>(prec_flat.data(), d, d);
    precision = symmetrized(precision);
    precision.diagonal().array() += w;

    for (int j = 0; j < n; ++j) {
      coef[j] = j == i ? 0.0 : alpha * (net.y(i, j) - 0.5 - 2.0 * state.jj_coef(i, j) * state.beta_mean);
    }
    const VectorXd h = state.x_means.transpose() * coef + w * prior_means.row(i).transpose();

    Eigen::LLT<MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("update_x: precision of node " + std::to_string(i) + " is not positive definite");
    }
    MatrixXd cov_i = symmetrized(llt.solve(identity));
    state.x_means.row(i) = (cov_i * h).transpose();
    state.x_covs[static_cast<std::size_t>(i)] = cov_i;

    const MatrixXd s = cov_i + state.x_means.row(i).transpose() * state.x_means.row(i);
    second.row(i) = Eigen::Map<const Eigen::RowVectorXd>(s.data(), d * d);
  }
}

VectorXd expected_residuals(const CaviState& state, const Covariates& cov) {
  const int n = state.n();
  VectorXd r(n);
  for (int i = 0; i < n; ++i) {
    r[i] = state.x_covs[static_cast<std::size_t>(i)].trace() + state.x_means.row(i).squaredNorm();
  }
  if (cov.p() == 0) return r;

  VectorXd b_traces(cov.p());
  for (int k = 0; k < cov.p(); ++k) b_traces[k] = state.b_covs[static_cast<std::size_t>(k)].trace();
  const MatrixXd prior_means = cov.z * state.b_means;
  const VectorXd weighted_traces = cov.z.array().square().matrix() * b_traces;
  for (int i = 0; i < n; ++i) {
    r[i] += weighted_traces[i] + prior_means.row(i).squaredNorm() -
            2.0 * prior_means.row(i).dot(state.x_means.row(i));
  }
  return r;
}

void update_scales_x(CaviState& state, const Covariates& cov, const ModelConfig& cfg) {
  const int n = state.n();
  const int d = cfg.d;
  const VectorXd r = expected_residuals(state, cov);
  for (int i = 0; i < n; ++i) {
    if (r[i] < -1e-10) {
      throw NumericalError("update_scales_x: negative expected squared residual at node " + std::to_string(i));
    }
  }

  const double inv_tau = state.tau_x.mean_inverse();
  double tau_rate = 0.0;
  for (int i = 0; i < n; ++i) {
    auto& lambda = state.lambda_x[static_cast<std::size_t>(i)];
    auto& aux = state.v_x_local[static_cast<std::size_t>(i)];
    const double ri = std::max(r[i], 0.0);
    lambda.shape = 0.5 * (d + 1);
    lambda.rate = 0.5 * inv_tau * ri + aux.mean_inverse();
    aux.shape = 1.0;
    aux.rate = 1.0 + lambda.mean_inverse();
    tau_rate += 0.5 * lambda.mean_inverse() * ri;
  }
  state.tau_x.shape = 0.5 * (n * d + 1);
  state.tau_x.rate = tau_rate + state.v_x_global.mean_inverse();
  state.v_x_global.shape = 1.0;
  state.v_x_global.rate = 1.0 + state.tau_x.mean_inverse();
}

void update_b(CaviState& state, const Covariates& cov, const ModelConfig& /*cfg*/) {
  const int n = state.n();
  const int p = cov.p();
  const int d = state.d();
  if (p == 0) return;

  VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = state.x_prior_precision(i);
  // residual_i = mu_xi - sum_l z_il mu_bl, kept current through the sweep.
  MatrixXd residual = state.x_means - cov.z * state.b_means;
  const MatrixXd identity = MatrixXd::Identity(d, d);

  for (int k = 0; k < p; ++k) {
    const auto zk = cov.z.col(k);
    residual += zk * state.b_means.row(k);  // now excludes covariate k
    const double precision = (w.array() * zk.array().square()).sum() + state.b_prior_precision(k);
    const double variance = 1.0 / precision;
    const Eigen::RowVectorXd mean = variance * ((w.array() * zk.array()).matrix().transpose() * residual);
    state.b_means.row(k) = mean;
    state.b_covs[static_cast<std::size_t>(k)] = variance * identity;
    residual -= zk * mean;
  }
}

void update_scales_b(CaviState& state, const ModelConfig& cfg) {
  const int p = state.p();
  const int d = cfg.d;
  if (p == 0) return;

  const double inv_tau = state.tau_b.mean_inverse();
  double tau_rate = 0.0;
  for (int k = 0; k < p; ++k) {
    auto& lambda = state.lambda_b[static_cast<std::size_t>(k)];
    auto& aux = state.v_b_local[static_cast<std::size_t>(k)];
    const double norm_sq = state.b_covs[static_cast<std::size_t>(k)].trace() + state.b_means.row(k).squaredNorm();
    lambda.shape = 0.5 * (d + 1);
    lambda.rate = 0.5 * inv_tau * norm_sq + aux.mean_inverse();
    aux.shape = 1.0;
    aux.rate = 1.0 + lambda.mean_inverse();
    tau_rate += 0.5 * lambda.mean_inverse() * norm_sq;
  }
  state.tau_b.shape = 0.5 * (p * d + 1);
  state.tau_b.rate = tau_rate + state.v_b_global.mean_inverse();
  state.v_b_global.shape = 1.0;
  state.v_b_global.rate = 1.0 + state.tau_b.mean_inverse();
}

double compute_elbo(const CaviState& state, const Network& net, const Covariates& cov, const ModelConfig& cfg) {
  const int n = state.n();
  const int p = state.p();
  const double d = cfg.d;

  double elbo = kernels::tangent_loglik(net, moments_of(state), state.xi, cfg.alpha);

  // Intercept.
  const double s0 = cfg.beta_prior_var;
  const double diff = state.beta_mean - cfg.beta_prior_mean;
  elbo += -0.5 * std::log(2.0 * std::numbers::pi * s0) - (diff * diff + state.beta_var) / (2.0 * s0);
  elbo += 0.5 * (1.0 + kLogTwoPi + std::log(state.beta_var));

  // Latent positions around B'z_i.
  const VectorXd r = expected_residuals(state, cov);
  const double tau_x_log = state.tau_x.mean_log();
  for (int i = 0; i < n; ++i) {
    const auto& lambda = state.lambda_x[static_cast<std::size_t>(i)];
    elbo += -0.5 * d * kLogTwoPi - 0.5 * d * (lambda.mean_log() + tau_x_log) -
            0.5 * lambda.mean_inverse() * state.tau_x.mean_inverse() * r[i];
    elbo += gaussian_entropy(state.x_covs[static_cast<std::size_t>(i)]);
    elbo += half_cauchy_prior_term(lambda, state.v_x_local[static_cast<std::size_t>(i)]);
    elbo += lambda.entropy() + state.v_x_local[static_cast<std::size_t>(i)].entropy();
  }
  elbo += half_cauchy_prior_term(state.tau_x, state.v_x_global);
  elbo += state.tau_x.entropy() + state.v_x_global.entropy();

  // Covariate coefficients. The global block is only part of the model when p > 0.
  if (p > 0) {
    const double tau_b_log = state.tau_b.mean_log();
    for (int k = 0; k < p; ++k) {
      const auto& lambda = state.lambda_b[static_cast<std::size_t>(k)];
      const double norm_sq = state.b_covs[static_cast<std::size_t>(k)].trace() + state.b_means.row(k).squaredNorm();
      elbo += -0.5 * d * kLogTwoPi - 0.5 * d * (lambda.mean_log() + tau_b_log) -
              0.5 * lambda.mean_inverse() * state.tau_b.mean_inverse() * norm_sq;
      elbo += gaussian_entropy(state.b_covs[static_cast<std::size_t>(k)]);
      elbo += half_cauchy_prior_term(lambda, state.v_b_local[static_cast<std::size_t>(k)]);
      elbo += lambda.entropy() + state.v_b_local[static_cast<std::size_t>(k)].entropy();
    }
    elbo += half_cauchy_prior_term(state.tau_b, state.v_b_global);
    elbo += state.tau_b.entropy() + state.v_b_global.entropy();
  }
  return elbo;
}

void run_cycle(CaviState& state, const Network& net, const Covariates& cov, const ModelConfig& cfg) {
  update_xi(state, net, cfg);
  update_beta(state, net, cfg);
  update_x(state, net, cov, cfg);
  update_scales_x(state, cov, cfg);
  update_b(state, cov, cfg);
  update_scales_b(state, cfg);
  ++state.cycle_count;
}

CaviFit fit_cavi(const Network& net, const Covariates& cov, const ModelConfig& cfg, const FitOptions& opts,
                 std::uint64_t seed) {
  if (opts.max_cycles < 1) throw InputError("fit_cavi: max_cycles must be >= 1");
  if (!(opts.prob_tolerance > 0.0)) throw InputError("fit_cavi: prob_tolerance must be positive");
  const auto start = std::chrono::steady_clock::now();

  CaviFit fit{init_state(net, cov, cfg, seed), {}};
  CaviState& state = fit.state;
  FitReport& report = fit.report;
  report.engine = "cavi";

  MatrixXd previous = predict_probabilities(state);
  for (int cycle = 0; cycle < opts.max_cycles; ++cycle) {
    run_cycle(state, net, cov, cfg);
    if (opts.check_invariants) check_state(state);
    if (opts.track_elbo) state.elbo_trace.push_back(compute_elbo(state, net, cov, cfg));

    MatrixXd current = predict_probabilities(state);
    report.last_change = kernels::mean_abs_upper_diff(current, previous);
    previous = std::move(current);
    if (report.last_change < opts.prob_tolerance) {
      report.converged = true;
      break;
    }
  }

  report.iterations = state.cycle_count;
  report.final_elbo = state.elbo_trace.empty() ? compute_elbo(state, net, cov, cfg) : state.elbo_trace.back();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return fit;
}

MatrixXd predict_probabilities(const CaviState& state) {
  MatrixXd probs;
  kernels::probabilities(state.beta_mean, state.x_means, probs);
  return probs;
}

void check_state(const CaviState& state) {
  auto check_cov = [](const MatrixXd& c, const char* family, std::size_t index) {
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
      throw NumericalError(std::string(family) + " covariance " + std::to_string(index) + " is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(c, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues().minCoeff() > 0.0)) {
      throw NumericalError(std::string(family) + " covariance " + std::to_string(index) + " is not positive definite");
    }
  };
  for (std::size_t i = 0; i < state.x_covs.size(); ++i) check_cov(state.x_covs[i], "x", i);
  for (std::size_t k = 0; k < state.b_covs.size(); ++k) check_cov(state.b_covs[k], "b", k);

  auto check_ig = [](const InverseGammaBlock& b, const char* family) {
    if (!(b.shape > 0.0 && b.rate > 0.0 && std::isfinite(b.shape) && std::isfinite(b.rate))) {
      throw NumericalError(std::string(family) + " Inverse-Gamma block has nonpositive parameters");
    }
  };
  for (const auto& b : state.lambda_x) check_ig(b, "lambda_x");
  for (const auto& b : state.v_x_local) check_ig(b, "v_x");
  for (const auto& b : state.lambda_b) check_ig(b, "lambda_b");
  for (const auto& b : state.v_b_local) check_ig(b, "v_b");
  check_ig(state.tau_x, "tau_x");
  check_ig(state.v_x_global, "v_x global");
  check_ig(state.tau_b, "tau_b");
  check_ig(state.v_b_global, "v_b global");
  if (!(state.beta_var > 0.0)) throw NumericalError("beta variance is not positive");

  if ((state.xi - state.xi.transpose()).cwiseAbs().maxCoeff() > 0.0 || state.xi.minCoeff() < 0.0) {
    throw NumericalError("xi must be symmetric and nonnegative");
  }
}

}  // namespace calsm::cavi
