#include "calsm/svi.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_set>

#include <boost/math/policies/policy.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "calsm/cavi.hpp"
#include "calsm/kernels.hpp"
#include "calsm/log.hpp"

namespace calsm::svi {

namespace {

using QuietPolicy = boost::math::policies::policy<
    boost::math::policies::domain_error<boost::math::policies::errno_on_error>,
    boost::math::policies::overflow_error<boost::math::policies::errno_on_error>,
    boost::math::policies::underflow_error<boost::math::policies::ignore_error>,
    boost::math::policies::evaluation_error<boost::math::policies::errno_on_error>>;

const double kLogTwoPi = std::log(2.0 * std::numbers::pi);
const double kLogHalfCauchyNorm = std::log(2.0 / std::numbers::pi);

// Box for the log-parameters; keeps exp() finite through long runs.
constexpr double kLogSdMin = -20.0, kLogSdMax = 5.0;
constexpr double kLogShapeMin = -7.0, kLogShapeMax = 14.0;
constexpr double kLogRateMin = -20.0, kLogRateMax = 20.0;

double gamma_entropy(double shape, double rate) {
  return shape - std::log(rate) + std::lgamma(shape) + (1.0 - shape) * boost::math::digamma(shape);
}

// d/d(log shape) of the Gamma entropy.
double gamma_entropy_dlog_shape(double shape) {
  return shape * (1.0 + (1.0 - shape) * boost::math::trigamma(shape));
}

struct ScaleDraw {
  double value = 0.0;
  double dlog_shape = 0.0;  // d value / d log shape
  double dlog_rate = 0.0;   // d value / d log rate
};

ScaleDraw draw_scale(double shape, double rate, double floor, Rng& rng) {
  const GammaDraw g = sample_standard_gamma(shape, rng);
  const double value = g.value / rate;
  if (!(value >= floor) || !std::isfinite(value)) return {floor, 0.0, 0.0};
  return {value, shape * g.dshape / rate, -value};
}

void clamp_parameters(SviState& s) {
  auto clamp_vec = [](auto v, double lo, double hi) { v = v.cwiseMax(lo).cwiseMin(hi); };
  s.beta_log_sd() = std::clamp(s.beta_log_sd(), kLogSdMin, kLogSdMax);
  clamp_vec(s.x_log_sd(), kLogSdMin, kLogSdMax);
  clamp_vec(s.b_log_sd(), kLogSdMin, kLogSdMax);
  clamp_vec(s.lambda_x_log_shape(), kLogShapeMin, kLogShapeMax);
  clamp_vec(s.lambda_x_log_rate(), kLogRateMin, kLogRateMax);
  clamp_vec(s.lambda_b_log_shape(), kLogShapeMin, kLogShapeMax);
  clamp_vec(s.lambda_b_log_rate(), kLogRateMin, kLogRateMax);
  s.tau_x_log_shape() = std::clamp(s.tau_x_log_shape(), kLogShapeMin, kLogShapeMax);
  s.tau_x_log_rate() = std::clamp(s.tau_x_log_rate(), kLogRateMin, kLogRateMax);
  s.tau_b_log_shape() = std::clamp(s.tau_b_log_shape(), kLogShapeMin, kLogShapeMax);
  s.tau_b_log_rate() = std::clamp(s.tau_b_log_rate(), kLogRateMin, kLogRateMax);
}

std::vector<Edge> all_negatives(const Network& net) {
  std::vector<Edge> out;
  out.reserve(static_cast<std::size_t>(net.num_negative()));
  for (int i = 0; i < net.n(); ++i) {
    for (int j = i + 1; j < net.n(); ++j) {
      if (!net.has_edge(i, j)) out.push_back({i, j});
    }
  }
  return out;
}

}  // namespace

void SviConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InputError("svi: learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw InputError("svi: weight_decay must be nonnegative");
  if (batch_size < 1) throw InputError("svi: batch_size must be >= 1");
  if (negatives_per_positive < 1) throw InputError("svi: negatives_per_positive must be >= 1");
  if (mc_samples < 1) throw InputError("svi: mc_samples must be >= 1");
  if (max_epochs < 1) throw InputError("svi: max_epochs must be >= 1");
  if (early_stop_patience < 1 || lr_decay_patience < 1) throw InputError("svi: patience values must be >= 1");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw InputError("svi: lr_decay_factor must lie in (0, 1]");
  if (!(grad_clip_norm > 0.0)) throw InputError("svi: grad_clip_norm must be positive");
  if (!(gamma_init.lambda_shape > 0 && gamma_init.lambda_rate > 0 && gamma_init.tau_shape > 0 &&
        gamma_init.tau_rate > 0)) {
    throw InputError("svi: Gamma initial parameters must be positive");
  }
  if (!(elbo_smoothing >= 0.0 && elbo_smoothing < 1.0)) throw InputError("svi: elbo_smoothing must lie in [0, 1)");
  if (!(min_scale > 0.0)) throw InputError("svi: min_scale must be positive");
}

SviState::SviState(int n, int p, int d) : n_(n), p_(p), d_(d) {
  Eigen::Index at = 2;
  x_mean_ = at;
  at += static_cast<Eigen::Index>(n) * d;
  x_sd_ = at;
  at += n;
  b_mean_ = at;
  at += static_cast<Eigen::Index>(p) * d;
  b_sd_ = at;
  at += p;
  lx_ = at;
  at += 2 * n;
  tx_ = at;
  at += 2;
  lb_ = at;
  at += 2 * p;
  tb_ = at;
  at += 2;
  theta_ = VectorXd::Zero(at);
}

GammaDraw sample_standard_gamma(double shape, Rng& rng) {
  double log_value = 0.0;
  if (shape >= 1.0) {
    std::gamma_distribution<double> dist(shape, 1.0);
    log_value = std::log(dist(rng));
  } else {
    // Gamma(a) = Gamma(a + 1) * U^(1/a), evaluated in log space so small
    // shapes do not underflow before the floor is applied.
    std::gamma_distribution<double> dist(shape + 1.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = 1.0 - unif(rng);
    log_value = std::log(dist(rng)) + std::log(u) / shape;
  }
  GammaDraw draw;
  draw.value = std::exp(log_value);
  if (!(draw.value > 0.0) || !std::isfinite(draw.value)) return draw;

  // Implicit reparameterization: d value / d shape = -(dF/dshape) / f(value).
  const double pdf = boost::math::gamma_p_derivative(shape, draw.value, QuietPolicy());
  if (!(pdf > 0.0) || !std::isfinite(pdf)) return draw;
  const double h = std::max(1e-7, 1e-5 * shape);
  const double lower = std::max(shape - h, 0.5 * shape);
  const double upper = shape + h;
  double dcdf = 0.0;
  if (boost::math::gamma_p(shape, draw.value, QuietPolicy()) < 0.5) {
    dcdf = (boost::math::gamma_p(upper, draw.value, QuietPolicy()) -
            boost::math::gamma_p(lower, draw.value, QuietPolicy())) / (upper - lower);
  } else {
    dcdf = -(boost::math::gamma_q(upper, draw.value, QuietPolicy()) -
             boost::math::gamma_q(lower, draw.value, QuietPolicy())) / (upper - lower);
  }
  const double dshape = -dcdf / pdf;
  if (std::isfinite(dshape)) draw.dshape = dshape;
  return draw;
}

std::vector<Edge> sample_minibatch(const Network& net, int batch_size, Rng& rng) {
  const auto& edges = net.positive_edges();
  if (edges.empty()) throw InputError("sample_minibatch: network has no positive edges");
  if (batch_size < 1) throw InputError("sample_minibatch: batch_size must be >= 1");
  const auto m = static_cast<std::int64_t>(edges.size());
  if (batch_size >= m) return edges;

  // Floyd's algorithm: k distinct indices out of m in O(k) expected time.
  std::unordered_set<std::int64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(batch_size) * 2);
  for (std::int64_t j = m - batch_size; j < m; ++j) {
    std::uniform_int_distribution<std::int64_t> pick(0, j);
    const std::int64_t t = pick(rng);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  std::vector<std::int64_t> idx(chosen.begin(), chosen.end());
  std::sort(idx.begin(), idx.end());
  std::vector<Edge> out;
  out.reserve(idx.size());
  for (auto t : idx) out.push_back(edges[static_cast<std::size_t>(t)]);
  return out;
}

NegativeSample sample_negatives(const Network& net, std::span<const Edge> positives, int ratio, Rng& rng) {
  if (ratio < 1) throw InputError("sample_negatives: ratio must be >= 1");
  const int n = net.n();
  NegativeSample out;
  out.edges.reserve(positives.size() * static_cast<std::size_t>(ratio));
  std::uniform_int_distribution<int> pick(0, std::max(n - 2, 0));
  for (const Edge& e : positives) {
    const int i = e.i;
    const int free = n - 1 - net.degree(i);
    if (free <= 0) {
      ++out.skipped_rows;
      warn("sample_negatives: node " + std::to_string(i) + " has no non-neighbours; skipping its negatives");
      continue;
    }
    for (int r = 0; r < ratio; ++r) {
      int j = 0;
      do {
        j = pick(rng);
        if (j >= i) ++j;  // uniform over nodes other than i
      } while (net.has_edge(i, j));
      out.edges.push_back({std::min(i, j), std::max(i, j)});
    }
  }
  return out;
}

std::vector<Edge> sample_uniform_negatives(const Network& net, std::int64_t count, Rng& rng) {
  std::vector<Edge> out;
  if (net.num_negative() == 0 || count <= 0) return out;
  out.reserve(static_cast<std::size_t>(count));
  const int n = net.n();
  std::uniform_int_distribution<int> first(0, n - 1);
  std::uniform_int_distribution<int> second(0, n - 2);
  while (static_cast<std::int64_t>(out.size()) < count) {
    const int i = first(rng);
    int j = second(rng);
    if (j >= i) ++j;
    if (net.has_edge(i, j)) continue;
    out.push_back({std::min(i, j), std::max(i, j)});
  }
  return out;
}

double weighted_loglik(const Network& net, const MatrixXd& x, double beta, std::span<const Edge> positives,
                       std::span<const Edge> negatives) {
  if (positives.empty()) throw InputError("weighted_loglik: positive sample is empty");
  auto eta = [&](const Edge& e) { return beta + x.row(e.i).dot(x.row(e.j)); };

  double pos_sum = 0.0;
  for (const Edge& e : positives) pos_sum += log_logistic(eta(e));
  double total = static_cast<double>(net.num_positive()) / static_cast<double>(positives.size()) * pos_sum;

  if (negatives.empty()) {
    for (const Edge& e : all_negatives(net)) total += log_logistic(-eta(e));
    return total;
  }
  double neg_sum = 0.0;
  for (const Edge& e : negatives) neg_sum += log_logistic(-eta(e));
  return total + static_cast<double>(net.num_negative()) / static_cast<double>(negatives.size()) * neg_sum;
}

SviState init_state(const Network& net, const Covariates& cov, const ModelConfig& cfg, const SviConfig& svicfg) {
  cfg.validate();
  svicfg.validate();
  check_dimensions(net, cov);
  const int n = net.n();
  const int p = cov.p();
  const int d = cfg.d;
  if (n < d + 1) throw InputError("svi init: need n >= d + 1 nodes");

  SviState s(n, p, d);
  const double density = std::clamp(net.density(), 1e-6, 1.0 - 1e-6);
  s.beta_mean() = std::log(density / (1.0 - density));
  s.beta_log_sd() = std::log(0.1);

  Rng rng(derive_seed(svicfg.seed, {0x1417}));
  std::normal_distribution<double> jitter(0.0, 1e-2);
  MatrixXd x0 = cavi::spectral_positions(net, d);
  for (Eigen::Index i = 0; i < x0.size(); ++i) x0.data()[i] += jitter(rng);
  s.x_means() = x0;
  s.x_log_sd().setConstant(std::log(0.1));
  s.b_means().setZero();
  s.b_log_sd().setConstant(std::log(0.1));

  const auto& g = svicfg.gamma_init;
  s.lambda_x_log_shape().setConstant(std::log(g.lambda_shape));
  s.lambda_x_log_rate().setConstant(std::log(g.lambda_rate));
  s.lambda_b_log_shape().setConstant(std::log(g.lambda_shape));
  s.lambda_b_log_rate().setConstant(std::log(g.lambda_rate));
  s.tau_x_log_shape() = std::log(g.tau_shape);
  s.tau_x_log_rate() = std::log(g.tau_rate);
  s.tau_b_log_shape() = std::log(g.tau_shape);
  s.tau_b_log_rate() = std::log(g.tau_rate);
  return s;
}

ElboEstimate estimate_elbo(const SviState& state, const Network& net, const Covariates& cov, const ModelConfig& cfg,
                           const SviConfig& svicfg, std::span<const Edge> positives, std::span<const Edge> negatives,
                           Rng& rng, SviState* grad) {
  if (positives.empty()) throw InputError("estimate_elbo: positive sample is empty");
  const int n = state.n();
  const int p = state.p();
  const int d = state.d();
  const double dd = d;
  const int samples = svicfg.mc_samples;
  const double inv_s = 1.0 / samples;
  const double alpha = cfg.alpha;
  const double floor = svicfg.min_scale;
  if (grad) *grad = state.zeros_like();

  // Likelihood terms: each sampled pair with its weight and label.
  std::vector<Edge> fallback;
  if (negatives.empty() && net.num_negative() > 0) {
    fallback = all_negatives(net);
    negatives = fallback;
  }
  const double pos_weight = static_cast<double>(net.num_positive()) / static_cast<double>(positives.size());
  const double neg_weight =
      negatives.empty() ? 0.0 : static_cast<double>(net.num_negative()) / static_cast<double>(negatives.size());

  // Nodes touched by the sample get a slot in the per-draw position buffer.
  std::vector<int> slot(static_cast<std::size_t>(n), -1);
  std::vector<int> touched;
  auto touch = [&](int v) {
    if (slot[static_cast<std::size_t>(v)] < 0) {
      slot[static_cast<std::size_t>(v)] = static_cast<int>(touched.size());
      touched.push_back(v);
    }
  };
  for (const Edge& e : positives) touch(e.i), touch(e.j);
  for (const Edge& e : negatives) touch(e.i), touch(e.j);
  const auto m = static_cast<Eigen::Index>(touched.size());

  const auto x_means = state.x_means();
  const auto b_means = state.b_means();
  const double sd_beta = std::exp(state.beta_log_sd());
  const VectorXd sd_x = state.x_log_sd().array().exp();
  const VectorXd var_b = (2.0 * state.b_log_sd().array()).exp();

  // Expected squared deviations under q(x), q(B); they do not depend on the draws.
  const MatrixXd prior_means = p > 0 ? MatrixXd(cov.z * b_means) : MatrixXd::Zero(n, d);
  const MatrixXd deviation = x_means - prior_means;
  const MatrixXd z_sq = p > 0 ? MatrixXd(cov.z.array().square()) : MatrixXd(n, 0);
  const VectorXd spread_from_b = p > 0 ? VectorXd(z_sq * var_b) : VectorXd::Zero(n);
  VectorXd q_x(n);
  for (int i = 0; i < n; ++i) q_x[i] = deviation.row(i).squaredNorm() + dd * sd_x[i] * sd_x[i] + dd * spread_from_b[i];
  VectorXd q_b(p);
  for (int k = 0; k < p; ++k) q_b[k] = b_means.row(k).squaredNorm() + dd * var_b[k];

  const VectorXd lx_shape = state.lambda_x_log_shape().array().exp();
  const VectorXd lx_rate = state.lambda_x_log_rate().array().exp();
  const VectorXd lb_shape = state.lambda_b_log_shape().array().exp();
  const VectorXd lb_rate = state.lambda_b_log_rate().array().exp();
  const double tx_shape = std::exp(state.tau_x_log_shape()), tx_rate = std::exp(state.tau_x_log_rate());
  const double tb_shape = std::exp(state.tau_b_log_shape()), tb_rate = std::exp(state.tau_b_log_rate());

  VectorXd precision_x = VectorXd::Zero(n);  // averaged 1/(lambda^2 tau^2)
  VectorXd precision_b = VectorXd::Zero(p);
  double loglik_total = 0.0;
  double prior_total = 0.0;

  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd eps(m, d), xs(m, d), gx(m, d);

  for (int s = 0; s < samples; ++s) {
    double loglik = 0.0;
    double g_beta = 0.0;
    double eps_beta = 0.0;
    for (int attempt = 0;; ++attempt) {
      eps_beta = normal(rng);
      const double beta_s = state.beta_mean() + sd_beta * eps_beta;
      for (Eigen::Index t = 0; t < m; ++t) {
        const int v = touched[static_cast<std::size_t>(t)];
        for (int c = 0; c < d; ++c) eps(t, c) = normal(rng);
        xs.row(t) = x_means.row(v) + sd_x[v] * eps.row(t);
      }
      loglik = 0.0;
      g_beta = 0.0;
      gx.setZero();
      auto accumulate = [&](const Edge& e, int y, double weight) {
        const Eigen::Index a = slot[static_cast<std::size_t>(e.i)];
        const Eigen::Index b = slot[static_cast<std::size_t>(e.j)];
        const double eta = beta_s + xs.row(a).dot(xs.row(b));
        loglik += weight * (y ? log_logistic(eta) : log_logistic(-eta));
        const double g = weight * (y - logistic(eta));
        g_beta += g;
        gx.row(a) += g * xs.row(b);
        gx.row(b) += g * xs.row(a);
      };
      for (const Edge& e : positives) accumulate(e, 1, alpha * pos_weight);
      for (const Edge& e : negatives) accumulate(e, 0, alpha * neg_weight);
      loglik *= alpha;
      if (std::isfinite(loglik)) break;
      if (attempt >= 1) throw NumericalError("estimate_elbo: non-finite likelihood draw after resampling");
    }
    loglik_total += loglik;

    if (grad) {
      grad->beta_mean() += inv_s * g_beta;
      grad->beta_log_sd() += inv_s * g_beta * eps_beta * sd_beta;
      auto gm = grad->x_means();
      auto gs = grad->x_log_sd();
      for (Eigen::Index t = 0; t < m; ++t) {
        const int v = touched[static_cast<std::size_t>(t)];
        gm.row(v) += inv_s * gx.row(t);
        gs[v] += inv_s * gx.row(t).dot(eps.row(t)) * sd_x[v];
      }
    }

    // Scales and the Gaussian prior terms given the drawn scales.
    const ScaleDraw tx = draw_scale(tx_shape, tx_rate, floor, rng);
    double dtau_x = -2.0 * tx.value / (1.0 + tx.value * tx.value);
    double prior = kLogHalfCauchyNorm - std::log1p(tx.value * tx.value);
    for (int i = 0; i < n; ++i) {
      const ScaleDraw lx = draw_scale(lx_shape[i], lx_rate[i], floor, rng);
      const double c = 1.0 / (lx.value * lx.value * tx.value * tx.value);
      const double fit = q_x[i] * c;
      prior += -0.5 * dd * kLogTwoPi - dd * (std::log(lx.value) + std::log(tx.value)) - 0.5 * fit;
      prior += kLogHalfCauchyNorm - std::log1p(lx.value * lx.value);
      precision_x[i] += inv_s * c;
      dtau_x += (fit - dd) / tx.value;
      if (grad) {
        const double dl = (fit - dd) / lx.value - 2.0 * lx.value / (1.0 + lx.value * lx.value);
        grad->lambda_x_log_shape()[i] += inv_s * dl * lx.dlog_shape;
        grad->lambda_x_log_rate()[i] += inv_s * dl * lx.dlog_rate;
      }
    }
    if (grad) {
      grad->tau_x_log_shape() += inv_s * dtau_x * tx.dlog_shape;
      grad->tau_x_log_rate() += inv_s * dtau_x * tx.dlog_rate;
    }

    if (p > 0) {
      const ScaleDraw tb = draw_scale(tb_shape, tb_rate, floor, rng);
      double dtau_b = -2.0 * tb.value / (1.0 + tb.value * tb.value);
      prior += kLogHalfCauchyNorm - std::log1p(tb.value * tb.value);
      for (int k = 0; k < p; ++k) {
        const ScaleDraw lb = draw_scale(lb_shape[k], lb_rate[k], floor, rng);
        const double c = 1.0 / (lb.value * lb.value * tb.value * tb.value);
        const double fit = q_b[k] * c;
        prior += -0.5 * dd * kLogTwoPi - dd * (std::log(lb.value) + std::log(tb.value)) - 0.5 * fit;
        prior += kLogHalfCauchyNorm - std::log1p(lb.value * lb.value);
        precision_b[k] += inv_s * c;
        dtau_b += (fit - dd) / tb.value;
        if (grad) {
          const double dl = (fit - dd) / lb.value - 2.0 * lb.value / (1.0 + lb.value * lb.value);
          grad->lambda_b_log_shape()[k] += inv_s * dl * lb.dlog_shape;
          grad->lambda_b_log_rate()[k] += inv_s * dl * lb.dlog_rate;
        }
      }
      if (grad) {
        grad->tau_b_log_shape() += inv_s * dtau_b * tb.dlog_shape;
        grad->tau_b_log_rate() += inv_s * dtau_b * tb.dlog_rate;
      }
    }
    prior_total += prior;
  }

  // Intercept prior and all entropies are closed form.
  const double s0 = cfg.beta_prior_var;
  const double beta_diff = state.beta_mean() - cfg.beta_prior_mean;
  double analytic = -0.5 * std::log(2.0 * std::numbers::pi * s0) - (beta_diff * beta_diff + sd_beta * sd_beta) / (2.0 * s0);
  const double half_log_2pie = 0.5 * (1.0 + kLogTwoPi);
  analytic += half_log_2pie + state.beta_log_sd();
  analytic += dd * (n * half_log_2pie + state.x_log_sd().sum());
  for (int i = 0; i < n; ++i) analytic += gamma_entropy(lx_shape[i], lx_rate[i]);
  analytic += gamma_entropy(tx_shape, tx_rate);
  if (p > 0) {
    analytic += dd * (p * half_log_2pie + state.b_log_sd().sum());
    for (int k = 0; k < p; ++k) analytic += gamma_entropy(lb_shape[k], lb_rate[k]);
    analytic += gamma_entropy(tb_shape, tb_rate);
  }

  if (grad) {
    grad->beta_mean() += -beta_diff / s0;
    grad->beta_log_sd() += -sd_beta * sd_beta / s0 + 1.0;

    auto gm = grad->x_means();
    auto gs = grad->x_log_sd();
    for (int i = 0; i < n; ++i) {
      gm.row(i) -= precision_x[i] * deviation.row(i);
      gs[i] += -precision_x[i] * dd * sd_x[i] * sd_x[i] + dd;
      grad->lambda_x_log_shape()[i] += gamma_entropy_dlog_shape(lx_shape[i]);
      grad->lambda_x_log_rate()[i] += -1.0;
    }
    grad->tau_x_log_shape() += gamma_entropy_dlog_shape(tx_shape);
    grad->tau_x_log_rate() += -1.0;

    if (p > 0) {
      auto gb = grad->b_means();
      auto gbs = grad->b_log_sd();
      gb += cov.z.transpose() * (precision_x.asDiagonal() * deviation);
      const VectorXd weighted = z_sq.transpose() * precision_x;
      for (int k = 0; k < p; ++k) {
        gb.row(k) -= precision_b[k] * b_means.row(k);
        gbs[k] += -dd * var_b[k] * (weighted[k] + precision_b[k]) + dd;
        grad->lambda_b_log_shape()[k] += gamma_entropy_dlog_shape(lb_shape[k]);
        grad->lambda_b_log_rate()[k] += -1.0;
      }
      grad->tau_b_log_shape() += gamma_entropy_dlog_shape(tb_shape);
      grad->tau_b_log_rate() += -1.0;
    }
  }

  ElboEstimate out;
  out.loglik = loglik_total * inv_s;
  out.value = out.loglik + prior_total * inv_s + analytic;
  return out;
}

double elbo_estimate(const SviState& state, const Network& net, const Covariates& cov, const ModelConfig& cfg,
                     const SviConfig& svicfg, Rng& rng) {
  const auto positives = sample_minibatch(net, svicfg.batch_size, rng);
  std::vector<Edge> negatives;
  if (svicfg.negative_scheme == NegativeScheme::uniform) {
    negatives = sample_uniform_negatives(
        net, static_cast<std::int64_t>(positives.size()) * svicfg.negatives_per_positive, rng);
  } else {
    negatives = sample_negatives(net, positives, svicfg.negatives_per_positive, rng).edges;
  }
  return estimate_elbo(state, net, cov, cfg, svicfg, positives, negatives, rng).value;
}

SviFit fit_svi(const Network& net, const Covariates& cov, const ModelConfig& cfg, const SviConfig& svicfg) {
  const auto start = std::chrono::steady_clock::now();
  SviFit fit{init_state(net, cov, cfg, svicfg), {}, 0.0, {}, {}};
  if (net.num_positive() == 0) throw InputError("fit_svi: network has no positive edges");
  SviState& state = fit.state;
  FitReport& report = fit.report;
  report.engine = "svi";

  Rng rng(svicfg.seed);
  const auto steps_per_epoch =
      (net.num_positive() + svicfg.batch_size - 1) / static_cast<std::int64_t>(svicfg.batch_size);

  auto draw_edges = [&](std::vector<Edge>& positives, std::vector<Edge>& negatives) {
    positives = sample_minibatch(net, svicfg.batch_size, rng);
    if (svicfg.negative_scheme == NegativeScheme::uniform) {
      negatives = sample_uniform_negatives(
          net, static_cast<std::int64_t>(positives.size()) * svicfg.negatives_per_positive, rng);
    } else {
      negatives = sample_negatives(net, positives, svicfg.negatives_per_positive, rng).edges;
    }
  };

  std::vector<Edge> positives, negatives;
  {
    const auto probes = std::min<std::int64_t>(steps_per_epoch, 10);
    double total = 0.0;
    for (std::int64_t t = 0; t < probes; ++t) {
      draw_edges(positives, negatives);
      total += estimate_elbo(state, net, cov, cfg, svicfg, positives, negatives, rng).value;
    }
    fit.initial_elbo = total / static_cast<double>(probes);
  }

  // AdamW on the negative ELBO.
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  VectorXd m1 = VectorXd::Zero(state.theta().size());
  VectorXd m2 = VectorXd::Zero(state.theta().size());
  SviState grad = state.zeros_like();
  double lr = svicfg.learning_rate;
  long long step = 0;
  double smoothed = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  int since_decay = 0;

  for (int epoch = 0; epoch < svicfg.max_epochs; ++epoch) {
    double epoch_total = 0.0;
    for (std::int64_t t = 0; t < steps_per_epoch; ++t) {
      draw_edges(positives, negatives);
      const ElboEstimate est = estimate_elbo(state, net, cov, cfg, svicfg, positives, negatives, rng, &grad);
      epoch_total += est.value;

      VectorXd g = -grad.theta();
      const double norm = g.norm();
      if (!std::isfinite(norm)) throw NumericalError("fit_svi: non-finite gradient");
      if (norm > svicfg.grad_clip_norm) g *= svicfg.grad_clip_norm / norm;

      ++step;
      m1 = beta1 * m1 + (1.0 - beta1) * g;
      m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      VectorXd& theta = state.theta();
      theta *= 1.0 - lr * svicfg.weight_decay;
      theta.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + adam_eps);
      clamp_parameters(state);
    }

    const double epoch_elbo = epoch_total / static_cast<double>(steps_per_epoch);
    smoothed = epoch == 0 ? epoch_elbo : svicfg.elbo_smoothing * smoothed + (1.0 - svicfg.elbo_smoothing) * epoch_elbo;
    fit.epoch_elbo.push_back(epoch_elbo);
    fit.smoothed_elbo.push_back(smoothed);
    report.iterations = epoch + 1;

    if (smoothed > best) {
      best = smoothed;
      since_best = 0;
      since_decay = 0;
    } else {
      ++since_best;
      ++since_decay;
    }
    if (since_decay >= svicfg.lr_decay_patience) {
      lr *= svicfg.lr_decay_factor;
      since_decay = 0;
    }
    if (since_best >= svicfg.early_stop_patience) {
      report.converged = true;
      break;
    }
  }

  report.optimizer_steps = step;
  report.final_elbo = fit.epoch_elbo.empty() ? fit.initial_elbo : fit.epoch_elbo.back();
  report.best_smoothed_elbo = best;
  report.final_learning_rate = lr;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return fit;
}

MatrixXd predict_probabilities(const SviState& state) {
  MatrixXd probs;
  kernels::probabilities(state.beta_mean(), MatrixXd(state.x_means()), probs);
  return probs;
}

}  // namespace calsm::svi
