#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "calsm/cavi.hpp"
#include "calsm/simgen.hpp"

using namespace calsm;
using namespace calsm::cavi;

namespace {

struct Problem {
  Network net;
  Covariates cov;
  ModelConfig cfg;
};

Problem small_problem(int case_id, int n, int p, std::uint64_t seed) {
  sim::SimScenario s;
  s.case_id = case_id;
  s.n = n;
  s.p = p;
  s.s_b = std::min(3, p);
  s.mismatch_count = 3;
  s.k = 2.0;
  s.seed = seed;
  sim::SimTruth t = sim::simulate(s);
  return {t.network, t.z, ModelConfig::defaults_for(n, 2)};
}

// A few cycles in, so every block has moved away from its initial value.
CaviState warm_state(const Problem& pr, int cycles = 3) {
  CaviState s = init_state(pr.net, pr.cov, pr.cfg, 4);
  for (int c = 0; c < cycles; ++c) run_cycle(s, pr.net, pr.cov, pr.cfg);
  update_xi(s, pr.net, pr.cfg);
  return s;
}

double elbo(const CaviState& s, const Problem& pr) { return compute_elbo(s, pr.net, pr.cov, pr.cfg); }

// The update is the maximizer over its block: nudging any coordinate of the
// result in either direction must not raise the ELBO.
void check_local_max(const CaviState& updated, const Problem& pr,
                     const std::vector<std::function<void(CaviState&, double)>>& nudges) {
  const double base = elbo(updated, pr);
  for (const auto& nudge : nudges) {
    for (double h : {1e-3, -1e-3}) {
      CaviState moved = updated;
      nudge(moved, h);
      CHECK(elbo(moved, pr) <= base + 1e-9 * std::abs(base));
    }
  }
}

double ig_log_density(double x, double a, double b) {
  return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
}

double normal_log_density(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov) {
  const Eigen::LLT<MatrixXd> llt(cov);
  const VectorXd r = llt.matrixL().solve(x - mean);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (x.size() * std::log(2.0 * M_PI) + log_det + r.squaredNorm());
}

}  // namespace

TEST_CASE("each update is a coordinate maximizer") {
  const Problem pr = small_problem(2, 12, 4, 3);
  CaviState s = warm_state(pr);

  SUBCASE("beta") {
    update_beta(s, pr.net, pr.cfg);
    check_local_max(s, pr, {[](CaviState& m, double h) { m.beta_mean += h; },
                            [](CaviState& m, double h) { m.beta_var *= 1.0 + h; }});
  }
  SUBCASE("latent positions") {
    update_x(s, pr.net, pr.cov, pr.cfg);
    // Only the last node is a true block maximum after a sequential sweep.
    const int last = s.n() - 1;
    check_local_max(s, pr, {[last](CaviState& m, double h) { m.x_means(last, 0) += h; },
                            [last](CaviState& m, double h) { m.x_means(last, 1) += h; },
                            [last](CaviState& m, double h) { m.x_covs[last](0, 0) *= 1.0 + h; },
                            [last](CaviState& m, double h) {
                              m.x_covs[last](0, 1) += h * 0.01;
                              m.x_covs[last](1, 0) += h * 0.01;
                            }});
  }
  SUBCASE("node scales") {
    update_scales_x(s, pr.cov, pr.cfg);
    // The sweep ends with the global auxiliary block.
    check_local_max(s, pr, {[](CaviState& m, double h) { m.v_x_global.rate *= 1.0 + h; },
                            [](CaviState& m, double h) { m.v_x_global.shape *= 1.0 + h; }});
  }
  SUBCASE("coefficients") {
    update_b(s, pr.cov, pr.cfg);
    const int last = s.p() - 1;
    check_local_max(s, pr, {[last](CaviState& m, double h) { m.b_means(last, 0) += h; },
                            [last](CaviState& m, double h) { m.b_means(last, 1) -= h; },
                            [last](CaviState& m, double h) { m.b_covs[last] *= 1.0 + h; }});
  }
  SUBCASE("coefficient scales") {
    update_scales_b(s, pr.cfg);
    check_local_max(s, pr, {[](CaviState& m, double h) { m.v_b_global.rate *= 1.0 + h; },
                            [](CaviState& m, double h) { m.v_b_global.shape *= 1.0 + h; }});
  }
  SUBCASE("tangent parameters") {
    update_xi(s, pr.net, pr.cfg);
    const double base = elbo(s, pr);
    for (double h : {1e-3, -1e-3}) {
      CaviState moved = s;
      moved.xi(0, 1) += h;
      moved.xi(1, 0) += h;
      moved.jj_coef(0, 1) = moved.jj_coef(1, 0) = jj_coefficient(moved.xi(0, 1));
      CHECK(elbo(moved, pr) <= base);
    }
  }
}

TEST_CASE("ELBO never decreases across individual updates") {
  for (int c = 1; c <= 3; ++c) {
    const Problem pr = small_problem(c, 15, 5, 100 + c);
    CaviState s = init_state(pr.net, pr.cov, pr.cfg, 9);
    double prev = elbo(s, pr);
    for (int cycle = 0; cycle < 15; ++cycle) {
      std::vector<std::function<void()>> steps{
          [&] { update_xi(s, pr.net, pr.cfg); },          [&] { update_beta(s, pr.net, pr.cfg); },
          [&] { update_x(s, pr.net, pr.cov, pr.cfg); },   [&] { update_scales_x(s, pr.cov, pr.cfg); },
          [&] { update_b(s, pr.cov, pr.cfg); },           [&] { update_scales_b(s, pr.cfg); }};
      for (auto& step : steps) {
        step();
        const double now = elbo(s, pr);
        CHECK(now >= prev - 1e-8 * std::abs(prev));
        prev = now;
      }
    }
  }
}

TEST_CASE("ELBO matches a Monte Carlo estimate of the bound") {
  const Problem pr = small_problem(1, 5, 2, 8);
  const CaviState s = warm_state(pr, 2);
  const double closed = elbo(s, pr);
  const int n = s.n(), p = s.p(), d = s.d();

  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw_ig = [&](const InverseGammaBlock& b) {
    std::gamma_distribution<double> g(b.shape, 1.0);
    return b.rate / g(rng);
  };
  auto draw_gauss = [&](const VectorXd& mean, const MatrixXd& cov) {
    VectorXd e(mean.size());
    for (Eigen::Index k = 0; k < e.size(); ++k) e[k] = normal(rng);
    return VectorXd(mean + Eigen::LLT<MatrixXd>(cov).matrixL() * e);
  };
  auto scale_terms = [&](double s2, double v, const InverseGammaBlock& qs, const InverseGammaBlock& qv) {
    return ig_log_density(s2, 0.5, 1.0 / v) + ig_log_density(v, 0.5, 1.0) - ig_log_density(s2, qs.shape, qs.rate) -
           ig_log_density(v, qv.shape, qv.rate);
  };

  constexpr int kDraws = 200000;
  double sum = 0.0, sum_sq = 0.0;
  for (int t = 0; t < kDraws; ++t) {
    double total = 0.0;
    const double beta = s.beta_mean + std::sqrt(s.beta_var) * normal(rng);
    total += -0.5 * std::log(2.0 * M_PI * pr.cfg.beta_prior_var) -
             std::pow(beta - pr.cfg.beta_prior_mean, 2) / (2.0 * pr.cfg.beta_prior_var);
    total -= -0.5 * std::log(2.0 * M_PI * s.beta_var) - std::pow(beta - s.beta_mean, 2) / (2.0 * s.beta_var);

    MatrixXd x(n, d), b(p, d);
    for (int i = 0; i < n; ++i) x.row(i) = draw_gauss(s.x_means.row(i).transpose(), s.x_covs[i]).transpose();
    for (int k = 0; k < p; ++k) b.row(k) = draw_gauss(s.b_means.row(k).transpose(), s.b_covs[k]).transpose();

    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const double eta = beta + x.row(i).dot(x.row(j));
        total += pr.cfg.alpha * jj_bernoulli_bound(pr.net.y(i, j), eta, eta * eta, s.xi(i, j));
      }
    }

    const double tau_x = draw_ig(s.tau_x), vx = draw_ig(s.v_x_global);
    total += scale_terms(tau_x, vx, s.tau_x, s.v_x_global);
    for (int i = 0; i < n; ++i) {
      const double lam = draw_ig(s.lambda_x[i]), v = draw_ig(s.v_x_local[i]);
      total += scale_terms(lam, v, s.lambda_x[i], s.v_x_local[i]);
      const VectorXd mean = b.transpose() * pr.cov.z.row(i).transpose();
      total += normal_log_density(x.row(i).transpose(), mean, lam * tau_x * MatrixXd::Identity(d, d));
      total -= normal_log_density(x.row(i).transpose(), s.x_means.row(i).transpose(), s.x_covs[i]);
    }
    const double tau_b = draw_ig(s.tau_b), vb = draw_ig(s.v_b_global);
    total += scale_terms(tau_b, vb, s.tau_b, s.v_b_global);
    for (int k = 0; k < p; ++k) {
      const double lam = draw_ig(s.lambda_b[k]), v = draw_ig(s.v_b_local[k]);
      total += scale_terms(lam, v, s.lambda_b[k], s.v_b_local[k]);
      total += normal_log_density(b.row(k).transpose(), VectorXd::Zero(d), lam * tau_b * MatrixXd::Identity(d, d));
      total -= normal_log_density(b.row(k).transpose(), s.b_means.row(k).transpose(), s.b_covs[k]);
    }
    sum += total;
    sum_sq += total * total;
  }
  const double mean = sum / kDraws;
  const double se = std::sqrt((sum_sq / kDraws - mean * mean) / kDraws);
  INFO("closed form " << closed << ", Monte Carlo " << mean << " +- " << se);
  CHECK(std::abs(mean - closed) < 4.0 * se);
}

TEST_CASE("expected residuals match Monte Carlo") {
  const Problem pr = small_problem(2, 6, 3, 12);
  const CaviState s = warm_state(pr, 2);
  const VectorXd closed = expected_residuals(s, pr.cov);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr int kDraws = 100000;
  const int i = 2;
  double sum = 0.0, sum_sq = 0.0;
  for (int t = 0; t < kDraws; ++t) {
    VectorXd e(2);
    e << normal(rng), normal(rng);
    VectorXd x = s.x_means.row(i).transpose() + Eigen::LLT<MatrixXd>(s.x_covs[i]).matrixL() * e;
    VectorXd mean = VectorXd::Zero(2);
    for (int k = 0; k < s.p(); ++k) {
      e << normal(rng), normal(rng);
      const VectorXd bk = s.b_means.row(k).transpose() + Eigen::LLT<MatrixXd>(s.b_covs[k]).matrixL() * e;
      mean += pr.cov.z(i, k) * bk;
    }
    const double r = (x - mean).squaredNorm();
    sum += r;
    sum_sq += r * r;
  }
  const double m = sum / kDraws;
  const double se = std::sqrt((sum_sq / kDraws - m * m) / kDraws);
  CHECK(std::abs(m - closed[i]) < 4.0 * se);
}

TEST_CASE("tangent parameters equal the root second moment") {
  const Problem pr = small_problem(1, 8, 2, 2);
  const CaviState s = warm_state(pr, 1);
  const double eta_sq = (s.x_covs[1] * s.x_covs[4]).trace() + s.x_means.row(1).dot(s.x_covs[4] * s.x_means.row(1).transpose()) +
                        s.x_means.row(4).dot(s.x_covs[1] * s.x_means.row(4).transpose()) +
                        std::pow(s.x_means.row(1).dot(s.x_means.row(4)), 2) +
                        2.0 * s.beta_mean * s.x_means.row(1).dot(s.x_means.row(4)) + s.beta_mean * s.beta_mean +
                        s.beta_var;
  CHECK(s.xi(1, 4) == doctest::Approx(std::sqrt(eta_sq)).epsilon(1e-12));
  CHECK(s.jj_coef(4, 1) == doctest::Approx(jj_coefficient(std::sqrt(eta_sq))));
}

TEST_CASE("fit converges and keeps valid factors") {
  const Problem pr = small_problem(1, 30, 10, 17);
  FitOptions opts;
  opts.check_invariants = true;
  const CaviFit fit = fit_cavi(pr.net, pr.cov, pr.cfg, opts, 1);
  CHECK(fit.report.engine == "cavi");
  CHECK(fit.report.iterations >= 1);
  CHECK(fit.report.iterations <= opts.max_cycles);
  CHECK(fit.state.elbo_trace.size() == static_cast<std::size_t>(fit.report.iterations));
  if (fit.report.converged) CHECK(fit.report.last_change < opts.prob_tolerance);
  for (std::size_t t = 1; t < fit.state.elbo_trace.size(); ++t) {
    CHECK(fit.state.elbo_trace[t] >= fit.state.elbo_trace[t - 1] - 1e-8 * std::abs(fit.state.elbo_trace[t - 1]));
  }
  CHECK_NOTHROW(check_state(fit.state));

  const MatrixXd probs = predict_probabilities(fit.state);
  CHECK(probs.minCoeff() >= 0.0);
  CHECK(probs.maxCoeff() <= 1.0);
  CHECK((probs - probs.transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("fits are reproducible from the seed") {
  const Problem pr = small_problem(3, 20, 4, 5);
  FitOptions opts;
  opts.max_cycles = 10;
  const CaviFit a = fit_cavi(pr.net, pr.cov, pr.cfg, opts, 3);
  const CaviFit b = fit_cavi(pr.net, pr.cov, pr.cfg, opts, 3);
  CHECK(a.state.x_means == b.state.x_means);
  CHECK(a.state.beta_mean == b.state.beta_mean);
}

TEST_CASE("covariate-free model skips the coefficient blocks") {
  const Problem pr = small_problem(1, 15, 3, 6);
  const Covariates none = Covariates::none(15);
  CaviState s = init_state(pr.net, none, pr.cfg, 2);
  run_cycle(s, pr.net, none, pr.cfg);
  CHECK(s.p() == 0);
  CHECK(std::isfinite(compute_elbo(s, pr.net, none, pr.cfg)));
}

TEST_CASE("input validation") {
  const Problem pr = small_problem(1, 10, 2, 1);
  ModelConfig cfg = pr.cfg;
  cfg.d = 10;
  CHECK_THROWS_AS(init_state(pr.net, pr.cov, cfg, 0), InputError);
  CHECK_THROWS_AS(init_state(pr.net, Covariates(MatrixXd(9, 2)), pr.cfg, 0), DimensionError);

  CaviState s = init_state(pr.net, pr.cov, pr.cfg, 0);
  s.x_covs[3](0, 1) = 5.0;
  CHECK_THROWS_AS(check_state(s), NumericalError);
}

TEST_CASE("spectral initial positions fit in the unit ball") {
  const Problem pr = small_problem(1, 40, 5, 33);
  const MatrixXd x = spectral_positions(pr.net, 2);
  CHECK(x.rows() == 40);
  CHECK(x.rowwise().norm().maxCoeff() <= 1.0 + 1e-12);
}
