#include <doctest.h>

#include <cmath>
#include <random>

#include "calsm/baselines.hpp"
#include "calsm/cluster_metrics.hpp"
#include "calsm/log.hpp"
#include "calsm/simgen.hpp"

using namespace calsm;
using namespace calsm::baselines;

namespace {

MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

TEST_CASE("truncated svd reproduces low-rank and full-rank matrices") {
  const VectorXd u = random_matrix(6, 1, 1).col(0), v = random_matrix(4, 1, 2).col(0);
  const MatrixXd rank1 = u * v.transpose();
  CHECK((truncated_svd(rank1, 1).reconstruct() - rank1).cwiseAbs().maxCoeff() < 1e-12);

  const MatrixXd sq = random_matrix(5, 5, 3);
  CHECK((truncated_svd(sq, 5).reconstruct() - sq).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(truncated_svd(sq, 6), InputError);
}

TEST_CASE("truncated svd structure") {
  const MatrixXd m = random_matrix(12, 9, 4);
  const RankDApprox a = truncated_svd(m, 4);
  CHECK((a.u.transpose() * a.u - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.v.transpose() * a.v - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
  for (int k = 1; k < 4; ++k) CHECK(a.s[k] <= a.s[k - 1]);
  CHECK(a.s.minCoeff() >= 0.0);
  double prev = (m - truncated_svd(m, 1).reconstruct()).norm();
  for (int d = 2; d <= 9; ++d) {
    const double err = (m - truncated_svd(m, d).reconstruct()).norm();
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
}

TEST_CASE("rank-2 truncation beats random rank-2 candidates") {
  const MatrixXd m = random_matrix(10, 8, 5);
  const double best = (m - truncated_svd(m, 2).reconstruct()).norm();
  for (int t = 0; t < 200; ++t) {
    const MatrixXd cand = random_matrix(10, 2, 100 + t) * random_matrix(2, 8, 500 + t);
    // Least-squares scale of the candidate can only help it.
    const double scale = (m.cwiseProduct(cand)).sum() / cand.squaredNorm();
    CHECK(best <= (m - scale * cand).norm() + 1e-12);
  }
}

TEST_CASE("svd_yz edge cases") {
  sim::SimScenario s;
  s.n = 40;
  s.p = 6;
  s.s_b = 2;
  s.seed = 8;
  const sim::SimTruth t = sim::simulate(s);
  const SvdEstimate y = svd_y(t.network, 2);
  CHECK(y.probabilities.rows() == 40);
  CHECK(y.probabilities.cols() == 40);

  const Covariates zero(MatrixXd::Zero(40, 6));
  CHECK((svd_yz(t.network, zero, 2).probabilities - y.probabilities).cwiseAbs().maxCoeff() < 1e-12);

  const std::vector<int> all{0, 1, 2, 3, 4, 5};
  CHECK((svd_yz(t.network, t.z, 2, all).probabilities - svd_yz(t.network, t.z, 2).probabilities)
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  int warnings = 0;
  const auto previous = set_warning_sink([&](std::string_view) { ++warnings; });
  const SvdEstimate empty = svd_yz(t.network, t.z, 2, std::vector<int>{});
  set_warning_sink(previous);
  CHECK(warnings == 1);
  CHECK((empty.probabilities - y.probabilities).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("lsm mode is the engine without covariates") {
  sim::SimScenario s;
  s.n = 30;
  s.p = 5;
  s.s_b = 2;
  s.seed = 9;
  const sim::SimTruth t = sim::simulate(s);
  const ModelConfig cfg = ModelConfig::defaults_for(30, 2);
  cavi::FitOptions opts;
  opts.max_cycles = 30;
  const LsmEstimate lsm = lsm_mode(t.network, cfg, opts, 4);
  const cavi::CaviFit direct = cavi::fit_cavi(t.network, Covariates::none(30), cfg, opts, 4);
  CHECK(lsm.latent_means == direct.state.x_means);
  CHECK(lsm.probabilities == cavi::predict_probabilities(direct.state));
}

TEST_CASE("oracle covariate support helps when latents follow covariates") {
  sim::SimScenario s;
  s.n = 200;
  s.p = 100;
  s.k = 3.0;
  s.seed = 5;
  const sim::SimTruth t = sim::simulate(s);
  std::vector<int> support;
  for (Eigen::Index r = 0; r < t.b_star.rows(); ++r)
    if (t.b_star.row(r).cwiseAbs().maxCoeff() > 0) support.push_back(static_cast<int>(r));
  const MatrixXd truth = t.probabilities(s.beta_star);
  const double with_oracle = probability_pcc(truth, svd_yz(t.network, t.z, 2, support).probabilities);
  const double plain = probability_pcc(truth, svd_y(t.network, 2).probabilities);
  CHECK(with_oracle >= plain);
}
