#include "calsm/baselines.hpp"

#include <Eigen/SVD>

#include "calsm/log.hpp"

namespace calsm::baselines {

RankDApprox truncated_svd(const MatrixXd& m, int d) {
  const auto rank_cap = std::min(m.rows(), m.cols());
  if (d < 1 || d > rank_cap) throw InputError("truncated_svd: d must lie in [1, min(rows, cols)]");
  Eigen::BDCSVD<MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  RankDApprox out;
  out.u = svd.matrixU().leftCols(d);
  out.s = svd.singularValues().head(d);
  out.v = svd.matrixV().leftCols(d);
  return out;
}

SvdEstimate svd_y(const Network& net, int d) {
  if (d > net.n()) throw InputError("svd_y: d exceeds n");
  SvdEstimate est;
  est.approx = truncated_svd(net.adjacency().cast<double>(), d);
  est.probabilities = est.approx.reconstruct();
  return est;
}

SvdEstimate svd_yz(const Network& net, const Covariates& cov, int d, const std::optional<std::vector<int>>& oracle_support) {
  check_dimensions(net, cov);
  if (d > net.n()) throw InputError("svd_yz: d exceeds n");

  MatrixXd z;
  if (oracle_support) {
    if (oracle_support->empty()) {
      warn("svd_yz: empty oracle support, using the network alone");
      return svd_y(net, d);
    }
    z.resize(cov.n(), static_cast<Eigen::Index>(oracle_support->size()));
    for (std::size_t c = 0; c < oracle_support->size(); ++c) {
      const int col = (*oracle_support)[c];
      if (col < 0 || col >= cov.p()) throw InputError("svd_yz: oracle support index out of range");
      z.col(static_cast<Eigen::Index>(c)) = cov.z.col(col);
    }
  } else {
    z = cov.z;
  }

  const double scale = z.size() > 0 ? z.cwiseAbs().maxCoeff() : 0.0;
  if (scale == 0.0) return svd_y(net, d);

  const auto n = net.n();
  MatrixXd joined(n, n + z.cols());
  joined.leftCols(n) = net.adjacency().cast<double>();
  joined.rightCols(z.cols()) = z / scale;

  SvdEstimate est;
  est.approx = truncated_svd(joined, d);
  est.probabilities = est.approx.reconstruct().leftCols(n);
  return est;
}

LsmEstimate lsm_mode(const Network& net, const ModelConfig& cfg, const cavi::FitOptions& opts, std::uint64_t seed) {
  cavi::CaviFit fit = cavi::fit_cavi(net, Covariates::none(net.n()), cfg, opts, seed);
  LsmEstimate est;
  est.probabilities = cavi::predict_probabilities(fit.state);
  est.latent_means = fit.state.x_means;
  est.report = fit.report;
  return est;
}

}  // namespace calsm::baselines
