#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "calsm/cavi.hpp"
#include "calsm/core_model.hpp"

namespace calsm::baselines {

// Truncated singular value decomposition M ~= U diag(s) V'.
struct RankDApprox {
  MatrixXd u;  // n x d
  VectorXd s;  // descending, nonnegative
  MatrixXd v;  // m x d

  MatrixXd reconstruct() const { return u * s.asDiagonal() * v.transpose(); }
  // U diag(sqrt(s)): node embedding used for clustering.
  MatrixXd embedding() const { return u * s.cwiseSqrt().asDiagonal(); }
};

RankDApprox truncated_svd(const MatrixXd& m, int d);

struct SvdEstimate {
  RankDApprox approx;
  MatrixXd probabilities;  // n x n block of the reconstruction
};

// Best rank-d approximation of the 0/1 adjacency.
SvdEstimate svd_y(const Network& net, int d);

// Rank-d approximation of [Y, Z/max|Z|], optionally keeping only the columns
// in oracle_support. An empty support falls back to svd_y with a warning.
SvdEstimate svd_yz(const Network& net, const Covariates& cov, int d,
                   const std::optional<std::vector<int>>& oracle_support = std::nullopt);

struct LsmEstimate {
  MatrixXd probabilities;
  MatrixXd latent_means;
  FitReport report;
};

// The CAVI engine with the covariate block absent.
LsmEstimate lsm_mode(const Network& net, const ModelConfig& cfg, const cavi::FitOptions& opts, std::uint64_t seed);

}  // namespace calsm::baselines
