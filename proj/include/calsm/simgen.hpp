#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calsm/core_model.hpp"
#include "calsm/random.hpp"

// Seeded synthetic experiments.
//
//   Case 1: X~ = Z B*.
//   Case 2: a subset of rows of Z B* is replaced by Uniform[-2, 2] draws
//           (community variant: the subset is permuted among itself).
//   Case 3: every row is replaced (community variant: all rows permuted).
// X* = X~ / max|X~| * k, and y_ij ~ Bernoulli(logistic(beta* + x_i*'x_j*)).
namespace calsm::sim {

enum class CovariateKind { gaussian, binary };

struct SimScenario {
  int case_id = 1;
  int n = 200;
  int p = 100;
  int d = 2;
  int s_b = 5;
  double beta_star = -2.0;
  double k = 1.0;
  int mismatch_count = 5;
  // When set, the mismatch row count is round(n * ratio) instead.
  std::optional<double> mismatch_ratio;
  CovariateKind covariate_kind = CovariateKind::gaussian;
  bool community_variant = false;
  std::uint64_t seed = 0;

  // Binary covariates, s_b = 4 coefficient rows drawn from {-1, 1}.
  static SimScenario community(int case_id, int n, int p, int d, double k, std::uint64_t seed);

  int mismatched_rows() const;
  void validate() const;
};

struct SimTruth {
  Covariates z;
  MatrixXd b_star;             // p x d
  MatrixXd x_star;             // n x d
  Network network;
  std::vector<int> true_labels;      // community variant only
  std::vector<int> mismatched_rows;  // sorted
  int num_clusters = 0;

  // logistic(beta* + x_i*'x_j*) for every pair.
  MatrixXd probabilities(double beta_star) const;
};

Covariates gen_covariates(const SimScenario& scenario, Rng& rng);
MatrixXd gen_coefficients(const SimScenario& scenario, Rng& rng);

struct Latents {
  MatrixXd x_star;
  std::vector<int> mismatched_rows;
  std::vector<int> true_labels;
  int num_clusters = 0;
};
Latents gen_latents(const SimScenario& scenario, const MatrixXd& z, const MatrixXd& b_star, Rng& rng);

Network gen_network(const MatrixXd& x_star, double beta_star, Rng& rng);

// Ids 0..K-1 of distinct rows, numbered by first appearance.
std::vector<int> distinct_row_labels(const MatrixXd& rows, int* num_distinct = nullptr);

// Full pipeline from scenario.seed; regenerating from the same scenario is
// bit-for-bit reproducible.
SimTruth simulate(const SimScenario& scenario);

struct GridSpec {
  SimScenario base;
  std::vector<int> cases{1};
  std::vector<double> ks{1.0};
  std::vector<int> ns;                       // empty: base.n only
  std::vector<double> mismatch_ratios;       // empty: base mismatch setting
  int replicates = 1;
  std::uint64_t master_seed = 0;
};

struct GridCell {
  int index = 0;
  int replicate = 0;
  SimScenario scenario;  // seed already derived
  std::string network_path;
  std::string covariates_path;
};

std::vector<GridCell> run_scenario_grid(const GridSpec& grid);

// Tab-separated manifest, one row per cell.
void write_manifest(std::ostream& out, std::span<const GridCell> cells);
std::vector<GridCell> read_manifest(std::istream& in);

}  // namespace calsm::sim
