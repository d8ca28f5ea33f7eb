#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "calsm/core_model.hpp"
#include "calsm/random.hpp"

namespace calsm {

// Cluster assignment with ids in [0, k).
struct Partition {
  std::vector<int> labels;
  int k = 0;

  Partition() = default;
  Partition(std::vector<int> labels, int k);

  int n() const { return static_cast<int>(labels.size()); }
  void validate() const;
};

// Each nonzero row scaled to unit norm; zero rows stay zero.
MatrixXd normalize_rows(const MatrixXd& x);

struct KMeansResult {
  Partition partition;
  MatrixXd centroids;  // k x d
  double objective = 0.0;  // within-cluster sum of squares
  int iterations = 0;      // Lloyd iterations of the winning restart
};

// Lloyd's algorithm from k-means++ seeds; best of `restarts` runs. Each restart
// uses its own stream derived from `seed`, so the result does not depend on
// the worker count.
KMeansResult kmeans(const MatrixXd& x, int k, int restarts, std::uint64_t seed);
inline KMeansResult kmeans(const MatrixXd& x, int k, std::uint64_t seed) { return kmeans(x, k, 20, seed); }

// Sum of squared distances to the assigned centroid.
double kmeans_objective(const MatrixXd& x, const Partition& partition);

// Unadjusted Rand index: fraction of unordered pairs on which the partitions agree.
double rand_index(std::span<const int> a, std::span<const int> b);
inline double rand_index(const Partition& a, const Partition& b) { return rand_index(a.labels, b.labels); }

double pcc(std::span<const double> a, std::span<const double> b);

// Strict upper triangle of a square matrix, row by row.
std::vector<double> upper_triangle(const MatrixXd& m);

// PCC between the upper-triangular entries of two probability matrices.
double probability_pcc(const MatrixXd& truth, const MatrixXd& estimate);

// Each score minus the unweighted mean of all scores.
std::map<std::string, double> diff_metric(const std::map<std::string, double>& scores);

}  // namespace calsm
