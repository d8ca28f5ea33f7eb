#include "calsm/cluster_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "calsm/kernels.hpp"

namespace calsm {

namespace {

struct Run {
  std::vector<int> labels;
  MatrixXd centroids;
  double objective = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

// Distance-squared-weighted seeding.
MatrixXd plus_plus_seeds(const MatrixXd& x, int k, Rng& rng) {
  const auto n = x.rows();
  MatrixXd c(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  c.row(0) = x.row(first(rng));
  VectorXd dist = (x.rowwise() - c.row(0)).rowwise().squaredNorm();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int m = 1; m < k; ++m) {
    const double total = dist.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = unif(rng) * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= dist[i];
        if (target < 0.0 && dist[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    c.row(m) = x.row(pick);
    dist = dist.cwiseMin((x.rowwise() - c.row(m)).rowwise().squaredNorm());
  }
  return c;
}

Run lloyd(const MatrixXd& x, int k, Rng& rng) {
  constexpr int kMaxIterations = 300;
  const auto n = static_cast<int>(x.rows());
  Run run;
  run.centroids = plus_plus_seeds(x, k, rng);
  run.labels.assign(static_cast<std::size_t>(n), -1);
  VectorXd best_dist(n);

  for (int it = 0; it < kMaxIterations; ++it) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int m = 0; m < k; ++m) {
        const double dd = (x.row(i) - run.centroids.row(m)).squaredNorm();
        if (dd < best_d) {
          best_d = dd;
          best = m;
        }
      }
      best_dist[i] = best_d;
      if (run.labels[static_cast<std::size_t>(i)] != best) {
        run.labels[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    run.iterations = it + 1;
    if (!changed && it > 0) break;

    MatrixXd sums = MatrixXd::Zero(k, x.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      sums.row(run.labels[static_cast<std::size_t>(i)]) += x.row(i);
      ++counts[static_cast<std::size_t>(run.labels[static_cast<std::size_t>(i)])];
    }
    for (int m = 0; m < k; ++m) {
      if (counts[static_cast<std::size_t>(m)] > 0) {
        run.centroids.row(m) = sums.row(m) / counts[static_cast<std::size_t>(m)];
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      Eigen::Index far = 0;
      best_dist.maxCoeff(&far);
      run.centroids.row(m) = x.row(far);
      best_dist[far] = 0.0;
    }
  }
  run.objective = kmeans_objective(x, Partition(run.labels, k));
  return run;
}

}  // namespace

Partition::Partition(std::vector<int> l, int clusters) : labels(std::move(l)), k(clusters) { validate(); }

void Partition::validate() const {
  if (k < 1) throw InputError("partition: cluster count must be >= 1");
  for (int id : labels) {
    if (id < 0 || id >= k) {
      throw InputError("partition: label " + std::to_string(id) + " outside [0, " + std::to_string(k) + ")");
    }
  }
}

MatrixXd normalize_rows(const MatrixXd& x) {
  MatrixXd out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm > 0.0) out.row(i) /= norm;
  }
  return out;
}

double kmeans_objective(const MatrixXd& x, const Partition& partition) {
  if (partition.n() != x.rows()) throw DimensionError("kmeans_objective: label count differs from row count");
  MatrixXd sums = MatrixXd::Zero(partition.k, x.cols());
  VectorXd counts = VectorXd::Zero(partition.k);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    sums.row(partition.labels[static_cast<std::size_t>(i)]) += x.row(i);
    counts[partition.labels[static_cast<std::size_t>(i)]] += 1.0;
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int m = partition.labels[static_cast<std::size_t>(i)];
    total += (x.row(i) - sums.row(m) / counts[m]).squaredNorm();
  }
  return total;
}

KMeansResult kmeans(const MatrixXd& x, int k, int restarts, std::uint64_t seed) {
  if (k < 1 || k > x.rows()) throw InputError("kmeans: need 1 <= K <= n");
  if (restarts < 1) throw InputError("kmeans: restarts must be >= 1");

  std::vector<Run> runs(static_cast<std::size_t>(restarts));
#pragma omp parallel for schedule(dynamic, 1) num_threads(kernels::worker_count())
  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(r)}));
    runs[static_cast<std::size_t>(r)] = lloyd(x, k, rng);
  }
  // First strictly better restart wins, so ties resolve by restart index.
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].objective < runs[best].objective) best = r;
  }
  KMeansResult result;
  result.partition = Partition(std::move(runs[best].labels), k);
  result.centroids = std::move(runs[best].centroids);
  result.objective = runs[best].objective;
  result.iterations = runs[best].iterations;
  return result;
}

double rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) {
    throw DimensionError("rand_index: partitions have lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::int64_t agree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if ((a[i] == a[j]) == (b[i] == b[j])) ++agree;
    }
  }
  return static_cast<double>(agree) / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

double pcc(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("pcc: inputs have different lengths");
  if (a.size() < 2) throw InputError("pcc: need at least two entries");
  const auto n = static_cast<double>(a.size());
  const double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa == 0.0 || sbb == 0.0) {
    throw NumericalError(std::string("pcc: ") + (saa == 0.0 ? "first" : "second") + " input is constant");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> upper_triangle(const MatrixXd& m) {
  if (m.rows() != m.cols()) throw DimensionError("upper_triangle: matrix is not square");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.rows() * (m.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

double probability_pcc(const MatrixXd& truth, const MatrixXd& estimate) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols()) {
    throw DimensionError("probability_pcc: matrices differ in shape");
  }
  return pcc(upper_triangle(truth), upper_triangle(estimate));
}

std::map<std::string, double> diff_metric(const std::map<std::string, double>& scores) {
  if (scores.size() < 2) throw InputError("diff_metric: need at least two methods");
  double mean = 0.0;
  for (const auto& [name, v] : scores) mean += v;
  mean /= static_cast<double>(scores.size());
  std::map<std::string, double> out;
  for (const auto& [name, v] : scores) out[name] = v - mean;
  return out;
}

}  // namespace calsm
