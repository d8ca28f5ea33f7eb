#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "calsm/cavi.hpp"
#include "calsm/core_model.hpp"
#include "calsm/fit_report.hpp"
#include "calsm/simgen.hpp"
#include "calsm/svi.hpp"

namespace calsm::io {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";

enum class NetworkFormat { edge_list, dense_csv };
NetworkFormat parse_network_format(const std::string& name);

// edge_list: "i<TAB>j" per line, 0-based. An optional "# nodes: N" comment
// fixes the node count; otherwise it is max id + 1. Pairs are symmetrized,
// duplicates collapsed and self-loops dropped with a warning.
// dense_csv: n rows of comma-separated 0/1 entries, must be symmetric.
Network load_network(const fs::path& path, NetworkFormat format);
void save_network(const Network& net, const fs::path& path, NetworkFormat format);

// Comma-separated numeric matrix, optionally row-normalized. When
// expected_rows is given the row count must match it.
Covariates load_covariates(const fs::path& path, bool normalize, std::optional<int> expected_rows = std::nullopt);
void save_covariates(const Covariates& cov, const fs::path& path);

// Lines starting with '#' are skipped.
MatrixXd read_matrix_csv(const fs::path& path);
void write_matrix_csv(const MatrixXd& m, const fs::path& path, const std::string& header = {});

// One integer per line; ids are renumbered 0..K-1 by first appearance.
std::vector<int> read_labels(const fs::path& path, int* num_clusters = nullptr);
void write_labels(const std::vector<int>& labels, const fs::path& path, const std::string& header = {});

// Flat "key = value" lines with dotted keys; '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(std::istream& in, const std::string& source = "config");
KeyValues load_key_values(const fs::path& path);

enum class Engine { cavi, svi };

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  bool beta_prior_var_set = false;  // otherwise defaults_for(n, d)
  Engine engine = Engine::cavi;
  cavi::FitOptions cavi;
  svi::SviConfig svi;

  // Either loaded data...
  std::string network_path;
  NetworkFormat network_format = NetworkFormat::edge_list;
  std::string covariates_path;
  std::string labels_path;
  bool normalize_covariates = false;
  // ...or a simulated scenario.
  std::optional<sim::SimScenario> scenario;

  std::vector<std::string> metrics;    // pcc, ri
  std::vector<std::string> baselines;  // svd_y, svd_yz, svd_yzo, lsm
  int clusters = 0;                    // 0: number of true clusters
  int kmeans_restarts = 20;
  double sparse_quantile = 0.99;       // probabilities above it are kept when n > 5000

  std::string output_dir;

  // Unknown keys, malformed values and options for the other engine raise
  // ConfigError.
  static ExperimentConfig from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
  void validate() const;
};

struct MetricRow {
  std::string method;
  std::string metric;
  double value = 0.0;
};

struct ResultBundle {
  std::uint64_t seed = 0;
  std::string version = kVersion;
  KeyValues config_echo;
  FitReport report;
  MatrixXd probabilities;       // n x n; empty when the sparse form is used
  MatrixXd latent_means;        // n x d
  std::vector<int> labels;      // estimated clusters, when requested
  std::vector<MetricRow> metrics;

  // Sparse form for large n: (i, j, p) triples with p >= threshold, i < j.
  std::optional<double> probability_threshold;
  std::vector<std::tuple<int, int, double>> sparse_probabilities;
};

// Loads or simulates data, fits the engine, runs baselines and computes
// metrics. Configuration errors surface before any computation; other
// failures are rethrown as StageError naming the stage. When output_dir is
// set the bundle is written there, and partial outputs are removed on error.
ResultBundle run_experiment(const ExperimentConfig& cfg);

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error("[" + stage + "] " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Files: metrics.tsv (omitted when there are no metrics), latent_means.csv,
// probabilities.csv or probabilities_sparse.tsv, labels.tsv (when present),
// report.json. Every file starts with a seed comment. Returns written paths.
std::vector<fs::path> emit_results(const ResultBundle& bundle, const fs::path& dir);
ResultBundle read_results(const fs::path& dir);

// Text form used everywhere: 12 significant digits.
std::string format_number(double v);

}  // namespace calsm::io
