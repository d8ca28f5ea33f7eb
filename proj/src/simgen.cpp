#include "calsm/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace calsm::sim {

namespace {

// Uniform choice of `count` distinct indices in [0, n), returned sorted.
std::vector<int> choose_rows(int n, int count, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int t = 0; t < count; ++t) {
    std::uniform_int_distribution<int> pick(t, n - 1);
    std::swap(idx[static_cast<std::size_t>(t)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

const char* kind_name(CovariateKind kind) { return kind == CovariateKind::binary ? "binary" : "gaussian"; }

}  // namespace

SimScenario SimScenario::community(int case_id, int n, int p, int d, double k, std::uint64_t seed) {
  SimScenario s;
  s.case_id = case_id;
  s.n = n;
  s.p = p;
  s.d = d;
  s.k = k;
  s.s_b = 4;
  s.covariate_kind = CovariateKind::binary;
  s.community_variant = true;
  s.seed = seed;
  return s;
}

int SimScenario::mismatched_rows() const {
  switch (case_id) {
    case 1:
      return 0;
    case 3:
      return n;
    default:
      return mismatch_ratio ? static_cast<int>(std::lround(n * *mismatch_ratio)) : mismatch_count;
  }
}

void SimScenario::validate() const {
  if (case_id < 1 || case_id > 3) throw InputError("scenario: case must be 1, 2 or 3");
  if (n < 2 || p < 0 || d < 1) throw InputError("scenario: need n >= 2, p >= 0, d >= 1");
  if (s_b < 0 || s_b > p) throw InputError("scenario: s_b must lie in [0, p]");
  if (!(k > 0.0)) throw InputError("scenario: signal strength k must be positive");
  if (mismatch_ratio && !(*mismatch_ratio >= 0.0 && *mismatch_ratio <= 1.0)) {
    throw InputError("scenario: mismatch_ratio must lie in [0, 1]");
  }
  const int rows = mismatched_rows();
  if (rows < 0 || rows > n) throw InputError("scenario: mismatch count must lie in [0, n]");
}

MatrixXd SimTruth::probabilities(double beta_star) const {
  const MatrixXd gram = x_star * x_star.transpose();
  return gram.unaryExpr([beta_star](double v) { return logistic(beta_star + v); });
}

Covariates gen_covariates(const SimScenario& scenario, Rng& rng) {
  MatrixXd z(scenario.n, scenario.p);
  if (scenario.covariate_kind == CovariateKind::binary) {
    std::bernoulli_distribution coin(0.5);
    for (Eigen::Index c = 0; c < z.cols(); ++c)
      for (Eigen::Index r = 0; r < z.rows(); ++r) z(r, c) = coin(rng) ? 1.0 : -1.0;
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index c = 0; c < z.cols(); ++c)
      for (Eigen::Index r = 0; r < z.rows(); ++r) z(r, c) = normal(rng);
  }
  return Covariates(std::move(z));
}

MatrixXd gen_coefficients(const SimScenario& scenario, Rng& rng) {
  static const std::vector<double> kProbabilityValues{-2.0, 2.0, -1.5, 1.5};
  static const std::vector<double> kCommunityValues{-1.0, 1.0};
  const auto& values = scenario.community_variant ? kCommunityValues : kProbabilityValues;

  MatrixXd b = MatrixXd::Zero(scenario.p, scenario.d);
  const auto rows = choose_rows(scenario.p, scenario.s_b, rng);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  for (int r : rows) {
    for (int c = 0; c < scenario.d; ++c) b(r, c) = values[pick(rng)];
  }
  return b;
}

std::vector<int> distinct_row_labels(const MatrixXd& rows, int* num_distinct) {
  std::map<std::vector<double>, int> ids;
  std::vector<int> labels(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    std::vector<double> key(rows.cols());
    for (Eigen::Index c = 0; c < rows.cols(); ++c) key[static_cast<std::size_t>(c)] = rows(i, c);
    const auto [it, inserted] = ids.try_emplace(std::move(key), static_cast<int>(ids.size()));
    labels[static_cast<std::size_t>(i)] = it->second;
  }
  if (num_distinct) *num_distinct = static_cast<int>(ids.size());
  return labels;
}

Latents gen_latents(const SimScenario& scenario, const MatrixXd& z, const MatrixXd& b_star, Rng& rng) {
  Latents out;
  MatrixXd x = z * b_star;
  out.mismatched_rows = choose_rows(scenario.n, scenario.mismatched_rows(), rng);

  if (scenario.community_variant) {
    // Shuffle the selected rows among themselves.
    std::vector<int> order = out.mismatched_rows;
    std::shuffle(order.begin(), order.end(), rng);
    const MatrixXd original = x;
    for (std::size_t t = 0; t < order.size(); ++t) x.row(out.mismatched_rows[t]) = original.row(order[t]);
  } else {
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    for (int r : out.mismatched_rows)
      for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = unif(rng);
  }

  if (scenario.community_variant) out.true_labels = distinct_row_labels(x, &out.num_clusters);

  const double scale = x.cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) throw InputError("gen_latents: intermediate latent matrix is all zeros; cannot scale");
  out.x_star = x / scale * scenario.k;
  return out;
}

Network gen_network(const MatrixXd& x_star, double beta_star, Rng& rng) {
  const auto n = static_cast<int>(x_star.rows());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (unif(rng) < logistic(beta_star + x_star.row(i).dot(x_star.row(j)))) edges.push_back({i, j});
    }
  }
  return Network::from_edges(n, edges);
}

SimTruth simulate(const SimScenario& scenario) {
  scenario.validate();
  Rng rng(scenario.seed);
  SimTruth truth;
  truth.z = gen_covariates(scenario, rng);
  truth.b_star = gen_coefficients(scenario, rng);
  Latents latents = gen_latents(scenario, truth.z.z, truth.b_star, rng);
  truth.x_star = std::move(latents.x_star);
  truth.mismatched_rows = std::move(latents.mismatched_rows);
  truth.true_labels = std::move(latents.true_labels);
  truth.num_clusters = latents.num_clusters;
  truth.network = gen_network(truth.x_star, scenario.beta_star, rng);
  return truth;
}

std::vector<GridCell> run_scenario_grid(const GridSpec& grid) {
  if (grid.replicates < 1) throw InputError("grid: replicates must be >= 1");
  const std::vector<int> ns = grid.ns.empty() ? std::vector<int>{grid.base.n} : grid.ns;
  const bool sweep = !grid.mismatch_ratios.empty();
  const std::size_t ratio_count = sweep ? grid.mismatch_ratios.size() : 1;

  std::vector<GridCell> cells;
  for (std::size_t a = 0; a < grid.cases.size(); ++a) {
    for (std::size_t b = 0; b < ns.size(); ++b) {
      for (std::size_t c = 0; c < grid.ks.size(); ++c) {
        for (std::size_t r = 0; r < ratio_count; ++r) {
          for (int rep = 0; rep < grid.replicates; ++rep) {
            GridCell cell;
            cell.index = static_cast<int>(cells.size());
            cell.replicate = rep;
            cell.scenario = grid.base;
            cell.scenario.case_id = grid.cases[a];
            cell.scenario.n = ns[b];
            cell.scenario.k = grid.ks[c];
            if (sweep) cell.scenario.mismatch_ratio = grid.mismatch_ratios[r];
            cell.scenario.seed = derive_seed(grid.master_seed, {a, b, c, r, static_cast<std::uint64_t>(rep)});
            cell.scenario.validate();
            cells.push_back(std::move(cell));
          }
        }
      }
    }
  }
  return cells;
}

void write_manifest(std::ostream& out, std::span<const GridCell> cells) {
  out << "cell\treplicate\tcase\tn\tp\td\ts_b\tbeta_star\tk\tmismatch_rows\tmismatch_ratio\tcovariates"
         "\tcommunity\tseed\tnetwork_path\tcovariates_path\n";
  out.precision(12);
  for (const GridCell& c : cells) {
    const SimScenario& s = c.scenario;
    out << c.index << '\t' << c.replicate << '\t' << s.case_id << '\t' << s.n << '\t' << s.p << '\t' << s.d << '\t'
        << s.s_b << '\t' << s.beta_star << '\t' << s.k << '\t' << s.mismatched_rows() << '\t';
    if (s.mismatch_ratio) {
      out << *s.mismatch_ratio;
    } else {
      out << "NA";
    }
    out << '\t' << kind_name(s.covariate_kind) << '\t' << (s.community_variant ? 1 : 0) << '\t' << s.seed << '\t'
        << (c.network_path.empty() ? "-" : c.network_path) << '\t'
        << (c.covariates_path.empty() ? "-" : c.covariates_path) << '\n';
  }
}

std::vector<GridCell> read_manifest(std::istream& in) {
  std::vector<GridCell> cells;
  std::string line;
  if (!std::getline(in, line)) return cells;  // header
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, '\t');) f.push_back(field);
    if (f.size() != 16) throw InputError("manifest line " + std::to_string(line_no) + ": expected 16 fields");
    GridCell c;
    SimScenario& s = c.scenario;
    try {
      c.index = std::stoi(f[0]);
      c.replicate = std::stoi(f[1]);
      s.case_id = std::stoi(f[2]);
      s.n = std::stoi(f[3]);
      s.p = std::stoi(f[4]);
      s.d = std::stoi(f[5]);
      s.s_b = std::stoi(f[6]);
      s.beta_star = std::stod(f[7]);
      s.k = std::stod(f[8]);
      s.mismatch_count = std::stoi(f[9]);
      if (f[10] != "NA") s.mismatch_ratio = std::stod(f[10]);
      s.covariate_kind = f[11] == "binary" ? CovariateKind::binary : CovariateKind::gaussian;
      s.community_variant = f[12] == "1";
      s.seed = std::stoull(f[13]);
    } catch (const std::exception&) {
      throw InputError("manifest line " + std::to_string(line_no) + ": malformed numeric field");
    }
    c.network_path = f[14] == "-" ? "" : f[14];
    c.covariates_path = f[15] == "-" ? "" : f[15];
    cells.push_back(std::move(c));
  }
  return cells;
}

}  // namespace calsm::sim
