// Command-line front end: simulate, fit-cavi, fit-svi, baseline, cluster,
// evaluate, run.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "calsm/baselines.hpp"
#include "calsm/cluster_metrics.hpp"
#include "calsm/io.hpp"
#include "calsm/simgen.hpp"

namespace {

using namespace calsm;
namespace fs = std::filesystem;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string engine;
  std::optional<int> case_id, n, p, d;
  std::optional<double> k, beta_star, mismatch_ratio;
  int replicates = 1;
  std::string metrics, baselines;
  bool normalize_covariates = false;
  bool community = false;
  std::string network, format = "edge_list", covariates, labels;
};

void add_data_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--network", f.network, "Network file");
  cmd->add_option("--format", f.format, "edge_list or dense_csv")->check(CLI::IsMember({"edge_list", "dense_csv"}));
  cmd->add_option("--covariates", f.covariates, "Comma-separated covariate matrix");
  cmd->add_option("--labels", f.labels, "True cluster labels, one per line");
  cmd->add_flag("--normalize-covariates", f.normalize_covariates, "Scale covariate rows to unit norm");
}

void add_scenario_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--case", f.case_id, "Simulation case")->check(CLI::Range(1, 3));
  cmd->add_option("--n", f.n, "Number of nodes");
  cmd->add_option("--p", f.p, "Number of covariates");
  cmd->add_option("--d", f.d, "Latent dimension");
  cmd->add_option("--k", f.k, "Signal strength");
  cmd->add_option("--beta-star", f.beta_star, "True intercept");
  cmd->add_option("--mismatch-ratio", f.mismatch_ratio, "Fraction of mismatched rows (case 2)");
  cmd->add_flag("--community", f.community, "Binary covariates with cluster structure");
}

// Flags override the config file, key by key.
io::KeyValues merged_config(const CommonFlags& f, bool with_scenario) {
  io::KeyValues kv = f.config.empty() ? io::KeyValues{} : io::load_key_values(f.config);
  if (f.seed) kv["seed"] = std::to_string(*f.seed);
  if (!f.out.empty()) kv["output.dir"] = f.out;
  if (!f.engine.empty()) kv["engine"] = f.engine;
  if (!f.metrics.empty()) kv["metrics"] = f.metrics;
  if (!f.baselines.empty()) kv["baselines"] = f.baselines;
  if (f.normalize_covariates) kv["data.normalize_covariates"] = "true";
  if (!f.network.empty()) {
    kv["data.network"] = f.network;
    kv["data.format"] = f.format;
  }
  if (!f.covariates.empty()) kv["data.covariates"] = f.covariates;
  if (!f.labels.empty()) kv["data.labels"] = f.labels;
  if (f.d) kv["model.d"] = std::to_string(*f.d);
  if (with_scenario) {
    if (f.case_id) kv["simulate.case"] = std::to_string(*f.case_id);
    if (f.n) kv["simulate.n"] = std::to_string(*f.n);
    if (f.p) kv["simulate.p"] = std::to_string(*f.p);
    if (f.d) kv["simulate.d"] = std::to_string(*f.d);
    if (f.k) kv["simulate.k"] = io::format_number(*f.k);
    if (f.beta_star) kv["simulate.beta_star"] = io::format_number(*f.beta_star);
    if (f.mismatch_ratio) kv["simulate.mismatch_ratio"] = io::format_number(*f.mismatch_ratio);
    if (f.community) kv["simulate.community"] = "true";
  }
  return kv;
}

sim::SimScenario scenario_from_flags(const CommonFlags& f) {
  sim::SimScenario s;
  if (f.community) s = sim::SimScenario::community(1, s.n, s.p, s.d, s.k, 0);
  if (f.case_id) s.case_id = *f.case_id;
  if (f.n) s.n = *f.n;
  if (f.p) s.p = *f.p;
  if (f.d) s.d = *f.d;
  if (f.k) s.k = *f.k;
  if (f.beta_star) s.beta_star = *f.beta_star;
  if (f.mismatch_ratio) s.mismatch_ratio = *f.mismatch_ratio;
  return s;
}

int cmd_simulate(const CommonFlags& f) {
  if (f.out.empty()) throw ConfigError("simulate: --out is required");
  sim::GridSpec grid;
  grid.base = scenario_from_flags(f);
  grid.cases = {grid.base.case_id};
  grid.ks = {grid.base.k};
  grid.replicates = f.replicates;
  grid.master_seed = f.seed.value_or(0);
  auto cells = sim::run_scenario_grid(grid);

  const fs::path out = f.out;
  for (auto& cell : cells) {
    const fs::path dir = out / ("cell_" + std::to_string(cell.index));
    sim::SimTruth truth = sim::simulate(cell.scenario);
    const std::string header = "seed: " + std::to_string(cell.scenario.seed);
    cell.network_path = (dir / "network.tsv").string();
    cell.covariates_path = (dir / "covariates.csv").string();
    io::save_network(truth.network, cell.network_path, io::NetworkFormat::edge_list);
    io::write_matrix_csv(truth.z.z, cell.covariates_path, header);
    io::write_matrix_csv(truth.x_star, dir / "x_star.csv", header);
    io::write_matrix_csv(truth.b_star, dir / "b_star.csv", header);
    io::write_matrix_csv(truth.probabilities(cell.scenario.beta_star), dir / "probabilities.csv", header);
    if (!truth.true_labels.empty()) io::write_labels(truth.true_labels, dir / "labels.tsv", header);
  }
  std::ofstream manifest(out / "manifest.tsv");
  if (!manifest) throw IoError("cannot write " + (out / "manifest.tsv").string());
  sim::write_manifest(manifest, cells);
  std::cout << "wrote " << cells.size() << " cell(s) to " << out.string() << '\n';
  return 0;
}

int cmd_fit(const CommonFlags& f, const std::string& engine) {
  CommonFlags g = f;
  g.engine = engine;
  if (g.network.empty() && g.config.empty()) throw ConfigError("fit: --network or --config is required");
  io::KeyValues kv = merged_config(g, /*with_scenario=*/false);
  const io::ExperimentConfig cfg = io::ExperimentConfig::from_key_values(kv);
  const io::ResultBundle bundle = io::run_experiment(cfg);
  std::cout << bundle.report.engine << ": " << bundle.report.iterations << " iterations, final ELBO "
            << io::format_number(bundle.report.final_elbo) << (bundle.report.converged ? " (converged)" : "") << '\n';
  return 0;
}

int cmd_baseline(const CommonFlags& f) {
  if (f.network.empty()) throw ConfigError("baseline: --network is required");
  if (f.out.empty()) throw ConfigError("baseline: --out is required");
  const std::vector<std::string> names = [&] {
    std::vector<std::string> v;
    std::stringstream ss(f.baselines.empty() ? "svd_y" : f.baselines);
    for (std::string s; std::getline(ss, s, ',');) v.push_back(s);
    return v;
  }();
  const int d = f.d.value_or(2);
  const Network net = io::load_network(f.network, io::parse_network_format(f.format));
  const Covariates cov =
      f.covariates.empty() ? Covariates::none(net.n()) : io::load_covariates(f.covariates, f.normalize_covariates, net.n());
  for (const auto& name : names) {
    if (name != "svd_y" && name != "svd_yz" && name != "lsm") {
      throw ConfigError("baseline: unknown or unsupported method '" + name + "' (svd_y, svd_yz, lsm)");
    }
  }
  const fs::path out = f.out;
  const std::string header = "seed: " + std::to_string(f.seed.value_or(0));
  for (const auto& name : names) {
    MatrixXd prob, embedding;
    if (name == "lsm") {
      auto est = baselines::lsm_mode(net, ModelConfig::defaults_for(net.n(), d), {}, f.seed.value_or(0));
      prob = std::move(est.probabilities);
      embedding = std::move(est.latent_means);
    } else {
      auto est = name == "svd_y" ? baselines::svd_y(net, d) : baselines::svd_yz(net, cov, d);
      prob = std::move(est.probabilities);
      embedding = est.approx.embedding();
    }
    io::write_matrix_csv(prob, out / (name + "_probabilities.csv"), header);
    io::write_matrix_csv(embedding, out / (name + "_embedding.csv"), header);
  }
  return 0;
}

int cmd_cluster(const std::string& latent, int k, int restarts, std::uint64_t seed, const std::string& out) {
  if (latent.empty() || out.empty()) throw ConfigError("cluster: --latent and --out are required");
  const MatrixXd x = io::read_matrix_csv(latent);
  const KMeansResult km = kmeans(normalize_rows(x), k, restarts, seed);
  io::write_labels(km.partition.labels, out, "seed: " + std::to_string(seed));
  std::cout << "objective " << io::format_number(km.objective) << '\n';
  return 0;
}

int cmd_evaluate(const CommonFlags& f, const std::string& truth, const std::string& estimate,
                 const std::string& labels_est) {
  const std::string metrics = f.metrics.empty() ? "pcc" : f.metrics;
  std::stringstream ss(metrics);
  std::cout << "metric\tvalue\n";
  for (std::string m; std::getline(ss, m, ',');) {
    if (m == "pcc") {
      if (truth.empty() || estimate.empty()) throw ConfigError("evaluate: pcc needs --truth and --estimate");
      const double v = probability_pcc(io::read_matrix_csv(truth), io::read_matrix_csv(estimate));
      std::cout << "pcc\t" << io::format_number(v) << '\n';
    } else if (m == "ri") {
      if (f.labels.empty() || labels_est.empty()) throw ConfigError("evaluate: ri needs --labels and --labels-est");
      const double v = rand_index(io::read_labels(f.labels), io::read_labels(labels_est));
      std::cout << "ri\t" << io::format_number(v) << '\n';
    } else {
      throw ConfigError("evaluate: unknown metric '" + m + "'");
    }
  }
  return 0;
}

int cmd_run(const CommonFlags& f) {
  io::KeyValues kv = merged_config(f, /*with_scenario=*/true);
  const io::ExperimentConfig base = io::ExperimentConfig::from_key_values(kv);
  if (f.replicates < 1) throw ConfigError("run: --replicates must be >= 1");
  if (f.replicates == 1) {
    const io::ResultBundle bundle = io::run_experiment(base);
    for (const auto& row : bundle.metrics) {
      std::cout << row.method << '\t' << row.metric << '\t' << io::format_number(row.value) << '\n';
    }
    return 0;
  }

  // Replicates get derived seeds and their own subdirectories.
  std::vector<io::ExperimentConfig> cfgs;
  for (int r = 0; r < f.replicates; ++r) {
    io::ExperimentConfig cfg = base;
    cfg.seed = derive_seed(base.seed, {static_cast<std::uint64_t>(r)});
    if (!base.output_dir.empty()) cfg.output_dir = (fs::path(base.output_dir) / ("rep_" + std::to_string(r))).string();
    cfgs.push_back(std::move(cfg));
  }
  std::cout << "replicate\tmethod\tmetric\tvalue\n";
  for (int r = 0; r < f.replicates; ++r) {
    const io::ResultBundle bundle = io::run_experiment(cfgs[static_cast<std::size_t>(r)]);
    for (const auto& row : bundle.metrics) {
      std::cout << r << '\t' << row.method << '\t' << row.metric << '\t' << io::format_number(row.value) << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariate-assisted latent space model"};
  app.require_subcommand(1);
  CommonFlags f;
  std::string truth, estimate, labels_est, latent;
  int clusters = 2, restarts = 20;
  std::uint64_t seed_value = 0;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", f.config, "Key-value config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "Master seed");
    cmd->add_option("--out", f.out, "Output directory");
  };

  auto* simulate = app.add_subcommand("simulate", "Generate synthetic networks and covariates");
  common(simulate);
  add_scenario_flags(simulate, f);
  simulate->add_option("--replicates", f.replicates, "Replicates per cell");

  auto* fit_cavi = app.add_subcommand("fit-cavi", "Fit by coordinate ascent");
  auto* fit_svi = app.add_subcommand("fit-svi", "Fit by stochastic variational inference");
  for (auto* cmd : {fit_cavi, fit_svi}) {
    common(cmd);
    add_data_flags(cmd, f);
    cmd->add_option("--d", f.d, "Latent dimension");
  }

  auto* baseline = app.add_subcommand("baseline", "Run comparison methods");
  common(baseline);
  add_data_flags(baseline, f);
  baseline->add_option("--d", f.d, "Latent dimension");
  baseline->add_option("--baselines", f.baselines, "Comma-separated: svd_y, svd_yz, lsm");

  auto* cluster = app.add_subcommand("cluster", "K-means on normalized latent rows");
  cluster->add_option("--latent", latent, "Latent matrix CSV")->check(CLI::ExistingFile);
  cluster->add_option("--clusters", clusters, "Number of clusters")->check(CLI::PositiveNumber);
  cluster->add_option("--restarts", restarts, "K-means restarts")->check(CLI::PositiveNumber);
  cluster->add_option("--seed", seed_value, "Seed");
  cluster->add_option("--out", f.out, "Output label file");

  auto* evaluate = app.add_subcommand("evaluate", "Compute metrics from files");
  evaluate->add_option("--metrics", f.metrics, "Comma-separated: pcc, ri");
  evaluate->add_option("--truth", truth, "True probability matrix CSV");
  evaluate->add_option("--estimate", estimate, "Estimated probability matrix CSV");
  evaluate->add_option("--labels", f.labels, "True labels");
  evaluate->add_option("--labels-est", labels_est, "Estimated labels");

  auto* run = app.add_subcommand("run", "Full experiment from a config file");
  common(run);
  add_scenario_flags(run, f);
  add_data_flags(run, f);
  run->add_option("--engine", f.engine, "cavi or svi")->check(CLI::IsMember({"cavi", "svi"}));
  run->add_option("--metrics", f.metrics, "Comma-separated: pcc, ri");
  run->add_option("--baselines", f.baselines, "Comma-separated: svd_y, svd_yz, svd_yzo, lsm");
  run->add_option("--replicates", f.replicates, "Independent replicates");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) return cmd_simulate(f);
    if (fit_cavi->parsed()) return cmd_fit(f, "cavi");
    if (fit_svi->parsed()) return cmd_fit(f, "svi");
    if (baseline->parsed()) return cmd_baseline(f);
    if (cluster->parsed()) return cmd_cluster(latent, clusters, restarts, seed_value, f.out);
    if (evaluate->parsed()) return cmd_evaluate(f, truth, estimate, labels_est);
    if (run->parsed()) return cmd_run(f);
  } catch (const calsm::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
