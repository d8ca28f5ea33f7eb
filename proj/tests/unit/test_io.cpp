#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "calsm/io.hpp"
#include "calsm/log.hpp"

using namespace calsm;
using namespace calsm::io;

namespace {

fs::path scratch(const std::string& name) {
  const char* root = std::getenv("CALSM_TEST_TMP");
  fs::path dir = fs::path(root ? root : fs::temp_directory_path().string()) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <class E, class F>
std::string error_message(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  return {};
}

ExperimentConfig small_config(const std::string& metrics) {
  std::stringstream text;
  text << "seed = 17\nsimulate.case = 1\nsimulate.n = 50\nsimulate.p = 10\nsimulate.s_b = 3\nsimulate.k = 2\n"
       << "cavi.max_cycles = 40\n";
  if (!metrics.empty()) text << "metrics = " << metrics << "\n";
  return ExperimentConfig::from_key_values(parse_key_values(text));
}

}  // namespace

TEST_CASE("edge list parsing") {
  const fs::path dir = scratch("edges");
  write_text(dir / "a.tsv", "# nodes: 5\n0\t1\n1\t2\n3\t3\n");
  int warnings = 0;
  const auto previous = set_warning_sink([&](std::string_view) { ++warnings; });
  const Network net = load_network(dir / "a.tsv", NetworkFormat::edge_list);
  set_warning_sink(previous);
  CHECK(net.n() == 5);
  CHECK(net.num_positive() == 2);
  CHECK(warnings == 1);

  write_text(dir / "b.tsv", "# nodes: 3\n0\t1\n1\t7\n");
  const std::string msg = error_message<InputError>([&] { load_network(dir / "b.tsv", NetworkFormat::edge_list); });
  CHECK(msg.find(":3:") != std::string::npos);

  write_text(dir / "c.tsv", "0\tx\n");
  CHECK_THROWS_AS(load_network(dir / "c.tsv", NetworkFormat::edge_list), InputError);

  save_network(net, dir / "round.tsv", NetworkFormat::edge_list);
  CHECK(load_network(dir / "round.tsv", NetworkFormat::edge_list).adjacency() == net.adjacency());
  save_network(net, dir / "round.csv", NetworkFormat::dense_csv);
  CHECK(load_network(dir / "round.csv", NetworkFormat::dense_csv).adjacency() == net.adjacency());

  CHECK(parse_network_format("dense_csv") == NetworkFormat::dense_csv);
  CHECK_THROWS_AS(parse_network_format("gml"), ConfigError);
}

TEST_CASE("dense csv parsing") {
  const fs::path dir = scratch("dense");
  write_text(dir / "asym.csv", "0,1,0\n0,0,1\n0,1,0\n");
  CHECK_THROWS_AS(load_network(dir / "asym.csv", NetworkFormat::dense_csv), InputError);
  write_text(dir / "bad.csv", "0,1,0\n1,0,2\n0,2,0\n");
  const std::string msg = error_message<InputError>([&] { load_network(dir / "bad.csv", NetworkFormat::dense_csv); });
  CHECK(msg.find("column 3") != std::string::npos);
}

TEST_CASE("covariates") {
  const fs::path dir = scratch("cov");
  write_text(dir / "z.csv", "3,4\n0,0\n1,0\n");
  const Covariates raw = load_covariates(dir / "z.csv", false);
  CHECK(raw.z(0, 1) == 4.0);
  const Covariates norm = load_covariates(dir / "z.csv", true);
  CHECK(norm.z(0, 1) == doctest::Approx(0.8));
  CHECK_THROWS_AS(load_covariates(dir / "z.csv", false, 4), DimensionError);

  write_text(dir / "bad.csv", "1,2\n3,abc\n");
  const std::string msg = error_message<InputError>([&] { load_covariates(dir / "bad.csv", false); });
  CHECK(msg.find("row 2") != std::string::npos);

  save_covariates(raw, dir / "back.csv");
  CHECK(load_covariates(dir / "back.csv", false).z == raw.z);

  MatrixXd m(2, 2);
  m << 0.1, -1.0 / 3.0, 1e-300, 12345.678;
  write_matrix_csv(m, dir / "m.csv", "seed: 1");
  CHECK((read_matrix_csv(dir / "m.csv") - m).cwiseAbs().maxCoeff() <= 1e-12 * 12345.678);

  write_labels({4, 4, 9, 2}, dir / "l.tsv");
  int k = 0;
  CHECK(read_labels(dir / "l.tsv", &k) == std::vector<int>{0, 0, 1, 2});
  CHECK(k == 3);
}

TEST_CASE("key value configs") {
  std::stringstream good("# comment\nseed = 3\nmodel.d = 2  # trailing\n\n");
  const KeyValues kv = parse_key_values(good);
  CHECK(kv.at("seed") == "3");
  CHECK(kv.at("model.d") == "2");

  std::stringstream dup("seed = 1\nseed = 2\n");
  CHECK_THROWS_AS(parse_key_values(dup), ConfigError);
  std::stringstream junk("seed 1\n");
  CHECK_THROWS_AS(parse_key_values(junk), ConfigError);

  std::stringstream unknown("seed = 1\nsimulate.n = 20\nmodel.dd = 2\n");
  CHECK_THROWS_AS(ExperimentConfig::from_key_values(parse_key_values(unknown)), ConfigError);
  std::stringstream crossed("simulate.n = 20\nsvi.batch_size = 8\n");
  CHECK_THROWS_AS(ExperimentConfig::from_key_values(parse_key_values(crossed)), ConfigError);

  std::stringstream big("seed = 18446744073709551615\nsimulate.n = 20\n");
  CHECK(ExperimentConfig::from_key_values(parse_key_values(big)).seed == 18446744073709551615ULL);

  const ExperimentConfig cfg = small_config("pcc");
  const ExperimentConfig again = ExperimentConfig::from_key_values(cfg.to_key_values());
  CHECK(again.to_key_values() == cfg.to_key_values());
}

TEST_CASE("run_experiment writes reproducible results") {
  const fs::path a = scratch("run_a");
  ExperimentConfig cfg = small_config("pcc");
  cfg.output_dir = a.string();
  const ResultBundle bundle = run_experiment(cfg);
  REQUIRE(bundle.metrics.size() == 1);
  CHECK(bundle.metrics[0].method == "calsm");
  CHECK(bundle.metrics[0].value > 0.0);
  CHECK(bundle.probabilities.rows() == 50);

  const std::string metrics = read_text(a / "metrics.tsv"), report = read_text(a / "report.json");
  run_experiment(cfg);
  CHECK(read_text(a / "metrics.tsv") == metrics);
  CHECK(read_text(a / "report.json") == report);
  CHECK(read_text(a / "metrics.tsv").rfind("# seed: 17", 0) == 0);

  const ResultBundle back = read_results(a);
  CHECK(back.seed == 17);
  REQUIRE(back.metrics.size() == 1);
  CHECK(back.metrics[0].value == doctest::Approx(bundle.metrics[0].value).epsilon(1e-11));
  CHECK((back.probabilities - bundle.probabilities).cwiseAbs().maxCoeff() < 1e-11);
  CHECK(back.report.iterations == bundle.report.iterations);
}

TEST_CASE("baselines add diff rows") {
  ExperimentConfig cfg = small_config("pcc");
  cfg.baselines = {"svd_y", "lsm"};
  const ResultBundle bundle = run_experiment(cfg);
  CHECK(bundle.metrics.size() == 6);
  double sum = 0.0;
  for (const auto& row : bundle.metrics)
    if (row.metric == "pcc_diff") sum += row.value;
  CHECK(std::abs(sum) < 1e-12);
}

TEST_CASE("configuration errors surface before computation") {
  CHECK_THROWS_AS(small_config("ri"), ConfigError);
  CHECK_THROWS_AS(small_config("auc"), ConfigError);
}

TEST_CASE("no metrics means no metrics file") {
  const fs::path dir = scratch("run_empty");
  ExperimentConfig cfg = small_config("");
  cfg.output_dir = dir.string();
  run_experiment(cfg);
  CHECK_FALSE(fs::exists(dir / "metrics.tsv"));
  CHECK(fs::exists(dir / "latent_means.csv"));
  CHECK(fs::exists(dir / "report.json"));
}

TEST_CASE("partial outputs are removed on failure") {
  const fs::path dir = scratch("run_fail");
  fs::create_directories(dir / "labels.tsv" / "blocker");
  std::stringstream text("seed = 2\nsimulate.community = true\nsimulate.n = 40\nsimulate.p = 8\n"
                         "cavi.max_cycles = 10\nmetrics = ri\n");
  ExperimentConfig cfg = ExperimentConfig::from_key_values(parse_key_values(text));
  cfg.output_dir = dir.string();
  CHECK_THROWS_AS(run_experiment(cfg), StageError);
  CHECK_FALSE(fs::exists(dir / "metrics.tsv"));
  CHECK_FALSE(fs::exists(dir / "latent_means.csv"));
  CHECK_FALSE(fs::exists(dir / "report.json"));
}

TEST_CASE("number formatting") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(1.0 / 3.0) == "0.333333333333");
}
