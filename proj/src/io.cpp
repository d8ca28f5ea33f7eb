#include "calsm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "calsm/baselines.hpp"
#include "calsm/cluster_metrics.hpp"
#include "calsm/log.hpp"

namespace calsm::io {

namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(s);
  while (std::getline(ss, field, sep)) out.push_back(trim(field));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

template <typename T>
bool parse_int(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

void write_header(std::ostream& out, const std::string& header) {
  if (header.empty()) return;
  std::stringstream ss(header);
  for (std::string line; std::getline(ss, line);) out << "# " << line << '\n';
}

std::string seed_header(std::uint64_t seed) { return "seed: " + std::to_string(seed); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& item : split(s, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

// Typed access to a KeyValues map that remembers which keys were consumed.
class ConfigReader {
 public:
  explicit ConfigReader(const KeyValues& kv) : kv_(kv) {}

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::optional<std::string> str(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  template <typename T>
  void integer(const std::string& key, T& out) {
    if (auto v = str(key)) {
      std::conditional_t<std::is_unsigned_v<T>, unsigned long long, long long> parsed = 0;
      if (!parse_int(*v, parsed)) throw ConfigError("config key '" + key + "': expected an integer, got '" + *v + "'");
      out = static_cast<T>(parsed);
    }
  }

  void real(const std::string& key, double& out) {
    if (auto v = str(key)) {
      if (!parse_double(*v, out)) throw ConfigError("config key '" + key + "': expected a number, got '" + *v + "'");
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (auto v = str(key)) {
      if (*v == "true" || *v == "1") {
        out = true;
      } else if (*v == "false" || *v == "0") {
        out = false;
      } else {
        throw ConfigError("config key '" + key + "': expected true or false, got '" + *v + "'");
      }
    }
  }

  void reject_unused() const {
    for (const auto& [key, value] : kv_) {
      if (!used_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
  }

 private:
  const KeyValues& kv_;
  std::set<std::string> used_;
};

bool has_prefix(const KeyValues& kv, const std::string& prefix) {
  return std::any_of(kv.begin(), kv.end(), [&](const auto& e) { return e.first.rfind(prefix, 0) == 0; });
}

const char* engine_name(Engine e) { return e == Engine::svi ? "svi" : "cavi"; }
const char* format_name(NetworkFormat f) { return f == NetworkFormat::dense_csv ? "dense_csv" : "edge_list"; }

const std::set<std::string> kMetrics{"pcc", "ri"};
const std::set<std::string> kBaselines{"svd_y", "svd_yz", "svd_yzo", "lsm"};

// Removes every file written so far unless released.
class OutputGuard {
 public:
  ~OutputGuard() {
    if (released_) return;
    for (const auto& p : written_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
  void add(std::vector<fs::path> paths) { written_.insert(written_.end(), paths.begin(), paths.end()); }
  void release() { released_ = true; }

 private:
  std::vector<fs::path> written_;
  bool released_ = false;
};

template <typename F>
auto staged(const std::string& stage, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

struct Method {
  std::string name;
  MatrixXd probabilities;
  MatrixXd embedding;
};

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

NetworkFormat parse_network_format(const std::string& name) {
  if (name == "edge_list") return NetworkFormat::edge_list;
  if (name == "dense_csv") return NetworkFormat::dense_csv;
  throw ConfigError("unknown network format '" + name + "' (expected edge_list or dense_csv)");
}

Network load_network(const fs::path& path, NetworkFormat format) {
  auto in = open_in(path);
  const std::string where = path.string();
  std::string line;
  int line_no = 0;

  if (format == NetworkFormat::edge_list) {
    std::optional<long long> declared;
    std::vector<Edge> edges;
    long long max_id = -1;
    int self_loops = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = trim(line);
      if (t.empty()) continue;
      if (t[0] == '#') {
        const std::string body = trim(t.substr(1));
        if (body.rfind("nodes:", 0) == 0) {
          long long n = 0;
          if (!parse_int(trim(body.substr(6)), n) || n < 0) {
            throw InputError(where + ":" + std::to_string(line_no) + ": malformed node count");
          }
          declared = n;
        }
        continue;
      }
      const auto f = split(t, '\t');
      long long a = 0, b = 0;
      if (f.size() != 2 || !parse_int(f[0], a) || !parse_int(f[1], b)) {
        throw InputError(where + ":" + std::to_string(line_no) + ": expected two integer ids separated by a tab");
      }
      if (a < 0 || b < 0 || (declared && (a >= *declared || b >= *declared))) {
        throw InputError(where + ":" + std::to_string(line_no) + ": node id out of range");
      }
      if (a == b) {
        ++self_loops;
        continue;
      }
      max_id = std::max({max_id, a, b});
      edges.push_back({static_cast<int>(std::min(a, b)), static_cast<int>(std::max(a, b))});
    }
    if (self_loops > 0) warn(where + ": dropped " + std::to_string(self_loops) + " self-loop(s)");
    const long long n = declared ? *declared : max_id + 1;
    return Network::from_edges(static_cast<int>(n), edges);
  }

  std::vector<std::vector<std::uint8_t>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::uint8_t> row;
    const auto f = split(t, ',');
    for (std::size_t c = 0; c < f.size(); ++c) {
      if (f[c] != "0" && f[c] != "1") {
        throw InputError(where + ":" + std::to_string(line_no) + ": column " + std::to_string(c + 1) +
                         ": non-binary entry '" + f[c] + "'");
      }
      row.push_back(f[c] == "1" ? 1 : 0);
    }
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  AdjacencyMatrix adj(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != n) {
      throw InputError(where + ": row " + std::to_string(i + 1) + " has " +
                       std::to_string(rows[static_cast<std::size_t>(i)].size()) + " entries, expected " +
                       std::to_string(n));
    }
    for (Eigen::Index j = 0; j < n; ++j) adj(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (adj(i, j) != adj(j, i)) {
        throw InputError(where + ": asymmetric entry at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
      }
    }
  }
  if (adj.diagonal().cast<int>().sum() > 0) {
    warn(where + ": dropped " + std::to_string(adj.diagonal().cast<int>().sum()) + " self-loop(s)");
    adj.diagonal().setZero();
  }
  return Network::from_adjacency(adj);
}

void save_network(const Network& net, const fs::path& path, NetworkFormat format) {
  auto out = open_out(path);
  if (format == NetworkFormat::edge_list) {
    out << "# nodes: " << net.n() << '\n';
    for (const Edge& e : net.positive_edges()) out << e.i << '\t' << e.j << '\n';
  } else {
    for (int i = 0; i < net.n(); ++i) {
      for (int j = 0; j < net.n(); ++j) out << (j ? "," : "") << net.y(i, j);
      out << '\n';
    }
  }
  finish(out, path);
}

MatrixXd read_matrix_csv(const fs::path& path) {
  auto in = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<double> row;
    const auto f = split(t, ',');
    for (std::size_t c = 0; c < f.size(); ++c) {
      double v = 0.0;
      if (!parse_double(f[c], v)) {
        throw InputError(path.string() + ": non-numeric cell at row " + std::to_string(rows.size() + 1) +
                         ", column " + std::to_string(c + 1) + " (line " + std::to_string(line_no) + ")");
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw InputError(path.string() + ": line " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                       " columns, expected " + std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  const auto cols = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
  MatrixXd m(static_cast<Eigen::Index>(rows.size()), cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

void write_matrix_csv(const MatrixXd& m, const fs::path& path, const std::string& header) {
  auto out = open_out(path);
  write_header(out, header);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_number(m(i, j));
    out << '\n';
  }
  finish(out, path);
}

Covariates load_covariates(const fs::path& path, bool normalize, std::optional<int> expected_rows) {
  MatrixXd z = read_matrix_csv(path);
  if (expected_rows && z.rows() != *expected_rows) {
    throw DimensionError(path.string() + ": covariates have " + std::to_string(z.rows()) + " rows but the network has " +
                         std::to_string(*expected_rows) + " nodes");
  }
  return Covariates(std::move(z), normalize);
}

void save_covariates(const Covariates& cov, const fs::path& path) { write_matrix_csv(cov.z, path); }

std::vector<int> read_labels(const fs::path& path, int* num_clusters) {
  auto in = open_in(path);
  std::map<long long, int> ids;
  std::vector<int> labels;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    long long v = 0;
    if (!parse_int(t, v)) throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected an integer label");
    auto [it, inserted] = ids.try_emplace(v, static_cast<int>(ids.size()));
    labels.push_back(it->second);
  }
  if (num_clusters) *num_clusters = static_cast<int>(ids.size());
  return labels;
}

void write_labels(const std::vector<int>& labels, const fs::path& path, const std::string& header) {
  auto out = open_out(path);
  write_header(out, header);
  for (int l : labels) out << l << '\n';
  finish(out, path);
}

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, trim(t.substr(eq + 1))).second) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues load_key_values(const fs::path& path) {
  auto in = open_in(path);
  return parse_key_values(in, path.string());
}

ExperimentConfig ExperimentConfig::from_key_values(const KeyValues& kv) {
  ExperimentConfig cfg;
  ConfigReader r(kv);
  r.integer("seed", cfg.seed);

  r.integer("model.d", cfg.model.d);
  r.real("model.alpha", cfg.model.alpha);
  r.real("model.beta_prior_mean", cfg.model.beta_prior_mean);
  if (r.has("model.beta_prior_var")) {
    r.real("model.beta_prior_var", cfg.model.beta_prior_var);
    cfg.beta_prior_var_set = true;
  }

  if (auto e = r.str("engine")) {
    if (*e == "cavi") {
      cfg.engine = Engine::cavi;
    } else if (*e == "svi") {
      cfg.engine = Engine::svi;
    } else {
      throw ConfigError("engine must be cavi or svi, got '" + *e + "'");
    }
  }
  if (cfg.engine == Engine::cavi && has_prefix(kv, "svi.")) throw ConfigError("svi.* options given but engine is cavi");
  if (cfg.engine == Engine::svi && has_prefix(kv, "cavi.")) throw ConfigError("cavi.* options given but engine is svi");

  r.integer("cavi.max_cycles", cfg.cavi.max_cycles);
  r.real("cavi.tolerance", cfg.cavi.prob_tolerance);

  r.real("svi.learning_rate", cfg.svi.learning_rate);
  r.real("svi.weight_decay", cfg.svi.weight_decay);
  r.integer("svi.batch_size", cfg.svi.batch_size);
  r.integer("svi.negatives_per_positive", cfg.svi.negatives_per_positive);
  r.integer("svi.mc_samples", cfg.svi.mc_samples);
  r.integer("svi.max_epochs", cfg.svi.max_epochs);
  r.integer("svi.early_stop_patience", cfg.svi.early_stop_patience);
  r.integer("svi.lr_decay_patience", cfg.svi.lr_decay_patience);
  r.real("svi.lr_decay_factor", cfg.svi.lr_decay_factor);
  r.real("svi.grad_clip_norm", cfg.svi.grad_clip_norm);
  if (auto s = r.str("svi.negative_scheme")) {
    if (*s == "uniform") {
      cfg.svi.negative_scheme = svi::NegativeScheme::uniform;
    } else if (*s == "row_anchored") {
      cfg.svi.negative_scheme = svi::NegativeScheme::row_anchored;
    } else {
      throw ConfigError("svi.negative_scheme must be uniform or row_anchored");
    }
  }

  if (auto v = r.str("data.network")) cfg.network_path = *v;
  if (auto v = r.str("data.format")) cfg.network_format = parse_network_format(*v);
  if (auto v = r.str("data.covariates")) cfg.covariates_path = *v;
  if (auto v = r.str("data.labels")) cfg.labels_path = *v;
  r.boolean("data.normalize_covariates", cfg.normalize_covariates);

  if (has_prefix(kv, "simulate.")) {
    sim::SimScenario s;
    bool community = false;
    r.boolean("simulate.community", community);
    if (community) s = sim::SimScenario::community(1, s.n, s.p, s.d, s.k, 0);
    r.integer("simulate.case", s.case_id);
    r.integer("simulate.n", s.n);
    r.integer("simulate.p", s.p);
    r.integer("simulate.d", s.d);
    r.integer("simulate.s_b", s.s_b);
    r.real("simulate.beta_star", s.beta_star);
    r.real("simulate.k", s.k);
    r.integer("simulate.mismatch_count", s.mismatch_count);
    if (r.has("simulate.mismatch_ratio")) {
      double ratio = 0.0;
      r.real("simulate.mismatch_ratio", ratio);
      s.mismatch_ratio = ratio;
    }
    if (auto v = r.str("simulate.covariates")) {
      if (*v == "gaussian") {
        s.covariate_kind = sim::CovariateKind::gaussian;
      } else if (*v == "binary") {
        s.covariate_kind = sim::CovariateKind::binary;
      } else {
        throw ConfigError("simulate.covariates must be gaussian or binary");
      }
    }
    cfg.scenario = s;
  }

  if (auto v = r.str("metrics")) cfg.metrics = split_list(*v);
  if (auto v = r.str("baselines")) cfg.baselines = split_list(*v);
  r.integer("cluster.k", cfg.clusters);
  r.integer("cluster.restarts", cfg.kmeans_restarts);
  r.real("output.sparse_quantile", cfg.sparse_quantile);
  if (auto v = r.str("output.dir")) cfg.output_dir = *v;

  r.reject_unused();
  cfg.validate();
  return cfg;
}

KeyValues ExperimentConfig::to_key_values() const {
  KeyValues kv;
  kv["seed"] = std::to_string(seed);
  kv["model.d"] = std::to_string(model.d);
  kv["model.alpha"] = format_number(model.alpha);
  kv["model.beta_prior_mean"] = format_number(model.beta_prior_mean);
  if (beta_prior_var_set) kv["model.beta_prior_var"] = format_number(model.beta_prior_var);
  kv["engine"] = engine_name(engine);
  if (engine == Engine::cavi) {
    kv["cavi.max_cycles"] = std::to_string(cavi.max_cycles);
    kv["cavi.tolerance"] = format_number(cavi.prob_tolerance);
  } else {
    kv["svi.learning_rate"] = format_number(svi.learning_rate);
    kv["svi.weight_decay"] = format_number(svi.weight_decay);
    kv["svi.batch_size"] = std::to_string(svi.batch_size);
    kv["svi.negatives_per_positive"] = std::to_string(svi.negatives_per_positive);
    kv["svi.mc_samples"] = std::to_string(svi.mc_samples);
    kv["svi.max_epochs"] = std::to_string(svi.max_epochs);
    kv["svi.early_stop_patience"] = std::to_string(svi.early_stop_patience);
    kv["svi.lr_decay_patience"] = std::to_string(svi.lr_decay_patience);
    kv["svi.lr_decay_factor"] = format_number(svi.lr_decay_factor);
    kv["svi.grad_clip_norm"] = format_number(svi.grad_clip_norm);
    kv["svi.negative_scheme"] = svi.negative_scheme == svi::NegativeScheme::uniform ? "uniform" : "row_anchored";
  }
  if (scenario) {
    const auto& s = *scenario;
    kv["simulate.case"] = std::to_string(s.case_id);
    kv["simulate.n"] = std::to_string(s.n);
    kv["simulate.p"] = std::to_string(s.p);
    kv["simulate.d"] = std::to_string(s.d);
    kv["simulate.s_b"] = std::to_string(s.s_b);
    kv["simulate.beta_star"] = format_number(s.beta_star);
    kv["simulate.k"] = format_number(s.k);
    kv["simulate.mismatch_count"] = std::to_string(s.mismatch_count);
    if (s.mismatch_ratio) kv["simulate.mismatch_ratio"] = format_number(*s.mismatch_ratio);
    kv["simulate.covariates"] = s.covariate_kind == sim::CovariateKind::binary ? "binary" : "gaussian";
    kv["simulate.community"] = s.community_variant ? "true" : "false";
  } else {
    kv["data.network"] = network_path;
    kv["data.format"] = format_name(network_format);
    if (!covariates_path.empty()) kv["data.covariates"] = covariates_path;
    if (!labels_path.empty()) kv["data.labels"] = labels_path;
    kv["data.normalize_covariates"] = normalize_covariates ? "true" : "false";
  }
  if (!metrics.empty()) kv["metrics"] = join(metrics);
  if (!baselines.empty()) kv["baselines"] = join(baselines);
  if (clusters > 0) kv["cluster.k"] = std::to_string(clusters);
  kv["cluster.restarts"] = std::to_string(kmeans_restarts);
  kv["output.sparse_quantile"] = format_number(sparse_quantile);
  if (!output_dir.empty()) kv["output.dir"] = output_dir;
  return kv;
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
    if (engine == Engine::cavi) {
      if (cavi.max_cycles < 1 || !(cavi.prob_tolerance > 0.0)) throw ConfigError("cavi options out of range");
    } else {
      svi.validate();
    }
    if (scenario) scenario->validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }

  if (scenario && !network_path.empty()) throw ConfigError("give either data.network or simulate.*, not both");
  if (!scenario && network_path.empty()) throw ConfigError("no data: set data.network or simulate.*");
  for (const auto& m : metrics) {
    if (!kMetrics.count(m)) throw ConfigError("unknown metric '" + m + "' (expected pcc or ri)");
  }
  for (const auto& b : baselines) {
    if (!kBaselines.count(b)) throw ConfigError("unknown baseline '" + b + "'");
  }
  const bool wants_pcc = std::count(metrics.begin(), metrics.end(), "pcc") > 0;
  const bool wants_ri = std::count(metrics.begin(), metrics.end(), "ri") > 0;
  if (wants_pcc && !scenario) throw ConfigError("metric pcc needs true probabilities, which only simulated data has");
  if (wants_ri && labels_path.empty() && !(scenario && scenario->community_variant)) {
    throw ConfigError("metric ri needs true labels: set data.labels or simulate.community = true");
  }
  if (std::count(baselines.begin(), baselines.end(), "svd_yzo") && !scenario) {
    throw ConfigError("baseline svd_yzo needs the true covariate support, which only simulated data has");
  }
  if (kmeans_restarts < 1) throw ConfigError("cluster.restarts must be >= 1");
  if (clusters < 0) throw ConfigError("cluster.k must be >= 0");
  if (!(sparse_quantile > 0.0 && sparse_quantile < 1.0)) throw ConfigError("output.sparse_quantile must lie in (0, 1)");
}

ResultBundle run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();

  struct Data {
    Network net;
    Covariates cov;
    std::optional<MatrixXd> truth_probabilities;
    std::vector<int> true_labels;
    int true_clusters = 0;
    std::vector<int> support;
  };

  const Data data = staged(cfg.scenario ? "simulate" : "load", [&] {
    Data out;
    if (cfg.scenario) {
      sim::SimScenario s = *cfg.scenario;
      s.seed = derive_seed(cfg.seed, {0});
      sim::SimTruth truth = sim::simulate(s);
      out.truth_probabilities = truth.probabilities(s.beta_star);
      out.true_labels = truth.true_labels;
      out.true_clusters = truth.num_clusters;
      for (Eigen::Index r = 0; r < truth.b_star.rows(); ++r) {
        if (truth.b_star.row(r).cwiseAbs().maxCoeff() > 0.0) out.support.push_back(static_cast<int>(r));
      }
      out.net = std::move(truth.network);
      out.cov = cfg.normalize_covariates ? Covariates(truth.z.z, true) : std::move(truth.z);
    } else {
      out.net = load_network(cfg.network_path, cfg.network_format);
      out.cov = cfg.covariates_path.empty() ? Covariates::none(out.net.n())
                                            : load_covariates(cfg.covariates_path, cfg.normalize_covariates, out.net.n());
      if (!cfg.labels_path.empty()) {
        out.true_labels = read_labels(cfg.labels_path, &out.true_clusters);
        if (static_cast<int>(out.true_labels.size()) != out.net.n()) {
          throw DimensionError("label file has " + std::to_string(out.true_labels.size()) + " entries for " +
                               std::to_string(out.net.n()) + " nodes");
        }
      }
    }
    return out;
  });

  const bool wants_ri = std::count(cfg.metrics.begin(), cfg.metrics.end(), "ri") > 0;
  const int clusters = cfg.clusters > 0 ? cfg.clusters : data.true_clusters;
  if (wants_ri && (clusters < 1 || clusters > data.net.n())) {
    throw ConfigError("cluster count " + std::to_string(clusters) + " is not in [1, n]");
  }

  ModelConfig model = cfg.model;
  if (!cfg.beta_prior_var_set) {
    model.beta_prior_var = ModelConfig::defaults_for(data.net.n(), model.d).beta_prior_var;
  }

  ResultBundle bundle;
  bundle.seed = cfg.seed;
  bundle.config_echo = cfg.to_key_values();

  std::vector<Method> methods;
  staged("fit", [&] {
    const std::uint64_t fit_seed = derive_seed(cfg.seed, {1});
    Method m{"calsm", {}, {}};
    if (cfg.engine == Engine::cavi) {
      cavi::CaviFit fit = cavi::fit_cavi(data.net, data.cov, model, cfg.cavi, fit_seed);
      m.probabilities = cavi::predict_probabilities(fit.state);
      bundle.latent_means = fit.state.x_means;
      bundle.report = fit.report;
    } else {
      svi::SviConfig sc = cfg.svi;
      sc.seed = fit_seed;
      svi::SviFit fit = svi::fit_svi(data.net, data.cov, model, sc);
      m.probabilities = svi::predict_probabilities(fit.state);
      bundle.latent_means = fit.state.x_means();
      bundle.report = fit.report;
    }
    m.embedding = bundle.latent_means;
    methods.push_back(std::move(m));
    return 0;
  });

  staged("baseline", [&] {
    for (const auto& name : cfg.baselines) {
      Method m{name, {}, {}};
      if (name == "svd_y" || name == "svd_yz" || name == "svd_yzo") {
        baselines::SvdEstimate est = name == "svd_y"    ? baselines::svd_y(data.net, model.d)
                                     : name == "svd_yz" ? baselines::svd_yz(data.net, data.cov, model.d)
                                                        : baselines::svd_yz(data.net, data.cov, model.d, data.support);
        m.probabilities = std::move(est.probabilities);
        m.embedding = est.approx.embedding();
      } else {
        baselines::LsmEstimate est = baselines::lsm_mode(data.net, model, cfg.cavi, derive_seed(cfg.seed, {2}));
        m.probabilities = std::move(est.probabilities);
        m.embedding = std::move(est.latent_means);
      }
      methods.push_back(std::move(m));
    }
    return 0;
  });

  staged("metrics", [&] {
    for (const auto& metric : cfg.metrics) {
      std::map<std::string, double> scores;
      for (std::size_t k = 0; k < methods.size(); ++k) {
        const Method& m = methods[k];
        double value = 0.0;
        if (metric == "pcc") {
          value = probability_pcc(*data.truth_probabilities, m.probabilities);
        } else {
          const KMeansResult km = kmeans(normalize_rows(m.embedding), clusters, cfg.kmeans_restarts,
                                         derive_seed(cfg.seed, {3, static_cast<std::uint64_t>(k)}));
          value = rand_index(data.true_labels, km.partition.labels);
          if (k == 0) bundle.labels = km.partition.labels;
        }
        scores[m.name] = value;
        bundle.metrics.push_back({m.name, metric, value});
      }
      if (methods.size() >= 2) {
        const auto diffs = diff_metric(scores);
        for (const Method& m : methods) bundle.metrics.push_back({m.name, metric + "_diff", diffs.at(m.name)});
      }
    }
    return 0;
  });

  const MatrixXd& fitted = methods.front().probabilities;
  if (data.net.n() > 5000) {
    std::vector<double> upper = upper_triangle(fitted);
    const auto pos = static_cast<std::size_t>(std::floor(cfg.sparse_quantile * static_cast<double>(upper.size() - 1)));
    std::nth_element(upper.begin(), upper.begin() + static_cast<std::ptrdiff_t>(pos), upper.end());
    const double threshold = upper[pos];
    bundle.probability_threshold = threshold;
    for (int i = 0; i < data.net.n(); ++i)
      for (int j = i + 1; j < data.net.n(); ++j)
        if (fitted(i, j) >= threshold) bundle.sparse_probabilities.emplace_back(i, j, fitted(i, j));
  } else {
    bundle.probabilities = fitted;
  }

  if (!cfg.output_dir.empty()) staged("emit", [&] { return emit_results(bundle, cfg.output_dir); });
  return bundle;
}

std::vector<fs::path> emit_results(const ResultBundle& bundle, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  OutputGuard guard;
  std::vector<fs::path> written;
  const std::string header = seed_header(bundle.seed);
  auto record = [&](const fs::path& p) {
    written.push_back(p);
    guard.add({p});
  };

  // Stale files from an earlier emit would otherwise survive a rerun.
  for (const char* name : {"metrics.tsv", "labels.tsv", "probabilities.csv", "probabilities_sparse.tsv"}) {
    fs::remove(dir / name, ec);
  }

  if (!bundle.metrics.empty()) {
    const fs::path p = dir / "metrics.tsv";
    record(p);
    auto out = open_out(p);
    out << "# " << header << "\nmethod\tmetric\tvalue\n";
    for (const auto& row : bundle.metrics) out << row.method << '\t' << row.metric << '\t' << format_number(row.value) << '\n';
    finish(out, p);
  }

  record(dir / "latent_means.csv");
  write_matrix_csv(bundle.latent_means, dir / "latent_means.csv", header);

  if (bundle.probability_threshold) {
    const fs::path p = dir / "probabilities_sparse.tsv";
    record(p);
    auto out = open_out(p);
    out << "# " << header << "\n# threshold: " << format_number(*bundle.probability_threshold) << "\n";
    for (const auto& [i, j, v] : bundle.sparse_probabilities) out << i << '\t' << j << '\t' << format_number(v) << '\n';
    finish(out, p);
  } else {
    record(dir / "probabilities.csv");
    write_matrix_csv(bundle.probabilities, dir / "probabilities.csv", header);
  }

  if (!bundle.labels.empty()) {
    record(dir / "labels.tsv");
    write_labels(bundle.labels, dir / "labels.tsv", header);
  }

  json report;
  report["seed"] = bundle.seed;
  report["version"] = bundle.version;
  report["config"] = bundle.config_echo;
  const FitReport& r = bundle.report;
  report["fit"] = {{"engine", r.engine},
                   {"iterations", r.iterations},
                   {"optimizer_steps", r.optimizer_steps},
                   {"final_elbo", format_number(r.final_elbo)},
                   {"best_smoothed_elbo", format_number(r.best_smoothed_elbo)},
                   {"final_learning_rate", format_number(r.final_learning_rate)},
                   {"last_change", format_number(r.last_change)},
                   {"converged", r.converged}};
  if (bundle.probability_threshold) report["probability_threshold"] = format_number(*bundle.probability_threshold);
  {
    const fs::path p = dir / "report.json";
    record(p);
    auto out = open_out(p);
    out << "// " << header << '\n' << report.dump(2) << '\n';
    finish(out, p);
  }

  guard.release();
  return written;
}

ResultBundle read_results(const fs::path& dir) {
  ResultBundle b;
  {
    auto in = open_in(dir / "report.json");
    json report;
    try {
      report = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
      throw InputError((dir / "report.json").string() + ": " + e.what());
    }
    b.seed = report.at("seed").get<std::uint64_t>();
    b.version = report.at("version").get<std::string>();
    b.config_echo = report.at("config").get<KeyValues>();
    const json& f = report.at("fit");
    auto num = [](const json& j) { return std::stod(j.get<std::string>()); };
    b.report.engine = f.at("engine").get<std::string>();
    b.report.iterations = f.at("iterations").get<int>();
    b.report.optimizer_steps = f.at("optimizer_steps").get<long long>();
    b.report.final_elbo = num(f.at("final_elbo"));
    b.report.best_smoothed_elbo = num(f.at("best_smoothed_elbo"));
    b.report.final_learning_rate = num(f.at("final_learning_rate"));
    b.report.last_change = num(f.at("last_change"));
    b.report.converged = f.at("converged").get<bool>();
    if (report.contains("probability_threshold")) b.probability_threshold = num(report.at("probability_threshold"));
  }

  b.latent_means = read_matrix_csv(dir / "latent_means.csv");
  if (b.probability_threshold) {
    auto in = open_in(dir / "probabilities_sparse.tsv");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto f = split(line, '\t');
      double v = 0.0;
      long long i = 0, j = 0;
      if (f.size() != 3 || !parse_int(f[0], i) || !parse_int(f[1], j) || !parse_double(f[2], v)) {
        throw InputError("probabilities_sparse.tsv: malformed line");
      }
      b.sparse_probabilities.emplace_back(static_cast<int>(i), static_cast<int>(j), v);
    }
  } else {
    b.probabilities = read_matrix_csv(dir / "probabilities.csv");
  }
  if (fs::exists(dir / "labels.tsv")) {
    auto in = open_in(dir / "labels.tsv");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      b.labels.push_back(std::stoi(line));
    }
  }
  if (fs::exists(dir / "metrics.tsv")) {
    auto in = open_in(dir / "metrics.tsv");
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      if (!header_seen) {
        header_seen = true;
        continue;
      }
      const auto f = split(line, '\t');
      double v = 0.0;
      if (f.size() != 3 || !parse_double(f[2], v)) throw InputError("metrics.tsv: malformed line");
      b.metrics.push_back({f[0], f[1], v});
    }
  }
  return b;
}

}  // namespace calsm::io
