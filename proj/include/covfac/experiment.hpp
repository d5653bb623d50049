#pragma once

// Experiment orchestration: strict JSON configuration, run manifests with
// atomic writes, RFC-4180 CSV emission, and the four experiment commands
// (contraction rates, test-function error curves, concentration checks,
// sampler self-consistency).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "covfac/conclab.hpp"
#include "covfac/inference.hpp"
#include "covfac/model.hpp"
#include "covfac/testfns.hpp"

namespace covfac {

inline constexpr const char* kCodeVersion = "covfac 0.1.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// configuration

enum class ExperimentKind { RatesFrobenius, RatesOperator, Testfns, Conclab, Geweke };

inline std::string kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::RatesFrobenius: return "rates-frobenius";
    case ExperimentKind::RatesOperator: return "rates-operator";
    case ExperimentKind::Testfns: return "testfns";
    case ExperimentKind::Conclab: return "conclab";
    case ExperimentKind::Geweke: return "geweke";
  }
  return "?";
}

// radius formula tags for the contraction-rate experiments
inline constexpr const char* kEpsTagDense = "p9-logn3";   // sqrt(p^9 (log n)^3 / n)
inline constexpr const char* kEpsTagSparse = "logp5";     // sqrt((log p)^5 / n)

inline double eps_n_value(const std::string& tag, int p, int n) {
  const double pd = p, nd = n;
  if (tag == kEpsTagDense) {
    double ln = std::log(nd);
    return std::sqrt(std::pow(pd, 9.0) * ln * ln * ln / nd);
  }
  if (tag == kEpsTagSparse) {
    double lp = std::log(pd);
    return std::sqrt(std::pow(lp, 5.0) / nd);
  }
  throw ConfigError("eps_formula: unknown tag '" + tag + "' (allowed: " +
                    std::string(kEpsTagDense) + ", " + kEpsTagSparse + ")");
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::RatesOperator;
  std::vector<int> n_grid = {200};
  std::vector<int> p_grid = {50};
  int k = 1;
  int s = 0;  // 0: ceil(log p) per cell
  std::string regime = "shrinkage";  // shrinkage | point-mass | normal-iid
  double alpha = 0.5, kappa = 1.0;
  double a_tau = 0.0, b_tau = 0.0;  // <= 0: max(log(pk), 1/2)
  double a_sigma = 1.0, b_sigma = 1.0, m_sigma = 10.0;
  double sigma2_true = 1.0;
  double a3_constant = 0.0;  // <= 0: 3 sqrt(p / s), scaled for sparse support
  int iterations = 2000, burnin = 500, thin = 1;
  // chains start from a data-driven spectral estimate (over-inclusive support
  // the sweeps can prune); set false to start from a prior draw
  bool warm_start = true;
  int replicates = 4;
  int j = 8;  // separation index for the test-function experiments
  std::string eps_formula = kEpsTagSparse;
  std::vector<double> m_radii = {1.0, 2.0, 4.0, 8.0};
  int conclab_replicates = 4000;
  int geweke_samples = 20000;
  int geweke_p = 3, geweke_n = 10;
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  void validate() const {
    if (n_grid.empty()) throw ConfigError("n_grid: must be nonempty");
    if (p_grid.empty()) throw ConfigError("p_grid: must be nonempty");
    for (std::size_t i = 0; i < n_grid.size(); ++i)
      if (n_grid[i] < 1)
        throw ConfigError("n_grid[" + std::to_string(i) + "]: must be positive");
    for (std::size_t i = 0; i < p_grid.size(); ++i)
      if (p_grid[i] < 1)
        throw ConfigError("p_grid[" + std::to_string(i) + "]: must be positive");
    if (k < 1) throw ConfigError("k: must be positive");
    if (s < 0) throw ConfigError("s: must be >= 0 (0 selects ceil(log p))");
    if (regime != "shrinkage" && regime != "point-mass" && regime != "normal-iid")
      throw ConfigError("regime: unknown value '" + regime +
                        "' (allowed: shrinkage, point-mass, normal-iid)");
    if (iterations <= burnin || burnin < 0 || thin < 1)
      throw ConfigError("iterations/burnin/thin: need iterations > burnin >= 0, thin >= 1");
    if (replicates < 1) throw ConfigError("replicates: must be positive");
    if (j < 1) throw ConfigError("j: must be positive");
    if (conclab_replicates < 100)
      throw ConfigError("conclab_replicates: must be >= 100");
    if (geweke_samples < 100) throw ConfigError("geweke_samples: must be >= 100");
    if (geweke_p < 1 || geweke_p > 10 || geweke_n < 1 || geweke_n > 20)
      throw ConfigError("geweke_p/geweke_n: need 1 <= p <= 10, 1 <= n <= 20");
    if (sigma2_true <= 0.0) throw ConfigError("sigma2_true: must be positive");
    if (out_dir.empty()) throw ConfigError("out_dir: must be nonempty");
    eps_n_value(eps_formula, 10, 10);  // validates the tag
  }

  int cell_s(int p) const {
    int v = s > 0 ? s : static_cast<int>(std::ceil(std::log(static_cast<double>(p))));
    return std::min(std::max(v, 1), p);
  }
  double cell_a3(int p) const {
    return a3_constant > 0.0
               ? a3_constant
               : 3.0 * std::sqrt(static_cast<double>(p) / cell_s(p));
  }
  PriorRegime prior_regime() const {
    if (regime == "shrinkage") return PriorRegime::Shrinkage;
    if (regime == "point-mass") return PriorRegime::PointMass;
    return PriorRegime::NormalIid;
  }
  SamplerConfig sampler_config(std::uint64_t stream) const {
    SamplerConfig c;
    c.regime = prior_regime();
    c.k = k;
    c.iterations = iterations;
    c.burnin = burnin;
    c.thin = thin;
    c.alpha = alpha;
    c.a_tau = a_tau;
    c.b_tau = b_tau;
    c.kappa = kappa;
    c.a_sigma = a_sigma;
    c.b_sigma = b_sigma;
    c.m_sigma = m_sigma;
    c.warm_start = warm_start;
    c.seed = seed;
    c.stream = stream;
    return c;
  }
};

namespace detail_cfg {

template <typename T>
T field_as(const nlohmann::json& j, const std::string& key);

template <>
inline double field_as<double>(const nlohmann::json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError(key + ": expected a number");
  return j.get<double>();
}
template <>
inline int field_as<int>(const nlohmann::json& j, const std::string& key) {
  if (!j.is_number_integer()) throw ConfigError(key + ": expected an integer");
  return j.get<int>();
}
template <>
inline std::uint64_t field_as<std::uint64_t>(const nlohmann::json& j,
                                             const std::string& key) {
  if (!j.is_number_unsigned() && !j.is_number_integer())
    throw ConfigError(key + ": expected a nonnegative integer");
  auto v = j.get<long long>();
  if (v < 0) throw ConfigError(key + ": expected a nonnegative integer");
  return static_cast<std::uint64_t>(v);
}
template <>
inline bool field_as<bool>(const nlohmann::json& j, const std::string& key) {
  if (!j.is_boolean()) throw ConfigError(key + ": expected a boolean");
  return j.get<bool>();
}
template <>
inline std::string field_as<std::string>(const nlohmann::json& j,
                                         const std::string& key) {
  if (!j.is_string()) throw ConfigError(key + ": expected a string");
  return j.get<std::string>();
}

inline std::vector<int> int_list(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array() || j.empty()) throw ConfigError(key + ": expected a nonempty array");
  std::vector<int> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(field_as<int>(j[i], key + "[" + std::to_string(i) + "]"));
  return out;
}

inline std::vector<double> double_list(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array() || j.empty()) throw ConfigError(key + ": expected a nonempty array");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    if (!e.is_number()) throw ConfigError(key + "[" + std::to_string(i) + "]: expected a number");
    out.push_back(e.get<double>());
  }
  return out;
}

}  // namespace detail_cfg

inline ExperimentKind parse_kind(const std::string& s) {
  if (s == "rates-frobenius") return ExperimentKind::RatesFrobenius;
  if (s == "rates-operator") return ExperimentKind::RatesOperator;
  if (s == "testfns") return ExperimentKind::Testfns;
  if (s == "conclab") return ExperimentKind::Conclab;
  if (s == "geweke") return ExperimentKind::Geweke;
  throw ConfigError("kind: unknown value '" + s +
                    "' (allowed: rates-frobenius, rates-operator, testfns, "
                    "conclab, geweke)");
}

// Strict parse: every key must be known, every value well-typed; messages
// carry the offending field path.
inline ExperimentConfig parse_config_json(const nlohmann::json& root) {
  using namespace detail_cfg;
  if (!root.is_object()) throw ConfigError("config root: expected an object");
  ExperimentConfig cfg;
  for (const auto& [key, val] : root.items()) {
    if (key == "kind") cfg.kind = parse_kind(field_as<std::string>(val, key));
    else if (key == "n_grid") cfg.n_grid = int_list(val, key);
    else if (key == "p_grid") cfg.p_grid = int_list(val, key);
    else if (key == "k") cfg.k = field_as<int>(val, key);
    else if (key == "s") cfg.s = field_as<int>(val, key);
    else if (key == "regime") cfg.regime = field_as<std::string>(val, key);
    else if (key == "alpha") cfg.alpha = field_as<double>(val, key);
    else if (key == "kappa") cfg.kappa = field_as<double>(val, key);
    else if (key == "a_tau") cfg.a_tau = field_as<double>(val, key);
    else if (key == "b_tau") cfg.b_tau = field_as<double>(val, key);
    else if (key == "a_sigma") cfg.a_sigma = field_as<double>(val, key);
    else if (key == "b_sigma") cfg.b_sigma = field_as<double>(val, key);
    else if (key == "m_sigma") cfg.m_sigma = field_as<double>(val, key);
    else if (key == "sigma2_true") cfg.sigma2_true = field_as<double>(val, key);
    else if (key == "a3_constant") cfg.a3_constant = field_as<double>(val, key);
    else if (key == "iterations") cfg.iterations = field_as<int>(val, key);
    else if (key == "burnin") cfg.burnin = field_as<int>(val, key);
    else if (key == "thin") cfg.thin = field_as<int>(val, key);
    else if (key == "warm_start") cfg.warm_start = field_as<bool>(val, key);
    else if (key == "replicates") cfg.replicates = field_as<int>(val, key);
    else if (key == "j") cfg.j = field_as<int>(val, key);
    else if (key == "eps_formula") cfg.eps_formula = field_as<std::string>(val, key);
    else if (key == "m_radii") cfg.m_radii = double_list(val, key);
    else if (key == "conclab_replicates") cfg.conclab_replicates = field_as<int>(val, key);
    else if (key == "geweke_samples") cfg.geweke_samples = field_as<int>(val, key);
    else if (key == "geweke_p") cfg.geweke_p = field_as<int>(val, key);
    else if (key == "geweke_n") cfg.geweke_n = field_as<int>(val, key);
    else if (key == "seed") cfg.seed = field_as<std::uint64_t>(val, key);
    else if (key == "out_dir") cfg.out_dir = field_as<std::string>(val, key);
    else throw ConfigError("unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config_json(root);
}

// normalized echo of the configuration, with stable key order
inline nlohmann::ordered_json config_snapshot(const ExperimentConfig& c) {
  nlohmann::ordered_json o;
  o["kind"] = kind_name(c.kind);
  o["n_grid"] = c.n_grid;
  o["p_grid"] = c.p_grid;
  o["k"] = c.k;
  o["s"] = c.s;
  o["regime"] = c.regime;
  o["alpha"] = c.alpha;
  o["kappa"] = c.kappa;
  o["a_tau"] = c.a_tau;
  o["b_tau"] = c.b_tau;
  o["a_sigma"] = c.a_sigma;
  o["b_sigma"] = c.b_sigma;
  o["m_sigma"] = c.m_sigma;
  o["sigma2_true"] = c.sigma2_true;
  o["a3_constant"] = c.a3_constant;
  o["iterations"] = c.iterations;
  o["burnin"] = c.burnin;
  o["thin"] = c.thin;
  o["warm_start"] = c.warm_start;
  o["replicates"] = c.replicates;
  o["j"] = c.j;
  o["eps_formula"] = c.eps_formula;
  o["m_radii"] = c.m_radii;
  o["conclab_replicates"] = c.conclab_replicates;
  o["geweke_samples"] = c.geweke_samples;
  o["geweke_p"] = c.geweke_p;
  o["geweke_n"] = c.geweke_n;
  o["seed"] = c.seed;
  o["out_dir"] = c.out_dir;
  return o;
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180, '.' decimal separator, deterministic number formatting)

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> cells) {
    if (cells.size() != header_.size())
      throw std::invalid_argument("CsvWriter: row width mismatch");
    rows_.push_back(std::move(cells));
  }

  std::string body() const {
    std::string out = join(header_);
    for (const auto& r : rows_) out += join(r);
    return out;
  }

  void write(const std::string& path) const { atomic_write(path, body()); }

  static void atomic_write(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + tmp);
      out << content;
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  static std::string join(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) line += ',';
      line += csv_escape(cells[i]);
    }
    line += "\r\n";
    return line;
  }
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// ---------------------------------------------------------------------------
// manifest

struct RunManifest {
  nlohmann::ordered_json doc;
  std::string path;

  void init(const ExperimentConfig& cfg, const std::vector<std::string>& tasks) {
    doc = nlohmann::ordered_json();
    doc["code_version"] = kCodeVersion;
    doc["seed"] = cfg.seed;
    doc["config"] = config_snapshot(cfg);
    doc["started_at"] = timestamp();
    doc["finished_at"] = "";
    doc["tasks"] = nlohmann::ordered_json::array();
    doc["outputs"] = nlohmann::ordered_json::array();
    for (const auto& t : tasks) {
      nlohmann::ordered_json task;
      task["name"] = t;
      task["status"] = "pending";
      doc["tasks"].push_back(task);
    }
    write();
  }

  void set_status(const std::string& task, const std::string& status) {
    for (auto& t : doc["tasks"])
      if (t["name"] == task) t["status"] = status;
    write();
  }

  void add_output(const std::string& file) {
    doc["outputs"].push_back(file);
    write();
  }

  void finish() {
    doc["finished_at"] = timestamp();
    write();
  }

  void write() const {
    if (path.empty()) return;
    CsvWriter::atomic_write(path, doc.dump(2) + "\n");
  }

  static std::string timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
  }
};

// --cell filter: comma-separated key=value terms, all of which must match
struct CellFilter {
  std::map<std::string, std::string> terms;

  static CellFilter parse(const std::string& text) {
    CellFilter f;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      auto eq = tok.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--cell: expected key=value, got '" + tok + "'");
      f.terms[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return f;
  }
  bool matches(const std::map<std::string, std::string>& cell) const {
    for (const auto& [k, v] : terms) {
      auto it = cell.find(k);
      if (it == cell.end() || it->second != v) return false;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// commands

struct CommandResult {
  int exit_code = 0;  // 0 ok, 2 runtime failure with partial results
  std::vector<std::string> files;
  std::string message;
};

inline std::string out_file(const ExperimentConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.out_dir);
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

// Contraction-rate study: per (p, n, replicate) draw a truth, simulate,
// run the chain, and record posterior loss summaries. Emits a long-form CSV,
// a per-cell aggregate CSV, and fitted log-log slopes.
inline CommandResult cmd_rates(const ExperimentConfig& cfg,
                               const CellFilter& filter = {}) {
  cfg.validate();
  const bool frob = cfg.kind == ExperimentKind::RatesFrobenius;
  RunManifest manifest;
  manifest.path = out_file(cfg, "manifest.json");
  manifest.init(cfg, {"rates"});
  manifest.set_status("rates", "running");

  CsvWriter longform({"kind", "regime", "p", "k", "s", "n", "replicate",
                      "op_mean", "op_median", "op_q05", "op_q95", "frob_mean",
                      "frob_median", "eps_n", "gamma_accept", "sigma2_accept",
                      "seed", "stream"});
  CsvWriter agg({"kind", "regime", "p", "k", "s", "n", "replicates",
                 "mean_op_loss", "mean_frob_loss", "eps_n"});
  CsvWriter fits({"scope", "fixed", "slope"});

  CommandResult res;
  std::map<std::pair<int, int>, std::pair<double, double>> cell_means;
  std::uint64_t stream = 0;
  int failures = 0;
  for (int p : cfg.p_grid) {
    for (int n : cfg.n_grid) {
      std::map<std::string, std::string> cell = {
          {"p", std::to_string(p)}, {"n", std::to_string(n)}};
      if (!filter.matches(cell)) {
        stream += cfg.replicates;
        continue;
      }
      double sum_op = 0.0, sum_frob = 0.0;
      int done = 0;
      for (int rep = 0; rep < cfg.replicates; ++rep, ++stream) {
        try {
          TruthSpec ts;
          ts.p = p;
          ts.k = cfg.k;
          ts.s = cfg.cell_s(p);
          ts.sigma2_true = cfg.sigma2_true;
          ts.seed = cfg.seed + stream;
          ts.a3_constant = cfg.cell_a3(p);
          auto [truth, c_n] = generate_truth(ts);
          RngHandle data_rng(cfg.seed, 0xD000 + stream);
          Matrix data = simulate_dataset(truth, n, data_rng);
          SamplerConfig sc = cfg.sampler_config(stream);
          PosteriorChain chain = run_chain(sc, data, &truth);
          LossSummary ls = posterior_loss_summary(chain, cfg.m_radii);
          double eps = eps_n_value(cfg.eps_formula, p, n);
          longform.add_row({kind_name(cfg.kind), cfg.regime, std::to_string(p),
                            std::to_string(cfg.k), std::to_string(ts.s),
                            std::to_string(n), std::to_string(rep),
                            csv_num(ls.op_mean), csv_num(ls.op_median),
                            csv_num(ls.op_q05), csv_num(ls.op_q95),
                            csv_num(ls.frob_mean), csv_num(ls.frob_median),
                            csv_num(eps), csv_num(chain.gamma_accept_rate),
                            csv_num(chain.sigma2_accept_rate),
                            std::to_string(cfg.seed), std::to_string(stream)});
          sum_op += ls.op_mean;
          sum_frob += ls.frob_mean;
          ++done;
        } catch (const std::exception& e) {
          ++failures;
          res.message += "cell p=" + std::to_string(p) + " n=" + std::to_string(n) +
                         " rep=" + std::to_string(rep) + ": " + e.what() + "\n";
        }
      }
      if (done > 0) {
        double mo = sum_op / done, mf = sum_frob / done;
        cell_means[{p, n}] = {mo, mf};
        agg.add_row({kind_name(cfg.kind), cfg.regime, std::to_string(p),
                     std::to_string(cfg.k), std::to_string(cfg.cell_s(p)),
                     std::to_string(n), std::to_string(done), csv_num(mo),
                     csv_num(mf), csv_num(eps_n_value(cfg.eps_formula, p, n))});
      }
    }
  }

  // fitted slopes: log mean loss vs log n at fixed p, and vs log log p at fixed n
  auto pick = [&](int p, int n) {
    auto it = cell_means.find({p, n});
    return it == cell_means.end()
               ? std::pair<bool, double>{false, 0.0}
               : std::pair<bool, double>{true, frob ? it->second.second
                                                    : it->second.first};
  };
  for (int p : cfg.p_grid) {
    std::vector<double> xs, ys;
    for (int n : cfg.n_grid)
      if (auto [ok, v] = pick(p, n); ok && v > 0.0) {
        xs.push_back(std::log(static_cast<double>(n)));
        ys.push_back(std::log(v));
      }
    if (xs.size() >= 2)
      fits.add_row({"loss-vs-n", "p=" + std::to_string(p),
                    csv_num(least_squares_slope(xs, ys))});
  }
  for (int n : cfg.n_grid) {
    std::vector<double> xs, ys;
    for (int p : cfg.p_grid)
      if (auto [ok, v] = pick(p, n); ok && v > 0.0) {
        xs.push_back(std::log(std::log(static_cast<double>(p))));
        ys.push_back(std::log(v));
      }
    if (xs.size() >= 2)
      fits.add_row({"loss-vs-loglogp", "n=" + std::to_string(n),
                    csv_num(least_squares_slope(xs, ys))});
  }

  for (auto [w, name] : {std::pair<const CsvWriter*, const char*>{&longform, "rates_long.csv"},
                         {&agg, "rates_summary.csv"},
                         {&fits, "rates_fit.csv"}}) {
    std::string f = out_file(cfg, name);
    w->write(f);
    manifest.add_output(name);
    res.files.push_back(f);
  }
  manifest.set_status("rates", failures == 0 ? "done" : "failed");
  manifest.finish();
  res.exit_code = failures == 0 ? 0 : 2;
  return res;
}

// Test-function error-rate curves over the configured n-grid: a Frobenius
// scenario (scaled identity alternative) and a projection scenario
// (orthonormal-column factor truth, in-space perturbation), both separated
// by the configured index j.
inline CommandResult cmd_testfns(const ExperimentConfig& cfg,
                                 const CellFilter& filter = {}) {
  cfg.validate();
  RunManifest manifest;
  manifest.path = out_file(cfg, "manifest.json");
  manifest.init(cfg, {"testfns"});
  manifest.set_status("testfns", "running");

  const int p = cfg.p_grid.front();
  const int n_ref = cfg.n_grid.front();
  const double logp = std::log(static_cast<double>(p));

  std::vector<TestScenario> scenarios;
  {
    // Frobenius: Sigma1 = (1 + d) I with d placing the null mean near the
    // rejection boundary at the reference n
    double d = std::pow(4.0 / (n_ref * static_cast<double>(p)), 0.25);
    Matrix s1 = Matrix::Identity(p, p) * (1.0 + d);
    scenarios.push_back(make_frob_scenario(SpdMatrix(Matrix::Identity(p, p)),
                                           SpdMatrix(s1), cfg.j));
  }
  {
    const double c_n = 5.0, s0sq = 0.1;
    RngHandle setup(cfg.seed, 0x7E);
    Matrix g(p, cfg.k);
    for (int i = 0; i < p; ++i)
      for (int h = 0; h < cfg.k; ++h) g(i, h) = sample_normal(setup);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix l0 = qr.householderQ() * Matrix::Identity(p, cfg.k) * std::sqrt(c_n);
    double delta =
        cfg.j * std::sqrt(logp * logp * logp / static_cast<double>(n_ref));
    Vector u = l0.col(0) / l0.col(0).norm();
    Matrix alt_load(p, cfg.k + 1);
    alt_load.leftCols(cfg.k) = l0;
    alt_load.col(cfg.k) = u * std::sqrt(delta);
    scenarios.push_back(make_proj_scenario(FactorModelParams(l0, s0sq),
                                           FactorModelParams(alt_load, s0sq),
                                           c_n, cfg.j));
  }

  std::vector<TestScenario> kept;
  for (const auto& sc : scenarios)
    if (filter.matches({{"regime", sc.regime}})) kept.push_back(sc);

  RngHandle rng(cfg.seed, 0x7F);
  auto table = error_rate_curve(kept, cfg.n_grid, cfg.replicates, rng);

  CsvWriter csv({"n", "p", "k", "j", "regime", "type1", "type1_se", "type2",
                 "type2_se", "seed"});
  for (const auto& pt : table)
    csv.add_row({std::to_string(pt.n), std::to_string(pt.p), std::to_string(pt.k),
                 std::to_string(pt.j), pt.regime, csv_num(pt.type1),
                 csv_num(pt.type1_se), csv_num(pt.type2), csv_num(pt.type2_se),
                 std::to_string(pt.seed)});
  std::string f = out_file(cfg, "testfns_rates.csv");
  csv.write(f);
  manifest.add_output("testfns_rates.csv");
  manifest.set_status("testfns", "done");
  manifest.finish();
  return CommandResult{0, {f}, ""};
}

// Concentration checks: support/l1 tails, a quadratic-form tail table, and
// the closed-form lower bounds, all in the shared lemma CSV schema.
inline CommandResult cmd_conclab(const ExperimentConfig& cfg,
                                 const CellFilter& filter = {}) {
  cfg.validate();
  RunManifest manifest;
  manifest.path = out_file(cfg, "manifest.json");
  manifest.init(cfg, {"conclab"});
  manifest.set_status("conclab", "running");

  RngHandle rng(cfg.seed, 0xC0);
  std::vector<TailPoint> rows;
  auto want = [&](const std::string& lemma) {
    return filter.matches({{"lemma", lemma}});
  };

  if (want("suppdim")) {
    auto t = suppdim_tail_mc(shrinkage_sampler(cfg.alpha), cfg.p_grid, 8.0,
                             1e-33, cfg.conclab_replicates, rng);
    rows.insert(rows.end(), t.begin(), t.end());
  }
  if (want("l1tail")) {
    auto t = l1_tail_mc(shrinkage_sampler(cfg.alpha), cfg.p_grid,
                        cfg.conclab_replicates, rng);
    rows.insert(rows.end(), t.begin(), t.end());
  }
  if (want("quadform")) {
    int qp = std::min(cfg.p_grid.front(), 20);
    SymMatrix eye(Matrix::Identity(qp, qp));
    auto t = quadform_tail_mc(eye, 10, {1.0, 2.0, 3.0, 4.0, 5.0},
                              cfg.conclab_replicates, rng);
    rows.insert(rows.end(), t.begin(), t.end());
  }
  if (want("smallball")) {
    int sp = cfg.p_grid.front();
    std::vector<double> theta0(sp, 0.0);
    int sball = std::min(cfg.cell_s(sp), sp);
    for (int i = 0; i < sball; ++i) theta0[i] = 0.2;
    auto sb = smallball_mc(shrinkage_sampler(cfg.alpha), theta0, 0.5,
                           cfg.conclab_replicates, rng);
    TailPoint pt;
    pt.lemma = "smallball:shrinkage";
    pt.p = sp;
    pt.s = sball;
    pt.epsilon_or_t = 0.5;
    pt.estimate = sb.mc.estimate;
    pt.ci_lo = sb.mc.ci_lo;
    pt.ci_hi = sb.mc.ci_hi;
    pt.bound = std::exp(normal_smallball_log_upper(sp, theta0, 0.5));
    pt.seed = cfg.seed;
    rows.push_back(pt);
  }
  if (want("ftau")) {
    for (const auto& ft : ftau_tail_quadrature(cfg.p_grid)) {
      for (auto [tag, val] : {std::pair<const char*, double>{"ftau-upper", ft.upper},
                              {"ftau-mid", ft.mid},
                              {"ftau-lower", ft.lower}}) {
        TailPoint pt;
        pt.lemma = tag;
        pt.p = ft.p;
        pt.epsilon_or_t = std::log(static_cast<double>(ft.p));
        pt.estimate = val;
        pt.ci_lo = val;
        pt.ci_hi = val;
        pt.seed = 0;
        rows.push_back(pt);
      }
    }
  }
  if (want("de-smallball")) {
    std::vector<double> psi = {0.5, 1.0, 1.5, 2.0};
    std::vector<double> eta0 = {0.3, -0.2, 0.0, 0.7};
    auto bc = de_smallball_bound_check(psi, 0.5, 2.0, 1.5, eta0,
                                       cfg.conclab_replicates, rng);
    TailPoint pt;
    pt.lemma = "de-smallball";
    pt.p = static_cast<int>(psi.size());
    pt.s = static_cast<int>(psi.size());
    pt.epsilon_or_t = 1.5;
    pt.estimate = bc.mc.estimate;
    pt.ci_lo = bc.mc.ci_lo;
    pt.ci_hi = bc.mc.ci_hi;
    pt.bound = bc.bound;
    pt.seed = cfg.seed;
    rows.push_back(pt);
  }
  if (want("frob-priorconc")) {
    auto fc = frob_prior_conc_check({0.0, 0.0}, 0.5, cfg.conclab_replicates, rng);
    TailPoint pt;
    pt.lemma = "frob-priorconc";
    pt.p = 2;
    pt.s = 0;
    pt.epsilon_or_t = 0.5;
    pt.estimate = fc.mc.estimate;
    pt.ci_lo = fc.mc.ci_lo;
    pt.ci_hi = fc.mc.ci_hi;
    pt.bound = fc.bound;
    pt.seed = cfg.seed;
    rows.push_back(pt);
  }

  CsvWriter csv({"lemma", "p", "s", "epsilon_or_t", "estimate", "ci_lo",
                 "ci_hi", "bound", "seed"});
  for (const auto& pt : rows)
    csv.add_row({pt.lemma, std::to_string(pt.p), std::to_string(pt.s),
                 csv_num(pt.epsilon_or_t), csv_num(pt.estimate),
                 csv_num(pt.ci_lo), csv_num(pt.ci_hi), csv_num(pt.bound),
                 std::to_string(pt.seed)});
  std::string f = out_file(cfg, "conclab.csv");
  csv.write(f);
  manifest.add_output("conclab.csv");
  manifest.set_status("conclab", "done");
  manifest.finish();
  return CommandResult{0, {f}, ""};
}

// Sampler joint-distribution self-check for the configured regime.
inline CommandResult cmd_geweke(const ExperimentConfig& cfg,
                                const CellFilter& = {}) {
  cfg.validate();
  RunManifest manifest;
  manifest.path = out_file(cfg, "manifest.json");
  manifest.init(cfg, {"geweke"});
  manifest.set_status("geweke", "running");

  SamplerConfig sc = cfg.sampler_config(0);
  sc.k = std::min(cfg.k, 2);
  // The joint-distribution test exercises the update code, not the production
  // hyperparameters. The default global-scale prior at tiny m = p*k has
  // infinite variance, so prior-predictive means are dominated by huge-scale
  // states the chain visits only on astronomical timescales; with defaults
  // left in place, substitute a finite-variance scale prior so the z-test has
  // calibrated size at practical sample counts.
  if (cfg.a_tau <= 0 && cfg.b_tau <= 0) {
    sc.a_tau = 3.0;
    sc.b_tau = 3.0;
  }
  RngHandle rng(cfg.seed, 0x6E);
  auto zs = geweke_joint_test(sc, cfg.geweke_p, cfg.geweke_n,
                              cfg.geweke_samples, rng);
  CsvWriter csv({"regime", "stat", "z", "pass"});
  bool all_pass = true;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    bool pass = std::fabs(zs[i]) < 4.0;
    all_pass = all_pass && pass;
    csv.add_row({cfg.regime, std::to_string(i), csv_num(zs[i]),
                 pass ? "1" : "0"});
  }
  std::string f = out_file(cfg, "geweke.csv");
  csv.write(f);
  manifest.add_output("geweke.csv");
  manifest.set_status("geweke", all_pass ? "done" : "failed");
  manifest.finish();
  CommandResult res;
  res.exit_code = all_pass ? 0 : 2;
  res.files.push_back(f);
  if (!all_pass) res.message = "geweke z-score out of range";
  return res;
}

inline CommandResult run_experiment(const ExperimentConfig& cfg,
                                    const CellFilter& filter = {}) {
  switch (cfg.kind) {
    case ExperimentKind::RatesFrobenius:
    case ExperimentKind::RatesOperator:
      return cmd_rates(cfg, filter);
    case ExperimentKind::Testfns:
      return cmd_testfns(cfg, filter);
    case ExperimentKind::Conclab:
      return cmd_conclab(cfg, filter);
    case ExperimentKind::Geweke:
      return cmd_geweke(cfg, filter);
  }
  throw std::logic_error("run_experiment: unreachable");
}

}  // namespace covfac
