#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <new>
#include <sstream>
#include <string>

#include "covfac/experiment.hpp"

using namespace covfac;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// allocation tracking (for the no-p-x-p-materialization assertion)

namespace {

std::atomic<std::size_t> g_max_alloc{0};
std::atomic<bool> g_track{false};

}  // namespace

void* operator new(std::size_t sz) {
  if (g_track.load(std::memory_order_relaxed)) {
    std::size_t prev = g_max_alloc.load(std::memory_order_relaxed);
    while (sz > prev &&
           !g_max_alloc.compare_exchange_weak(prev, sz, std::memory_order_relaxed)) {
    }
  }
  if (void* p = std::malloc(sz)) return p;
  throw std::bad_alloc();
}

void operator delete(void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path d = fs::temp_directory_path() / ("covfac_test_" + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

// manifest text with the timestamp lines removed
std::string strip_timestamps(const std::string& text) {
  std::stringstream in(text), out;
  std::string line;
  while (std::getline(in, line))
    if (line.find("started_at") == std::string::npos &&
        line.find("finished_at") == std::string::npos)
      out << line << "\n";
  return out.str();
}

}  // namespace

TEST_CASE("parse_config: minimal file fills documented defaults") {
  auto dir = temp_dir("cfg_min");
  write_file(dir / "c.json", R"({"kind": "testfns"})");
  auto cfg = parse_config((dir / "c.json").string());
  CHECK(cfg.kind == ExperimentKind::Testfns);
  CHECK(cfg.k == 1);
  CHECK(cfg.regime == "shrinkage");
  CHECK(cfg.alpha == 0.5);
  CHECK(cfg.seed == 1);
  CHECK(cfg.j == 8);
  CHECK(cfg.eps_formula == std::string(kEpsTagSparse));
}

TEST_CASE("parse_config: rejections carry field diagnostics") {
  auto dir = temp_dir("cfg_bad");

  write_file(dir / "unknown.json", R"({"kind": "testfns", "bogus_key": 3})");
  CHECK_THROWS_WITH(parse_config((dir / "unknown.json").string()),
                    Catch::Matchers::ContainsSubstring("bogus_key"));

  write_file(dir / "negn.json", R"({"kind": "testfns", "n_grid": [100, -5]})");
  CHECK_THROWS_WITH(parse_config((dir / "negn.json").string()),
                    Catch::Matchers::ContainsSubstring("n_grid[1]"));

  write_file(dir / "eps.json", R"({"kind": "rates-operator", "eps_formula": "cubic"})");
  CHECK_THROWS_WITH(parse_config((dir / "eps.json").string()),
                    Catch::Matchers::ContainsSubstring("logp5"));

  write_file(dir / "regime.json", R"({"regime": "flat"})");
  CHECK_THROWS_WITH(parse_config((dir / "regime.json").string()),
                    Catch::Matchers::ContainsSubstring("regime"));

  write_file(dir / "type.json", R"({"k": "three"})");
  CHECK_THROWS_WITH(parse_config((dir / "type.json").string()),
                    Catch::Matchers::ContainsSubstring("k"));

  CHECK_THROWS_AS(parse_config((dir / "missing.json").string()), ConfigError);
}

TEST_CASE("eps_n_value: both formula tags") {
  CHECK(eps_n_value(kEpsTagSparse, 100, 400) ==
        Catch::Approx(std::sqrt(std::pow(std::log(100.0), 5.0) / 400.0)));
  double ln = std::log(400.0);
  CHECK(eps_n_value(kEpsTagDense, 10, 400) ==
        Catch::Approx(std::sqrt(1e9 * ln * ln * ln / 400.0)));
  CHECK_THROWS_AS(eps_n_value("nope", 10, 10), ConfigError);
}

TEST_CASE("csv: RFC-4180 quoting and deterministic numbers") {
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_escape("line\nbreak") == "\"line\nbreak\"");
  CHECK(csv_num(0.25) == "0.25");
  CHECK(csv_num(1e-8) == "1e-08");

  CsvWriter w({"a", "b"});
  w.add_row({"1", "x,y"});
  CHECK(w.body() == "a,b\r\n1,\"x,y\"\r\n");
  CHECK_THROWS_AS(w.add_row({"only-one"}), std::invalid_argument);
}

TEST_CASE("cell filter: parse and match") {
  auto f = CellFilter::parse("p=200,n=400");
  CHECK(f.matches({{"p", "200"}, {"n", "400"}}));
  CHECK_FALSE(f.matches({{"p", "200"}, {"n", "800"}}));
  CHECK(CellFilter::parse("").matches({{"p", "1"}}));
  CHECK_THROWS_AS(CellFilter::parse("oops"), ConfigError);
}

TEST_CASE("cmd_testfns: header-exact CSV, manifest transitions, byte-identical rerun") {
  auto dir = temp_dir("testfns");
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::Testfns;
  cfg.p_grid = {20};
  cfg.n_grid = {100, 200};
  cfg.k = 2;
  cfg.j = 4;
  cfg.replicates = 120;
  cfg.seed = 7;
  cfg.out_dir = (dir / "run1").string();
  auto res = cmd_testfns(cfg);
  REQUIRE(res.exit_code == 0);

  std::string csv = slurp(fs::path(cfg.out_dir) / "testfns_rates.csv");
  CHECK(csv.rfind("n,p,k,j,regime,type1,type1_se,type2,type2_se,seed\r\n", 0) == 0);
  // two scenarios x two n values
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  std::string manifest = slurp(fs::path(cfg.out_dir) / "manifest.json");
  CHECK(manifest.find("\"status\": \"done\"") != std::string::npos);
  CHECK(manifest.find("testfns_rates.csv") != std::string::npos);
  CHECK(manifest.find("\"code_version\"") != std::string::npos);

  // rerun with the identical config into the same directory
  auto res2 = cmd_testfns(cfg);
  REQUIRE(res2.exit_code == 0);
  CHECK(slurp(fs::path(cfg.out_dir) / "testfns_rates.csv") == csv);
  CHECK(strip_timestamps(slurp(fs::path(cfg.out_dir) / "manifest.json")) ==
        strip_timestamps(manifest));
}

TEST_CASE("cmd_rates: degenerate grid yields one row per replicate") {
  auto dir = temp_dir("rates");
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::RatesOperator;
  cfg.p_grid = {12};
  cfg.n_grid = {60};
  cfg.k = 1;
  cfg.s = 4;
  cfg.iterations = 60;
  cfg.burnin = 20;
  cfg.replicates = 3;
  cfg.seed = 11;
  cfg.out_dir = (dir / "run1").string();
  auto res = cmd_rates(cfg);
  REQUIRE(res.exit_code == 0);

  std::string longform = slurp(fs::path(cfg.out_dir) / "rates_long.csv");
  CHECK(std::count(longform.begin(), longform.end(), '\n') == 4);  // header + 3
  CHECK(longform.rfind("kind,regime,p,k,s,n,replicate,", 0) == 0);
  std::string agg = slurp(fs::path(cfg.out_dir) / "rates_summary.csv");
  CHECK(std::count(agg.begin(), agg.end(), '\n') == 2);

  // deterministic rerun
  cfg.out_dir = (dir / "run2").string();
  auto res2 = cmd_rates(cfg);
  REQUIRE(res2.exit_code == 0);
  CHECK(slurp(fs::path(cfg.out_dir) / "rates_long.csv") == longform);

  // a --cell filter excluding everything still writes valid (empty) tables
  cfg.out_dir = (dir / "run3").string();
  auto res3 = cmd_rates(cfg, CellFilter::parse("p=999"));
  REQUIRE(res3.exit_code == 0);
  std::string empty_long = slurp(fs::path(cfg.out_dir) / "rates_long.csv");
  CHECK(std::count(empty_long.begin(), empty_long.end(), '\n') == 1);
}

TEST_CASE("cmd_rates: fit file carries slopes over a two-point grid") {
  auto dir = temp_dir("rates_fit");
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::RatesOperator;
  cfg.p_grid = {12};
  cfg.n_grid = {40, 160};
  cfg.k = 1;
  cfg.s = 4;
  cfg.iterations = 60;
  cfg.burnin = 20;
  cfg.replicates = 2;
  cfg.seed = 13;
  cfg.out_dir = (dir / "run").string();
  REQUIRE(cmd_rates(cfg).exit_code == 0);
  std::string fits = slurp(fs::path(cfg.out_dir) / "rates_fit.csv");
  CHECK(fits.find("loss-vs-n,p=12,") != std::string::npos);
}

TEST_CASE("cmd_conclab and cmd_geweke: schema and determinism") {
  auto dir = temp_dir("conclab");
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::Conclab;
  cfg.p_grid = {20, 40};
  cfg.conclab_replicates = 400;
  cfg.seed = 5;
  cfg.out_dir = (dir / "c1").string();
  REQUIRE(cmd_conclab(cfg).exit_code == 0);
  std::string csv = slurp(fs::path(cfg.out_dir) / "conclab.csv");
  CHECK(csv.rfind("lemma,p,s,epsilon_or_t,estimate,ci_lo,ci_hi,bound,seed\r\n",
                  0) == 0);
  for (const char* lemma : {"suppdim", "l1tail", "quadform", "smallball",
                            "ftau-upper", "de-smallball", "frob-priorconc"})
    CHECK(csv.find(lemma) != std::string::npos);

  cfg.out_dir = (dir / "c2").string();
  REQUIRE(cmd_conclab(cfg).exit_code == 0);
  CHECK(slurp(fs::path(cfg.out_dir) / "conclab.csv") == csv);

  // lemma filter restricts the rows
  cfg.out_dir = (dir / "c3").string();
  REQUIRE(cmd_conclab(cfg, CellFilter::parse("lemma=ftau")).exit_code == 0);
  std::string filtered = slurp(fs::path(cfg.out_dir) / "conclab.csv");
  CHECK(filtered.find("ftau-upper") != std::string::npos);
  CHECK(filtered.find("suppdim") == std::string::npos);

  ExperimentConfig gw;
  gw.kind = ExperimentKind::Geweke;
  gw.geweke_samples = 2000;
  gw.geweke_p = 2;
  gw.geweke_n = 6;
  gw.iterations = 2;
  gw.burnin = 0;
  gw.seed = 5;
  gw.out_dir = (dir / "g1").string();
  auto gres = cmd_geweke(gw);
  REQUIRE(gres.exit_code == 0);
  std::string gcsv = slurp(fs::path(gw.out_dir) / "geweke.csv");
  CHECK(gcsv.rfind("regime,stat,z,pass\r\n", 0) == 0);
  CHECK(std::count(gcsv.begin(), gcsv.end(), '\n') >= 2);
}

TEST_CASE("run_chain at p=2000 never materializes a p x p matrix") {
  const int p = 2000, n = 12, k = 2;
  TruthSpec ts;
  ts.p = p;
  ts.k = k;
  ts.s = 50;
  ts.seed = 3;
  ts.a3_constant = 3.0 * std::sqrt(static_cast<double>(p) / ts.s);
  auto [truth, c_n] = generate_truth(ts);
  RngHandle rng(3, 0xDD);
  Matrix data = simulate_dataset(truth, n, rng);

  SamplerConfig sc;
  sc.regime = PriorRegime::Shrinkage;
  sc.k = k;
  sc.iterations = 8;
  sc.burnin = 4;
  sc.seed = 3;

  g_max_alloc.store(0);
  g_track.store(true);
  PosteriorChain chain = run_chain(sc, data, &truth);
  g_track.store(false);

  CHECK(chain.stored() == 4);
  // largest single allocation must stay O(p k + n p) doubles, far under p^2
  std::size_t limit = sizeof(double) * static_cast<std::size_t>(p) * 64;
  CHECK(g_max_alloc.load() < limit);
  CHECK(g_max_alloc.load() < sizeof(double) * static_cast<std::size_t>(p) * p / 8);
}

TEST_CASE("manifest: stable key order and pending state on failure path") {
  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::Conclab;
  auto snap1 = config_snapshot(cfg).dump();
  auto snap2 = config_snapshot(cfg).dump();
  CHECK(snap1 == snap2);
  // key order is insertion order, beginning with kind
  CHECK(snap1.rfind("{\"kind\":", 0) == 0);

  auto dir = temp_dir("manifest");
  RunManifest m;
  m.path = (dir / "manifest.json").string();
  m.init(cfg, {"alpha", "beta"});
  std::string pending = slurp(m.path);
  CHECK(pending.find("\"pending\"") != std::string::npos);
  m.set_status("alpha", "done");
  std::string after = slurp(m.path);
  CHECK(after.find("\"done\"") != std::string::npos);
  CHECK(after.find("\"pending\"") != std::string::npos);  // beta untouched
}
