#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pnr/config.hpp"
#include "pnr/detector.hpp"
#include "pnr/errors.hpp"
#include "pnr/experiments.hpp"
#include "pnr/io.hpp"
#include "pnr/sources.hpp"
#include "pnr/version.hpp"

#include "test_support.hpp"

using namespace pnr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Unique scratch directory removed at scope exit.
struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("pnr_harness_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << content;
}

json slurp_json(const std::string& path) { return json::parse(slurp(path)); }

/// Runs the CLI binary, captures stdout, returns the exit code.
int run_tool(const std::string& args, std::string* stdout_text = nullptr) {
  static int counter = 0;
  const std::string cap = (fs::temp_directory_path() /
                           ("pnr_cli_" + std::to_string(::getpid()) + "_" +
                            std::to_string(counter++) + ".out"))
                              .string();
  const std::string cmd = std::string(PNR_TOOL_PATH) + " " + args + " > " + cap + " 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  if (stdout_text) *stdout_text = slurp(cap);
  std::error_code ec;
  fs::remove(cap, ec);
  return WEXITSTATUS(status);
}

/// Small-but-real config: one bright-ish coherent source, shallow data, low
/// cutoff. Converges in well under a second for every runner.
ExperimentConfig tiny_config(ExperimentKind kind) {
  ExperimentConfig cfg;
  cfg.kind = kind;
  cfg.sources = {SourceSpec{.kind = SourceKind::coherent, .mean = 2.0}};
  cfg.runs = 2'000;
  cfg.trials = 2;
  cfg.retrieval.n_max = 20;
  cfg.seed = 11;
  return cfg;
}

long long cell_int(const std::vector<Cell>& row, std::size_t i) {
  return std::get<std::int64_t>(row.at(i));
}
double cell_num(const std::vector<Cell>& row, std::size_t i) {
  return std::get<double>(row.at(i));
}
const std::string& cell_str(const std::vector<Cell>& row, std::size_t i) {
  return std::get<std::string>(row.at(i));
}

bool rows_identical(const ExperimentResult& a, const ExperimentResult& b) {
  if (a.columns != b.columns || a.rows.size() != b.rows.size()) return false;
  for (std::size_t r = 0; r < a.rows.size(); ++r) {
    if (a.rows[r] != b.rows[r]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config defaults and kind-aware runs") {
  const ExperimentConfig single = ExperimentConfig::from_json(json{{"kind", "single_retrieval"}});
  CHECK(single.kind == ExperimentKind::single_retrieval);
  CHECK(single.runs == 300'000);
  CHECK(single.trials == 10);
  CHECK(single.bootstrap_trials == 10);
  CHECK(single.seed == 1);
  CHECK(single.detector.channels == 10);
  CHECK(single.detector.efficiency == doctest::Approx(0.5));
  CHECK(single.retrieval.algorithm == Algorithm::eme);
  CHECK(single.retrieval.lambda == doctest::Approx(1e-3));
  CHECK(single.retrieval.epsilon == doctest::Approx(1e-12));
  CHECK(single.retrieval.n_max == 50);
  CHECK(single.em_epsilon == doctest::Approx(1.5e-7));
  CHECK(single.sources.empty());
  CHECK(single.output_dir == "out");

  // The comparison kind defaults to deeper sampling; an explicit value wins.
  CHECK(ExperimentConfig::from_json(json{{"kind", "method_comparison"}}).runs == 3'000'000);
  CHECK(ExperimentConfig::from_json(json{{"kind", "method_comparison"}, {"runs", 12345}}).runs ==
        12345);
  CHECK(ExperimentConfig::from_json(json{{"kind", "scaling_study"}}).runs == 300'000);
}

TEST_CASE("config parses nested fields") {
  const json j = {{"kind", "lambda_sweep"},
                  {"detector", {{"channels", 8}, {"efficiency", 0.4}}},
                  {"retrieval",
                   {{"algorithm", "em"},
                    {"lambda", 0.01},
                    {"epsilon", 1e-9},
                    {"n_max", 30},
                    {"max_iterations", 500}}},
                  {"sources", json::array({{{"kind", "thermal"}, {"mean", 2.5}}})},
                  {"runs", 4'000},
                  {"em_epsilon", 1e-5},
                  {"lambda_grid", {1e-4, 1e-2}},
                  {"trials", 3},
                  {"bootstrap_trials", 5},
                  {"seed", 99},
                  {"threads", 1},
                  {"output_dir", "elsewhere"}};
  const ExperimentConfig c = ExperimentConfig::from_json(j);
  CHECK(c.kind == ExperimentKind::lambda_sweep);
  CHECK(c.detector.channels == 8);
  CHECK(c.detector.efficiency == doctest::Approx(0.4));
  CHECK(c.retrieval.algorithm == Algorithm::em);
  CHECK(c.retrieval.lambda == doctest::Approx(0.01));
  CHECK(c.retrieval.epsilon == doctest::Approx(1e-9));
  CHECK(c.retrieval.n_max == 30);
  CHECK(c.retrieval.max_iterations == 500);
  REQUIRE(c.sources.size() == 1);
  CHECK(c.sources[0].kind == SourceKind::thermal);
  CHECK(c.sources[0].mean == doctest::Approx(2.5));
  CHECK(c.runs == 4'000);
  CHECK(c.em_epsilon == doctest::Approx(1e-5));
  CHECK(c.lambda_grid == std::vector<double>{1e-4, 1e-2});
  CHECK(c.trials == 3);
  CHECK(c.bootstrap_trials == 5);
  CHECK(c.seed == 99);
  CHECK(c.threads == 1);
  CHECK(c.output_dir == "elsewhere");

  // The JSON echo is idempotent: parsing it back emits identical JSON.
  const json echo = c.to_json();
  CHECK(echo.contains("em_epsilon"));
  CHECK(ExperimentConfig::from_json(echo).to_json() == echo);
}

TEST_CASE("config rejections") {
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(json::object()), config_error);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(json::array()), config_error);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(json{{"kind", "frobnicate"}}), config_error);
  CHECK_THROWS_AS(
      (void)ExperimentConfig::from_json(json{{"kind", "single_retrieval"}, {"schema_version", 2}}),
      config_error);

  auto bad = [](json patch) {
    patch["kind"] = "single_retrieval";
    return patch;
  };
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(bad({{"runs", 0}})), config_error);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(bad({{"trials", 0}})), config_error);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(bad({{"bootstrap_trials", 1}})), config_error);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(bad({{"em_epsilon", 0.0}})), config_error);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(bad({{"runs_grid", {0, 10}}})), config_error);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(bad({{"runs_grid", {10, 10}}})), config_error);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(bad({{"lambda_grid", {-1.0}}})), config_error);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(bad({{"lambda_grid", {1e-1, 1e-3}}})),
                  config_error);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(bad({{"epsilon_grid", {0.0, 1e-6}}})),
                  config_error);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(bad({{"detector", {{"channels", 0}}}})),
                  config_error);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(bad({{"retrieval", {{"lambda", -1.0}}}})),
                  config_error);
  CHECK_THROWS_AS(
      (void)ExperimentConfig::from_json(bad({{"sources", json::array({{{"kind", "thermal"},
                                                                       {"mean", -1.0}}})}})),
      config_error);

  ExperimentConfig c;
  c.output_dir = "";
  CHECK_THROWS_AS(c.validate(), config_error);
  c.output_dir = "out";
  c.threads = -1;
  CHECK_THROWS_AS(c.validate(), config_error);
}

TEST_CASE("source specs round-trip through JSON") {
  std::vector<SourceSpec> specs = {
      SourceSpec{.kind = SourceKind::coherent, .mean = 4.95},
      SourceSpec{.kind = SourceKind::thermal, .mean = 1.0},
      SourceSpec{.kind = SourceKind::multimode_thermal, .mean = 5.0, .modes = 4},
      SourceSpec{.kind = SourceKind::subtracted_thermal, .mean = 5.77, .subtractions = 2},
      SourceSpec{.kind = SourceKind::photon_cluster, .photons = 9, .source_efficiency = 0.55},
  };
  for (const auto& s : specs) {
    const SourceSpec back = source_from_json(source_to_json(s));
    CHECK(back.kind == s.kind);
    CHECK(back.label() == s.label());
  }

  // Kind aliases.
  CHECK(source_from_json(json{{"kind", "multimode"}, {"mean", 2.0}, {"modes", 2}}).kind ==
        SourceKind::multimode_thermal);
  CHECK(source_from_json(json{{"kind", "subtracted"}, {"mean", 2.0}, {"subtractions", 1}}).kind ==
        SourceKind::subtracted_thermal);
  CHECK(source_from_json(json{{"kind", "cluster"}, {"photons", 1}}).kind ==
        SourceKind::photon_cluster);

  CHECK_THROWS_AS((void)source_from_json(json{{"kind", "laser"}}), config_error);
  CHECK_THROWS_AS((void)source_from_json(json{{"mean", 1.0}}), config_error);
  CHECK_THROWS_AS((void)source_from_json(json("thermal")), config_error);
  CHECK_THROWS_AS((void)source_from_json(json{{"kind", "cluster"}, {"photons", 0}}), config_error);
}

TEST_CASE("name tables") {
  CHECK(algorithm_from_name("direct") == Algorithm::direct_inverse);
  CHECK(algorithm_from_name("direct_inverse") == Algorithm::direct_inverse);
  CHECK(algorithm_from_name("em") == Algorithm::em);
  CHECK(algorithm_from_name("eme") == Algorithm::eme);
  CHECK(algorithm_name(Algorithm::direct_inverse) == "direct");
  CHECK_THROWS_AS((void)algorithm_from_name("emx"), config_error);

  const std::vector<ExperimentKind> kinds = {
      ExperimentKind::single_retrieval, ExperimentKind::method_comparison,
      ExperimentKind::scaling_study,    ExperimentKind::lambda_sweep,
      ExperimentKind::convergence_study, ExperimentKind::overfitting_study,
      ExperimentKind::table_report};
  for (ExperimentKind k : kinds) CHECK(experiment_kind_from_name(experiment_kind_name(k)) == k);
  CHECK_THROWS_AS((void)experiment_kind_from_name("stress_test"), config_error);
}

TEST_CASE("default source rosters") {
  CHECK(default_sources(ExperimentKind::single_retrieval).size() == 1);
  CHECK(default_sources(ExperimentKind::scaling_study).size() == 4);
  CHECK(default_sources(ExperimentKind::lambda_sweep).size() == 4);
  CHECK(default_sources(ExperimentKind::convergence_study).size() == 4);
  CHECK(default_sources(ExperimentKind::overfitting_study).size() == 1);
  CHECK(default_sources(ExperimentKind::table_report).size() == 5);

  const auto roster = default_sources(ExperimentKind::method_comparison);
  CHECK(roster.size() == 25);
  std::set<std::string> labels;
  int clusters = 0;
  for (const auto& s : roster) {
    labels.insert(s.label());
    if (s.kind == SourceKind::photon_cluster) {
      ++clusters;
      CHECK(s.source_efficiency == doctest::Approx(0.55));
    }
    CHECK_NOTHROW(s.validate());
  }
  CHECK(labels.size() == 25);  // distinct
  CHECK(clusters == 9);
}

TEST_CASE("single retrieval runner shape and determinism") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::single_retrieval);
  cfg.sources.push_back(SourceSpec{.kind = SourceKind::thermal, .mean = 1.0});

  const ExperimentResult res = run_single_retrieval(cfg);
  const std::vector<std::string> want = {
      "source",     "trial",       "algorithm",      "runs",     "seed",
      "iterations", "stop_reason", "final_distance", "fidelity", "tvd",
      "mean_estimate", "g2_estimate", "mean_truth",  "g2_truth"};
  CHECK(res.columns == want);
  REQUIRE(res.rows.size() == 4);  // 2 sources x 2 trials
  CHECK(cell_str(res.rows[0], 0) == "coherent(2)");
  CHECK(cell_str(res.rows[2], 0) == "thermal(1)");
  CHECK(cell_int(res.rows[1], 1) == 1);
  CHECK(cell_str(res.rows[0], 2) == "eme");
  CHECK(cell_int(res.rows[0], 3) == 2'000);
  for (const auto& row : res.rows) {
    CHECK(cell_int(row, 5) > 0);
    CHECK(cell_str(row, 6) == "converged");
    CHECK(cell_num(row, 8) > 0.9);   // fidelity
    CHECK(cell_num(row, 9) < 0.2);   // tvd
  }
  CHECK(cell_num(res.rows[0], 12) == doctest::Approx(2.0).epsilon(1e-12));  // mean_truth
  CHECK(cell_num(res.rows[2], 13) == doctest::Approx(2.0).epsilon(1e-9));   // thermal g2

  REQUIRE(res.summary.contains("per_source"));
  const json& per = res.summary["per_source"];
  REQUIRE(per.contains("coherent(2)"));
  REQUIRE(per.contains("thermal(1)"));
  for (const char* key :
       {"fidelity_mean", "fidelity_std", "tvd_mean", "tvd_std", "iterations_mean"}) {
    CHECK(per["coherent(2)"].contains(key));
  }

  std::set<std::string> extras;
  for (const auto& [name, content] : res.extra_files) {
    extras.insert(name);
    CHECK(content.rfind("n,p\n", 0) == 0);
  }
  CHECK(extras == std::set<std::string>{"estimate_coherent(2).csv", "truth_coherent(2).csv",
                                        "estimate_thermal(1).csv", "truth_thermal(1).csv"});

  // Same config, fresh run: task-indexed rows make this exactly reproducible.
  CHECK(rows_identical(res, run_single_retrieval(cfg)));

  const ExperimentResult via_dispatch = run_experiment(cfg);
  CHECK(rows_identical(res, via_dispatch));
  CHECK(via_dispatch.wall_seconds >= 0.0);
}

TEST_CASE("method comparison runner and per-method stopping") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::method_comparison);
  const ExperimentResult res = run_method_comparison(cfg);

  const std::vector<std::string> want = {"source", "trial", "method",   "runs", "seed",
                                         "iterations", "stop_reason", "fidelity", "tvd",
                                         "min_entry"};
  CHECK(res.columns == want);
  REQUIRE(res.rows.size() == 6);  // 1 source x 2 trials x 3 methods
  CHECK(cell_str(res.rows[0], 2) == "direct");
  CHECK(cell_str(res.rows[1], 2) == "em");
  CHECK(cell_str(res.rows[2], 2) == "eme");
  CHECK(cell_int(res.rows[0], 5) == 0);  // direct inversion is non-iterative
  // The three methods of a trial share one histogram, hence one seed.
  CHECK(cell_str(res.rows[0], 4) == cell_str(res.rows[1], 4));
  CHECK(cell_str(res.rows[1], 4) == cell_str(res.rows[2], 4));

  REQUIRE(res.summary.contains("per_method"));
  const json& pm = res.summary["per_method"];
  CHECK(pm["direct"].contains("negative_fraction"));
  CHECK(!pm["direct"].contains("fidelity_std"));
  CHECK(pm["em"].contains("fidelity_std"));
  CHECK(pm["eme"].contains("tvd_mean"));
  CHECK(res.summary["tvd_ratio_em_over_eme"].get<double>() > 0.0);
  CHECK(res.summary["per_source"]["coherent(2)"]["eme"].contains("fidelity_mean"));

  // em_epsilon steers only the plain-EM leg.
  ExperimentConfig loose = cfg;
  loose.em_epsilon = 0.5;
  const ExperimentResult res_loose = run_method_comparison(loose);
  CHECK(cell_int(res_loose.rows[1], 5) < cell_int(res.rows[1], 5));
  CHECK(cell_int(res_loose.rows[2], 5) == cell_int(res.rows[2], 5));
  CHECK(cell_num(res_loose.rows[2], 8) == cell_num(res.rows[2], 8));
}

TEST_CASE("scaling runner shape") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::scaling_study);
  cfg.runs_grid = {500, 2'000};
  const ExperimentResult res = run_scaling_study(cfg);

  CHECK(res.columns == std::vector<std::string>{"source", "runs", "trial", "seed", "iterations",
                                                "fidelity", "tvd"});
  REQUIRE(res.rows.size() == 4);  // 1 source x 2 grid points x 2 trials
  CHECK(cell_int(res.rows[0], 1) == 500);
  CHECK(cell_int(res.rows[3], 1) == 2'000);

  const json& entry = res.summary["per_source"]["coherent(2)"];
  CHECK(entry["runs"].size() == 2);
  CHECK(entry["median_tvd"].size() == 2);
  CHECK(entry.contains("slope"));
}

TEST_CASE("lambda sweep runner is paired across the grid") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::lambda_sweep);
  cfg.lambda_grid = {1e-4, 1e-2};
  const ExperimentResult res = run_lambda_sweep(cfg);

  CHECK(res.columns == std::vector<std::string>{"source", "lambda", "trial", "seed", "iterations",
                                                "fidelity", "tvd"});
  REQUIRE(res.rows.size() == 4);  // 1 source x 2 trials x 2 lambdas
  CHECK(cell_num(res.rows[0], 1) == doctest::Approx(1e-4));
  CHECK(cell_num(res.rows[1], 1) == doctest::Approx(1e-2));
  CHECK(cell_str(res.rows[0], 3) == cell_str(res.rows[1], 3));  // same histogram
  CHECK(cell_str(res.rows[0], 3) != cell_str(res.rows[2], 3));  // new trial, new histogram

  const double best = res.summary["best_lambda"].get<double>();
  CHECK((best == 1e-4 || best == 1e-2));
  CHECK(res.summary["per_lambda"].size() == 2);
  CHECK(res.summary["per_source_lambda"].contains("coherent(2)"));
  CHECK(res.summary["best_lambda_per_source"].contains("coherent(2)"));
}

TEST_CASE("convergence runner emits traces") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::convergence_study);
  cfg.trials = 1;
  const ExperimentResult res = run_convergence_study(cfg);

  REQUIRE(res.rows.size() == 2);  // em + eme
  CHECK(cell_str(res.rows[0], 2) == "em");
  CHECK(cell_str(res.rows[1], 2) == "eme");
  CHECK(res.columns.back() == "distance_increases_after_10");

  REQUIRE(res.extra_files.size() == 2);
  std::set<std::string> names;
  for (const auto& [name, content] : res.extra_files) {
    names.insert(name);
    REQUIRE(content.rfind("iteration,distance,log_likelihood\n", 0) == 0);
    // Final trace point is the accepted stopping iterate.
    std::istringstream lines(content);
    std::string line, last;
    std::getline(lines, line);  // header
    std::size_t n = 0;
    while (std::getline(lines, line)) {
      if (!line.empty()) {
        last = line;
        ++n;
      }
    }
    CHECK(n >= 2);
  }
  CHECK(names == std::set<std::string>{"trace_coherent(2)_em_t0.csv",
                                       "trace_coherent(2)_eme_t0.csv"});

  CHECK(res.summary["per_source"]["coherent(2)"].contains("iteration_ratio_eme_over_em"));
  CHECK(res.summary["all_traces_monotone_after_10"].is_boolean());
}

TEST_CASE("overfitting runner snapshots along one trajectory") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::overfitting_study);
  cfg.trials = 1;
  cfg.epsilon_grid = {1e-6, 1e-3};
  const ExperimentResult res = run_overfitting_study(cfg);

  CHECK(res.columns == std::vector<std::string>{"source", "trial", "method", "epsilon", "seed",
                                                "iterations", "stop_reason", "fidelity", "tvd",
                                                "click_tvd"});
  REQUIRE(res.rows.size() == 4);  // 1 source x 1 trial x 2 methods x 2 thresholds
  // Execution order is loosest-first within each method.
  CHECK(cell_num(res.rows[0], 3) == doctest::Approx(1e-3));
  CHECK(cell_num(res.rows[1], 3) == doctest::Approx(1e-6));
  CHECK(cell_int(res.rows[0], 5) <= cell_int(res.rows[1], 5));
  CHECK(cell_int(res.rows[2], 5) <= cell_int(res.rows[3], 5));
  for (const auto& row : res.rows) CHECK(cell_num(row, 9) >= 0.0);

  const json& pm = res.summary["per_method"];
  CHECK(pm["em"].contains("tightest_over_loosest"));
  CHECK(pm["eme"]["tvd_by_epsilon"].size() == 2);
}

TEST_CASE("table runner reports bootstrap spreads") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::table_report);
  cfg.bootstrap_trials = 4;
  const ExperimentResult res = run_table_report(cfg);

  REQUIRE(res.rows.size() == 2);  // em + eme
  REQUIRE(res.columns.size() == 26);
  CHECK(res.columns[0] == "source");
  CHECK(res.columns[25] == "tvd_err");
  for (const auto& row : res.rows) {
    CHECK(cell_num(row, 4) == doctest::Approx(2.0).epsilon(1e-12));  // mean_truth
    CHECK(cell_num(row, 6) >= 0.0);                                   // mean_err
    CHECK(cell_num(row, 22) > 0.8);                                   // fidelity
  }

  std::set<std::string> names;
  for (const auto& [name, content] : res.extra_files) names.insert(name);
  CHECK(names == std::set<std::string>{"estimate_coherent(2)_em.csv",
                                       "estimate_coherent(2)_eme.csv", "truth_coherent(2).csv"});
  CHECK(res.summary["per_method"]["eme"].contains("fidelity_mean"));
}

TEST_CASE("write_experiment replays byte-identically") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::single_retrieval);
  cfg.trials = 1;

  TempDir tmp;
  const std::string dir_a = tmp.file("a");
  const std::string dir_b = tmp.file("b");
  write_experiment(run_experiment(cfg), cfg, dir_a);
  ExperimentConfig threaded = cfg;
  threaded.threads = 2;  // schedule must not leak into artifacts
  write_experiment(run_experiment(threaded), threaded, dir_b);

  std::set<std::string> names_a, names_b;
  for (const auto& e : fs::directory_iterator(dir_a)) names_a.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(dir_b)) names_b.insert(e.path().filename().string());
  CHECK(names_a == names_b);
  for (const std::string& name : names_a) {
    if (name == "timing.log") continue;
    INFO("file ", name);
    CHECK(slurp(dir_a + "/" + name) == slurp(dir_b + "/" + name));
  }

  const json manifest = slurp_json(dir_a + "/manifest.json");
  CHECK(manifest["kind"] == "single_retrieval");
  CHECK(manifest["master_seed"] == cfg.seed);
  CHECK(manifest["row_count"] == 1);
  CHECK(manifest["version"] == std::string(kVersion));
  std::set<std::string> listed;
  for (const auto& f : manifest["files"]) listed.insert(f.get<std::string>());
  CHECK(listed == names_a);

  // The echoed config replays to the same artifacts.
  const ExperimentConfig echoed = ExperimentConfig::from_json(slurp_json(dir_a + "/config.json"));
  const std::string dir_c = tmp.file("c");
  write_experiment(run_experiment(echoed), echoed, dir_c);
  CHECK(slurp(dir_a + "/rows.csv") == slurp(dir_c + "/rows.csv"));
  CHECK(slurp(dir_a + "/summary.json") == slurp(dir_c + "/summary.json"));

  const json rows_json = slurp_json(dir_a + "/rows.json");
  CHECK(rows_json["columns"].size() == 14);
  CHECK(rows_json["rows"].size() == 1);
  std::istringstream csv(slurp(dir_a + "/rows.csv"));
  std::string line;
  std::size_t csv_lines = 0;
  while (std::getline(csv, line)) ++csv_lines;
  CHECK(csv_lines == 2);  // header + one row
}

TEST_CASE("config echo records per-kind defaults") {
  // Write artifacts for an empty result: only the echoed config matters here.
  auto echo_of = [](ExperimentKind kind) {
    ExperimentConfig cfg;
    cfg.kind = kind;
    TempDir tmp;
    write_experiment(ExperimentResult{}, cfg, tmp.file("out"));
    return ExperimentConfig::from_json(slurp_json(tmp.file("out") + "/config.json"));
  };

  const ExperimentConfig scaling = echo_of(ExperimentKind::scaling_study);
  CHECK(scaling.runs_grid ==
        std::vector<std::uint64_t>{1'000, 10'000, 100'000, 1'000'000, 10'000'000});
  CHECK(scaling.sources.size() == 4);

  const ExperimentConfig sweep = echo_of(ExperimentKind::lambda_sweep);
  CHECK(sweep.lambda_grid == std::vector<double>{1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1});

  const ExperimentConfig overfit = echo_of(ExperimentKind::overfitting_study);
  CHECK(overfit.epsilon_grid == std::vector<double>{1e-12, 1e-9, 1e-6});
  CHECK(overfit.sources.size() == 1);
  CHECK(overfit.sources[0].label() == "coherent(4.95)");

  const ExperimentConfig table = echo_of(ExperimentKind::table_report);
  CHECK(table.sources.size() == 5);
}

TEST_CASE("run_experiment validates before dispatch") {
  ExperimentConfig cfg = tiny_config(ExperimentKind::single_retrieval);
  cfg.trials = 0;
  CHECK_THROWS_AS((void)run_experiment(cfg), config_error);
}

TEST_CASE("cli version") {
  std::string out;
  CHECK(run_tool("--version", &out) == 0);
  CHECK(out.find(kVersion) != std::string::npos);
}

TEST_CASE("cli simulate matches the library forward law") {
  TempDir tmp;
  const std::string path = tmp.file("exact.csv");
  CHECK(run_tool("simulate --source thermal:2 --runs 0 --out " + path) == 0);

  auto [clicks, meta] = io::read_clicks(path);
  REQUIRE(meta.has_value());
  CHECK(meta->channels == 10);
  CHECK(meta->efficiency == doctest::Approx(0.5));
  CHECK(clicks.mode == ClickMode::probabilities);

  const SourceSpec spec{.kind = SourceKind::thermal, .mean = 2.0};
  const int cutoff = default_cutoff(spec);
  const ClickDistribution expect =
      forward(response_matrix(DetectorConfig{10, 0.5}, cutoff), thermal(2.0, cutoff));
  CHECK(testsup::max_abs_diff(clicks.values, expect.values) <= 1e-12);
}

TEST_CASE("cli simulate micro mode returns counts") {
  TempDir tmp;
  const std::string path = tmp.file("micro.csv");
  CHECK(run_tool("simulate --source coherent:1 --mode micro --runs 3000 --seed 4 --threads 1 "
                 "--out " +
                 path) == 0);
  auto [clicks, meta] = io::read_clicks(path);
  CHECK(clicks.mode == ClickMode::counts);
  double total = 0.0;
  for (double v : clicks.values) total += v;
  CHECK(total == doctest::Approx(3000.0));
  REQUIRE(meta.has_value());
  CHECK(meta->runs == 3000);
}

TEST_CASE("cli simulate then retrieve round trip") {
  TempDir tmp;
  const std::string clicks_path = tmp.file("clicks.csv");
  const std::string est_path = tmp.file("estimate.csv");
  const std::string rep_path = tmp.file("report.json");
  CHECK(run_tool("simulate --source coherent:3 --runs 50000 --seed 7 --out " + clicks_path) == 0);
  CHECK(run_tool("retrieve --input " + clicks_path + " --n-max 30 --estimate-out " + est_path +
                 " --report-out " + rep_path) == 0);

  const json report = slurp_json(rep_path);
  CHECK(report["algorithm"] == "eme");
  CHECK(report["stop_reason"] == "converged");
  CHECK(report["iterations"].get<long long>() > 0);
  CHECK(!report.contains("distance_trace"));
  CHECK(report.contains("diagnostics"));

  const PhotonDistribution est = io::read_distribution(est_path);
  double mass = 0.0, mean = 0.0;
  for (std::size_t n = 0; n < est.probs.size(); ++n) {
    mass += est.probs[n];
    mean += static_cast<double>(n) * est.probs[n];
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(mean == doctest::Approx(3.0).epsilon(0.1));
}

TEST_CASE("cli retrieve reproduces the frozen reference") {
  TempDir tmp;
  const std::string clicks_path = tmp.file("clicks.csv");
  const std::string est_path = tmp.file("estimate.csv");
  CHECK(run_tool("simulate --source coherent:10 --runs 0 --n-max 50 --out " + clicks_path) == 0);
  CHECK(run_tool("retrieve --input " + clicks_path + " --estimate-out " + est_path) == 0);

  const PhotonDistribution est = io::read_distribution(est_path);
  const std::vector<double> expect = testsup::load_column(testsup::data_path("eme_reference.csv"));
  CHECK(testsup::max_abs_diff(est.probs, expect) <= 1e-9);
}

TEST_CASE("cli diagnose on a single-photon state") {
  TempDir tmp;
  const std::string dist_path = tmp.file("single.csv");
  const std::string out_path = tmp.file("diag.json");
  PhotonDistribution single;
  single.probs = {0.0, 1.0};
  io::write_distribution_csv(dist_path, single);

  CHECK(run_tool("diagnose --input " + dist_path + " --format json --out " + out_path) == 0);
  const json d = slurp_json(out_path);
  CHECK(d["mean"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d["g2"].get<double>() == doctest::Approx(0.0));
  CHECK(d["mandel_q"].get<double>() == doctest::Approx(-1.0));
  CHECK(d["parity"].get<double>() == doctest::Approx(-1.0));
}

TEST_CASE("cli experiment runs a config end to end") {
  TempDir tmp;
  ExperimentConfig cfg = tiny_config(ExperimentKind::single_retrieval);
  cfg.trials = 1;
  json j = cfg.to_json();
  const std::string cfg_path = tmp.file("config.json");
  spit(cfg_path, j.dump(2) + "\n");

  const std::string dir_a = tmp.file("run_a");
  const std::string dir_b = tmp.file("run_b");
  const std::string dir_c = tmp.file("run_c");
  std::string out;
  CHECK(run_tool("experiment " + cfg_path + " --output-dir " + dir_a, &out) == 0);
  CHECK(out.find("wrote ") == 0);
  for (const char* name : {"config.json", "rows.csv", "rows.json", "summary.json",
                           "manifest.json", "timing.log"}) {
    CHECK(fs::exists(fs::path(dir_a) / name));
  }

  CHECK(run_tool("experiment " + cfg_path + " --output-dir " + dir_b + " --threads 2") == 0);
  CHECK(slurp(dir_a + "/rows.csv") == slurp(dir_b + "/rows.csv"));

  CHECK(run_tool("experiment " + cfg_path + " --output-dir " + dir_c + " --seed 12") == 0);
  CHECK(slurp(dir_a + "/rows.csv") != slurp(dir_c + "/rows.csv"));
}

TEST_CASE("cli exit codes by failure class") {
  TempDir tmp;
  CHECK(run_tool("") == 2);                                        // subcommand required
  CHECK(run_tool("simulate --source thermal:2 --nope") == 2);      // unknown flag
  CHECK(run_tool("simulate --source volts:1") == 2);               // unknown source kind
  CHECK(run_tool("simulate --source thermal:-2") == 2);            // bad parameter
  CHECK(run_tool("retrieve --input " + tmp.file("absent.csv")) == 3);
  CHECK(run_tool("retrieve --input x.csv --algorithm bogus") == 2);

  const std::string broken = tmp.file("broken.json");
  spit(broken, "{\"values\": [0.5,");
  CHECK(run_tool("diagnose --input " + broken) == 3);

  CHECK(run_tool("experiment " + tmp.file("missing.json")) == 5);
  const std::string bad_kind = tmp.file("bad_kind.json");
  spit(bad_kind, "{\"kind\": \"stress_test\"}\n");
  CHECK(run_tool("experiment " + bad_kind) == 5);
  const std::string bad_runs = tmp.file("bad_runs.json");
  spit(bad_runs, "{\"kind\": \"single_retrieval\", \"runs\": 0}\n");
  CHECK(run_tool("experiment " + bad_runs) == 5);

  // Click data contradicting its own channel count is caught at parse time.
  const std::string long_clicks = tmp.file("long.json");
  spit(long_clicks,
       "{\"M\": 4, \"eta\": 0.5, \"mode\": \"probabilities\", \"R\": 0, "
       "\"values\": [0.1, 0.2, 0.3, 0.2, 0.1, 0.05, 0.05]}\n");
  CHECK(run_tool("retrieve --input " + long_clicks) == 3);
}
