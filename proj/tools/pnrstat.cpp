// pnrstat: simulate click statistics of a multiplexed photon-number-resolving
// detector, retrieve photon statistics from click data, diagnose
// distributions, and run declarative experiments.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pnr/config.hpp"
#include "pnr/diagnostics.hpp"
#include "pnr/errors.hpp"
#include "pnr/experiments.hpp"
#include "pnr/io.hpp"
#include "pnr/rng.hpp"
#include "pnr/version.hpp"

namespace {

using nlohmann::json;

/// Parses "kind:params" source descriptors, e.g. "coherent:4.95",
/// "multimode:5,4", "subtracted:5.77,2", "cluster:9,0.55".
pnr::SourceSpec parse_source(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind_name = text.substr(0, colon);
  std::vector<double> params;
  if (colon != std::string::npos) {
    std::string rest = text.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      const auto comma = rest.find(',', pos);
      const std::string field = rest.substr(pos, comma == std::string::npos ? comma : comma - pos);
      try {
        std::size_t used = 0;
        params.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw std::invalid_argument("bad source parameter \"" + field + "\" in \"" + text + "\"");
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }

  pnr::SourceSpec spec;
  try {
    spec.kind = pnr::source_kind_from_name(kind_name);
  } catch (const pnr::config_error& e) {
    throw std::invalid_argument(e.what());
  }
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (params.size() < lo || params.size() > hi) {
      throw std::invalid_argument("source \"" + text + "\" expects " + std::to_string(lo) +
                                  (hi > lo ? ".." + std::to_string(hi) : "") + " parameters");
    }
  };
  switch (spec.kind) {
    case pnr::SourceKind::coherent:
    case pnr::SourceKind::thermal:
      need(1, 1);
      spec.mean = params[0];
      break;
    case pnr::SourceKind::multimode_thermal:
      need(2, 2);
      spec.mean = params[0];
      spec.modes = static_cast<int>(params[1]);
      break;
    case pnr::SourceKind::subtracted_thermal:
      need(2, 2);
      spec.mean = params[0];
      spec.subtractions = static_cast<int>(params[1]);
      break;
    case pnr::SourceKind::photon_cluster:
      need(1, 2);
      spec.photons = static_cast<int>(params[0]);
      spec.source_efficiency = params.size() > 1 ? params[1] : 1.0;
      break;
  }
  try {
    spec.validate();
  } catch (const std::exception& e) {
    throw std::invalid_argument(e.what());
  }
  return spec;
}

void emit(const std::string& out, const std::string& content) {
  if (out == "-") {
    std::cout << content;
    return;
  }
  std::ofstream file(out, std::ios::binary | std::ios::trunc);
  if (!file) throw pnr::parse_error("cannot open for writing: " + out);
  file << content;
}

std::string clicks_csv_text(const pnr::ClickDistribution& c) {
  std::string s = "m,value\n";
  for (std::size_t m = 0; m < c.values.size(); ++m) {
    s += std::to_string(m) + "," + pnr::io::format_double(c.values[m]) + "\n";
  }
  return s;
}

int run_simulate(const std::string& source_text, int channels, double efficiency,
                 std::uint64_t runs, std::uint64_t seed, const std::string& mode, int n_max,
                 int threads, const std::string& out, const std::string& format) {
  const pnr::SourceSpec spec = parse_source(source_text);
  const pnr::DetectorConfig det{channels, efficiency};
  det.validate();
  const int cutoff = n_max > 0 ? n_max : pnr::default_cutoff(spec);
  const pnr::PhotonDistribution p = pnr::realize(spec, cutoff);

  pnr::ClickDistribution clicks;
  if (runs == 0) {
    const pnr::ResponseMatrix rsp = pnr::response_matrix(det, cutoff);
    clicks = pnr::forward(rsp, p);
  } else if (mode == "micro") {
    clicks = pnr::simulate_microscopic(p, det, runs, seed, threads);
  } else {
    const pnr::ResponseMatrix rsp = pnr::response_matrix(det, cutoff);
    clicks = pnr::sample_clicks(pnr::forward(rsp, p), runs, seed);
  }

  const pnr::io::ClickMeta meta{channels, efficiency, clicks.mode, clicks.runs};
  if (format == "json") {
    if (out == "-") {
      json j{{"M", meta.channels},
             {"eta", meta.efficiency},
             {"mode", clicks.mode == pnr::ClickMode::counts ? "counts" : "probabilities"},
             {"R", meta.runs},
             {"values", clicks.values}};
      std::cout << j.dump(2) << "\n";
    } else {
      pnr::io::write_clicks_json(out, clicks, meta);
    }
  } else {
    if (out == "-") {
      std::cout << clicks_csv_text(clicks);
    } else {
      pnr::io::write_clicks_csv(out, clicks, meta);
    }
  }
  return 0;
}

int run_retrieve(const std::string& input, double efficiency_flag, bool have_efficiency,
                 const std::string& algorithm, double lambda, double epsilon, int n_max,
                 long long max_iterations, int bootstrap_trials, std::uint64_t seed,
                 const std::string& reference, const std::string& estimate_out,
                 const std::string& report_out, const std::string& format, int threads) {
  auto [clicks, meta] = pnr::io::read_clicks(input);
  const int channels = clicks.channels();
  double efficiency = 0.5;
  if (meta) efficiency = meta->efficiency;
  if (have_efficiency) efficiency = efficiency_flag;

  const pnr::DetectorConfig det{channels, efficiency};
  det.validate();
  const pnr::ResponseMatrix rsp = pnr::response_matrix(det, n_max);

  pnr::RetrievalSettings settings;
  settings.algorithm = pnr::algorithm_from_name(algorithm);
  settings.lambda = lambda;
  settings.epsilon = epsilon;
  settings.n_max = n_max;
  settings.max_iterations = max_iterations;
  const pnr::RetrievalReport report = pnr::retrieve(clicks, rsp, settings);

  std::optional<pnr::PhotonDistribution> ref;
  if (!reference.empty()) ref = pnr::io::read_distribution(reference);

  pnr::DiagnosticsBundle bundle;
  if (bootstrap_trials > 0) {
    if (clicks.mode != pnr::ClickMode::counts) {
      throw std::invalid_argument("--bootstrap needs counts-mode click data");
    }
    bundle = pnr::bootstrap(clicks, rsp, settings, bootstrap_trials,
                            pnr::rng::derive(seed, {0xb007}), ref ? &ref->probs : nullptr, threads);
  } else {
    bundle = ref ? pnr::diagnose(report.estimate.probs, ref->probs)
                 : pnr::diagnose(report.estimate.probs);
  }

  json out = pnr::io::report_to_json(report);
  out["diagnostics"] = pnr::io::bundle_to_json(bundle);
  if (!report_out.empty()) emit(report_out, out.dump(2) + "\n");

  if (!estimate_out.empty()) {
    if (format == "json") {
      pnr::io::write_distribution_json(estimate_out, report.estimate);
    } else {
      pnr::io::write_distribution_csv(estimate_out, report.estimate);
    }
  }

  std::cout << "algorithm=" << algorithm << " iterations=" << report.iterations
            << " stop=" << pnr::io::stop_reason_name(report.stop_reason)
            << " final_distance=" << pnr::io::format_double(report.final_distance)
            << " mean=" << pnr::io::format_double(bundle.mean) << "\n";
  return 0;
}

int run_diagnose(const std::string& input, const std::string& reference, const std::string& out,
                 const std::string& format) {
  const pnr::PhotonDistribution p = pnr::io::read_distribution(input);
  p.validate();
  pnr::DiagnosticsBundle bundle;
  if (!reference.empty()) {
    const pnr::PhotonDistribution ref = pnr::io::read_distribution(reference);
    bundle = pnr::diagnose(p.probs, ref.probs);
  } else {
    bundle = pnr::diagnose(p.probs);
  }
  std::string text;
  if (format == "json") {
    text = pnr::io::bundle_to_json(bundle).dump(2) + "\n";
  } else {
    auto cell = [](double v) { return pnr::io::format_double(v); };
    text = "mean,variance,g2,mandel_q,parity,wigner_origin,fidelity,tvd\n";
    text += cell(bundle.mean) + "," + cell(bundle.variance) + "," + cell(bundle.g2) + "," +
            cell(bundle.mandel_q) + "," + cell(bundle.parity) + "," + cell(bundle.wigner_origin) +
            "," + (bundle.fidelity ? cell(*bundle.fidelity) : "nan") + "," +
            (bundle.tvd ? cell(*bundle.tvd) : "nan") + "\n";
  }
  emit(out, text);
  return 0;
}

int run_experiment_cmd(const std::string& config_path, const std::string& output_dir,
                       std::optional<std::uint64_t> seed, std::optional<int> threads) {
  pnr::ExperimentConfig cfg = pnr::ExperimentConfig::load(config_path);
  if (!output_dir.empty()) cfg.output_dir = output_dir;
  if (seed) cfg.seed = *seed;
  if (threads) cfg.threads = *threads;
  const pnr::ExperimentResult result = pnr::run_experiment(cfg);
  pnr::write_experiment(result, cfg, cfg.output_dir);
  std::cout << "wrote " << cfg.output_dir << " (" << result.rows.size() << " rows, "
            << pnr::io::format_double(result.wall_seconds) << " s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiplexed photon-number-resolving detector toolkit"};
  app.set_version_flag("--version", std::string(pnr::kVersion));
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulate click statistics for a parametric source");
  std::string sim_source;
  int sim_channels = 10;
  double sim_efficiency = 0.5;
  std::uint64_t sim_runs = 300'000;
  std::uint64_t sim_seed = 1;
  std::string sim_mode = "multinomial";
  int sim_nmax = 0;
  int sim_threads = 0;
  std::string sim_out = "-";
  std::string sim_format = "csv";
  sim->add_option("--source", sim_source, "Source spec, e.g. coherent:4.95 or cluster:9,0.55")
      ->required();
  sim->add_option("--channels", sim_channels, "Detector channels M");
  sim->add_option("--efficiency", sim_efficiency, "System efficiency eta");
  sim->add_option("--runs", sim_runs, "Measurement repetitions; 0 emits the exact click law");
  sim->add_option("--seed", sim_seed, "Random seed");
  sim->add_option("--mode", sim_mode, "Sampling mode")
      ->check(CLI::IsMember({"multinomial", "micro"}));
  sim->add_option("--n-max", sim_nmax, "Photon-number cutoff (0 = automatic)");
  sim->add_option("--threads", sim_threads, "Threads for micro mode (0 = all)");
  sim->add_option("--out", sim_out, "Output path ('-' = stdout)");
  sim->add_option("--format", sim_format, "Output encoding")->check(CLI::IsMember({"csv", "json"}));

  // retrieve
  auto* ret = app.add_subcommand("retrieve", "Retrieve photon statistics from click data");
  std::string ret_input;
  double ret_efficiency = 0.5;
  std::string ret_algorithm = "eme";
  double ret_lambda = 1e-3;
  double ret_epsilon = 1e-12;
  int ret_nmax = 50;
  long long ret_max_iterations = 10'000'000;
  int ret_bootstrap = 0;
  std::uint64_t ret_seed = 1;
  std::string ret_reference;
  std::string ret_estimate_out;
  std::string ret_report_out;
  std::string ret_format = "csv";
  int ret_threads = 0;
  ret->add_option("--input", ret_input, "Click histogram (CSV with .meta.json sidecar, or JSON)")
      ->required();
  auto* eff_opt = ret->add_option("--efficiency", ret_efficiency,
                                  "System efficiency (overrides file metadata)");
  ret->add_option("--algorithm", ret_algorithm, "direct, em, or eme")
      ->check(CLI::IsMember({"direct", "em", "eme"}));
  ret->add_option("--lambda", ret_lambda, "Entropy-regularization weight");
  ret->add_option("--epsilon", ret_epsilon, "Iteration cut-off distance");
  ret->add_option("--n-max", ret_nmax, "Photon-number cutoff");
  ret->add_option("--max-iterations", ret_max_iterations, "Iteration cap");
  ret->add_option("--bootstrap", ret_bootstrap, "Bootstrap trials for uncertainties (0 = off)");
  ret->add_option("--seed", ret_seed, "Random seed (bootstrap resampling)");
  ret->add_option("--reference", ret_reference, "Truth distribution for fidelity/TVD");
  ret->add_option("--estimate-out", ret_estimate_out, "Write the retrieved distribution here");
  ret->add_option("--report-out", ret_report_out, "Write the retrieval report (JSON) here");
  ret->add_option("--format", ret_format, "Estimate encoding")
      ->check(CLI::IsMember({"csv", "json"}));
  ret->add_option("--threads", ret_threads, "Bootstrap threads (0 = all)");

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "Scalar diagnostics of a photon distribution");
  std::string diag_input;
  std::string diag_reference;
  std::string diag_out = "-";
  std::string diag_format = "csv";
  diag->add_option("--input", diag_input, "Distribution file (CSV 'n,p' or JSON array)")
      ->required();
  diag->add_option("--reference", diag_reference, "Reference distribution for fidelity/TVD");
  diag->add_option("--out", diag_out, "Output path ('-' = stdout)");
  diag->add_option("--format", diag_format, "Output encoding")
      ->check(CLI::IsMember({"csv", "json"}));

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run a declarative experiment config");
  std::string exp_config;
  std::string exp_output_dir;
  std::uint64_t exp_seed = 0;
  int exp_threads = -1;
  exp->add_option("config", exp_config, "Experiment config (JSON)")->required();
  exp->add_option("--output-dir", exp_output_dir, "Override the config's output directory");
  auto* exp_seed_opt = exp->add_option("--seed", exp_seed, "Override the master seed");
  auto* exp_threads_opt = exp->add_option("--threads", exp_threads, "Override the thread count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) {
      return run_simulate(sim_source, sim_channels, sim_efficiency, sim_runs, sim_seed, sim_mode,
                          sim_nmax, sim_threads, sim_out, sim_format);
    }
    if (ret->parsed()) {
      return run_retrieve(ret_input, ret_efficiency, eff_opt->count() > 0, ret_algorithm,
                          ret_lambda, ret_epsilon, ret_nmax, ret_max_iterations, ret_bootstrap,
                          ret_seed, ret_reference, ret_estimate_out, ret_report_out, ret_format,
                          ret_threads);
    }
    if (diag->parsed()) {
      return run_diagnose(diag_input, diag_reference, diag_out, diag_format);
    }
    if (exp->parsed()) {
      return run_experiment_cmd(
          exp_config, exp_output_dir,
          exp_seed_opt->count() ? std::optional<std::uint64_t>(exp_seed) : std::nullopt,
          exp_threads_opt->count() ? std::optional<int>(exp_threads) : std::nullopt);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << json{{"error", "invalid_argument"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  } catch (const pnr::parse_error& e) {
    std::cerr << json{{"error", "parse_error"}, {"message", e.what()}}.dump() << "\n";
    return 3;
  } catch (const pnr::dimension_error& e) {
    std::cerr << json{{"error", "dimension_error"}, {"message", e.what()}}.dump() << "\n";
    return 4;
  } catch (const pnr::config_error& e) {
    std::cerr << json{{"error", "config_error"}, {"message", e.what()}}.dump() << "\n";
    return 5;
  } catch (const pnr::numeric_error& e) {
    std::cerr << json{{"error", "numeric_error"}, {"message", e.what()}}.dump() << "\n";
    return 6;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << json{{"error", "io_error"}, {"message", e.what()}}.dump() << "\n";
    return 7;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
