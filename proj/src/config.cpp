#include "pnr/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pnr/errors.hpp"

namespace pnr {

using nlohmann::json;

std::string experiment_kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::single_retrieval:
      return "single_retrieval";
    case ExperimentKind::method_comparison:
      return "method_comparison";
    case ExperimentKind::scaling_study:
      return "scaling_study";
    case ExperimentKind::lambda_sweep:
      return "lambda_sweep";
    case ExperimentKind::convergence_study:
      return "convergence_study";
    case ExperimentKind::overfitting_study:
      return "overfitting_study";
    case ExperimentKind::table_report:
      return "table_report";
  }
  return "unknown";
}

ExperimentKind experiment_kind_from_name(const std::string& name) {
  if (name == "single_retrieval") return ExperimentKind::single_retrieval;
  if (name == "method_comparison") return ExperimentKind::method_comparison;
  if (name == "scaling_study") return ExperimentKind::scaling_study;
  if (name == "lambda_sweep") return ExperimentKind::lambda_sweep;
  if (name == "convergence_study") return ExperimentKind::convergence_study;
  if (name == "overfitting_study") return ExperimentKind::overfitting_study;
  if (name == "table_report") return ExperimentKind::table_report;
  throw config_error("unknown experiment kind \"" + name + "\"");
}

std::string source_kind_name(SourceKind k) {
  switch (k) {
    case SourceKind::coherent:
      return "coherent";
    case SourceKind::thermal:
      return "thermal";
    case SourceKind::multimode_thermal:
      return "multimode_thermal";
    case SourceKind::subtracted_thermal:
      return "subtracted_thermal";
    case SourceKind::photon_cluster:
      return "photon_cluster";
  }
  return "unknown";
}

SourceKind source_kind_from_name(const std::string& name) {
  if (name == "coherent") return SourceKind::coherent;
  if (name == "thermal") return SourceKind::thermal;
  if (name == "multimode_thermal" || name == "multimode") return SourceKind::multimode_thermal;
  if (name == "subtracted_thermal" || name == "subtracted") return SourceKind::subtracted_thermal;
  if (name == "photon_cluster" || name == "cluster") return SourceKind::photon_cluster;
  throw config_error("unknown source kind \"" + name + "\"");
}

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::direct_inverse:
      return "direct";
    case Algorithm::em:
      return "em";
    case Algorithm::eme:
      return "eme";
  }
  return "unknown";
}

Algorithm algorithm_from_name(const std::string& name) {
  if (name == "direct" || name == "direct_inverse") return Algorithm::direct_inverse;
  if (name == "em") return Algorithm::em;
  if (name == "eme") return Algorithm::eme;
  throw config_error("unknown algorithm \"" + name + "\"");
}

json source_to_json(const SourceSpec& s) {
  json j;
  j["kind"] = source_kind_name(s.kind);
  switch (s.kind) {
    case SourceKind::coherent:
    case SourceKind::thermal:
      j["mean"] = s.mean;
      break;
    case SourceKind::multimode_thermal:
      j["mean"] = s.mean;
      j["modes"] = s.modes;
      break;
    case SourceKind::subtracted_thermal:
      j["mean"] = s.mean;
      j["subtractions"] = s.subtractions;
      break;
    case SourceKind::photon_cluster:
      j["photons"] = s.photons;
      j["source_efficiency"] = s.source_efficiency;
      break;
  }
  return j;
}

SourceSpec source_from_json(const json& j) {
  if (!j.is_object()) throw config_error("source entries must be JSON objects");
  SourceSpec s;
  try {
    s.kind = source_kind_from_name(j.at("kind").get<std::string>());
    s.mean = j.value("mean", s.mean);
    s.modes = j.value("modes", s.modes);
    s.subtractions = j.value("subtractions", s.subtractions);
    s.photons = j.value("photons", s.photons);
    s.source_efficiency = j.value("source_efficiency", s.source_efficiency);
  } catch (const json::exception& e) {
    throw config_error(std::string("bad source entry: ") + e.what());
  }
  try {
    s.validate();
  } catch (const std::exception& e) {
    throw config_error(std::string("bad source entry: ") + e.what());
  }
  return s;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw config_error("config must be a JSON object");
  ExperimentConfig c;
  try {
    c.schema_version = j.value("schema_version", 1);
    if (c.schema_version != 1) {
      throw config_error("unsupported schema_version " + std::to_string(c.schema_version));
    }
    c.kind = experiment_kind_from_name(j.at("kind").get<std::string>());
    if (j.contains("detector")) {
      const auto& d = j.at("detector");
      c.detector.channels = d.value("channels", c.detector.channels);
      c.detector.efficiency = d.value("efficiency", c.detector.efficiency);
    }
    if (j.contains("sources")) {
      for (const auto& s : j.at("sources")) c.sources.push_back(source_from_json(s));
    }
    if (j.contains("retrieval")) {
      const auto& r = j.at("retrieval");
      if (r.contains("algorithm")) c.retrieval.algorithm = algorithm_from_name(r.at("algorithm").get<std::string>());
      c.retrieval.lambda = r.value("lambda", c.retrieval.lambda);
      c.retrieval.epsilon = r.value("epsilon", c.retrieval.epsilon);
      c.retrieval.n_max = r.value("n_max", c.retrieval.n_max);
      c.retrieval.max_iterations = r.value("max_iterations", c.retrieval.max_iterations);
    }
    if (j.contains("runs")) {
      c.runs = j.at("runs").get<std::uint64_t>();
    } else if (c.kind == ExperimentKind::method_comparison) {
      // Aggregate accuracy figures for the comparison are quoted at a deeper
      // sampling depth than the single-histogram default.
      c.runs = 3'000'000;
    }
    c.em_epsilon = j.value("em_epsilon", c.em_epsilon);
    if (j.contains("runs_grid")) c.runs_grid = j.at("runs_grid").get<std::vector<std::uint64_t>>();
    if (j.contains("lambda_grid")) c.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
    if (j.contains("epsilon_grid")) c.epsilon_grid = j.at("epsilon_grid").get<std::vector<double>>();
    c.trials = j.value("trials", c.trials);
    c.bootstrap_trials = j.value("bootstrap_trials", c.bootstrap_trials);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const json::exception& e) {
    throw config_error(std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw config_error(path + ": " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["schema_version"] = schema_version;
  j["kind"] = experiment_kind_name(kind);
  j["detector"] = json{{"channels", detector.channels}, {"efficiency", detector.efficiency}};
  json srcs = json::array();
  for (const auto& s : sources) srcs.push_back(source_to_json(s));
  j["sources"] = srcs;
  j["retrieval"] = json{{"algorithm", algorithm_name(retrieval.algorithm)},
                        {"lambda", retrieval.lambda},
                        {"epsilon", retrieval.epsilon},
                        {"n_max", retrieval.n_max},
                        {"max_iterations", retrieval.max_iterations}};
  j["runs"] = runs;
  j["em_epsilon"] = em_epsilon;
  if (!runs_grid.empty()) j["runs_grid"] = runs_grid;
  if (!lambda_grid.empty()) j["lambda_grid"] = lambda_grid;
  if (!epsilon_grid.empty()) j["epsilon_grid"] = epsilon_grid;
  j["trials"] = trials;
  j["bootstrap_trials"] = bootstrap_trials;
  j["seed"] = seed;
  // threads and output_dir are execution environment, not experiment
  // definition; leaving them out keeps the echoed config replay-stable.
  return j;
}

void ExperimentConfig::validate() const {
  try {
    detector.validate();
    retrieval.validate();
    for (const auto& s : sources) s.validate();
  } catch (const std::exception& e) {
    throw config_error(e.what());
  }
  if (runs == 0) throw config_error("runs must be positive");
  if (!(em_epsilon > 0.0)) throw config_error("em_epsilon must be positive");
  if (trials < 1) throw config_error("trials must be positive");
  if (bootstrap_trials < 2) throw config_error("bootstrap_trials must be at least 2");
  if (threads < 0) throw config_error("threads must be non-negative");
  if (output_dir.empty()) throw config_error("output_dir must not be empty");
  for (std::size_t i = 0; i < runs_grid.size(); ++i) {
    if (runs_grid[i] == 0) throw config_error("runs_grid entries must be positive");
    if (i > 0 && runs_grid[i] <= runs_grid[i - 1]) {
      throw config_error("runs_grid must be strictly ascending");
    }
  }
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    if (lambda_grid[i] < 0.0) throw config_error("lambda_grid entries must be non-negative");
    if (i > 0 && lambda_grid[i] <= lambda_grid[i - 1]) {
      throw config_error("lambda_grid must be strictly ascending");
    }
  }
  for (std::size_t i = 0; i < epsilon_grid.size(); ++i) {
    if (!(epsilon_grid[i] > 0.0)) throw config_error("epsilon_grid entries must be positive");
    if (i > 0 && epsilon_grid[i] <= epsilon_grid[i - 1]) {
      throw config_error("epsilon_grid must be strictly ascending");
    }
  }
}

}  // namespace pnr
