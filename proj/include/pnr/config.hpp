#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pnr/detector.hpp"
#include "pnr/retrieval.hpp"
#include "pnr/sources.hpp"

namespace pnr {

enum class ExperimentKind {
  single_retrieval,
  method_comparison,
  scaling_study,
  lambda_sweep,
  convergence_study,
  overfitting_study,
  table_report,
};

/// Declarative description of one experiment. Parsed from a JSON config file
/// (schema_version 1); fields left out fall back to the per-kind defaults
/// listed in the README. The resolved config is echoed into every output
/// directory, so a run is reproducible from its artifacts alone.
struct ExperimentConfig {
  int schema_version = 1;
  ExperimentKind kind = ExperimentKind::single_retrieval;
  DetectorConfig detector;
  std::vector<SourceSpec> sources;
  RetrievalSettings retrieval;
  /// Measurement repetitions per simulated histogram. A config that omits
  /// this uses 3e6 for method_comparison and 3e5 everywhere else.
  std::uint64_t runs = 300'000;
  /// Stopping distance for the plain (unregularized) runs inside
  /// method_comparison only. The plain map keeps fitting noise as the stop
  /// tightens and has no state-independent optimum, so the comparison pins
  /// one practical value; the regularized runs keep retrieval.epsilon.
  double em_epsilon = 1.5e-7;
  std::vector<std::uint64_t> runs_grid;   // scaling_study
  std::vector<double> lambda_grid;        // lambda_sweep
  std::vector<double> epsilon_grid;       // overfitting_study
  int trials = 10;
  int bootstrap_trials = 10;              // table_report
  std::uint64_t seed = 1;
  /// 0 = all available threads; 1 = serial reference path.
  int threads = 0;
  std::string output_dir = "out";

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;
  void validate() const;
};

std::string experiment_kind_name(ExperimentKind k);
ExperimentKind experiment_kind_from_name(const std::string& name);

SourceKind source_kind_from_name(const std::string& name);
std::string source_kind_name(SourceKind k);
nlohmann::json source_to_json(const SourceSpec& s);
SourceSpec source_from_json(const nlohmann::json& j);

std::string algorithm_name(Algorithm a);
Algorithm algorithm_from_name(const std::string& name);

}  // namespace pnr
