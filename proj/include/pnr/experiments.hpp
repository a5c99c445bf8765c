#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pnr/config.hpp"

namespace pnr {

using Cell = std::variant<std::int64_t, double, std::string>;

/// Tabular outcome of one experiment: trial-level rows plus aggregated
/// summary. Row order is fixed by task index, never by thread schedule.
struct ExperimentResult {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
  nlohmann::json summary;
  /// Auxiliary per-run trace files to place next to rows.csv: (name, content).
  std::vector<std::pair<std::string, std::string>> extra_files;
  double wall_seconds = 0.0;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

ExperimentResult run_single_retrieval(const ExperimentConfig& cfg);
ExperimentResult run_method_comparison(const ExperimentConfig& cfg);
ExperimentResult run_scaling_study(const ExperimentConfig& cfg);
ExperimentResult run_lambda_sweep(const ExperimentConfig& cfg);
ExperimentResult run_convergence_study(const ExperimentConfig& cfg);
ExperimentResult run_overfitting_study(const ExperimentConfig& cfg);
ExperimentResult run_table_report(const ExperimentConfig& cfg);

/// Writes config.json (resolved echo), rows.csv, rows.json, summary.json,
/// manifest.json, any extra files, and timing.log into `out_dir` (created if
/// missing). All files except timing.log are byte-identical across replays of
/// the same config and seed.
void write_experiment(const ExperimentResult& result, const ExperimentConfig& cfg,
                      const std::string& out_dir);

/// Default source roster installed when a config omits "sources".
std::vector<SourceSpec> default_sources(ExperimentKind kind);

}  // namespace pnr
