#pragma once

#include <string>

#include "pnr/distribution.hpp"

namespace pnr {

enum class SourceKind {
  coherent,
  thermal,
  multimode_thermal,
  subtracted_thermal,
  photon_cluster,
};

/// Parametric photon-number law. Fields beyond `kind` are read selectively:
/// mean (coherent, thermal, multimode, subtracted), modes (multimode),
/// subtractions (subtracted), photons + source_efficiency (cluster).
struct SourceSpec {
  SourceKind kind = SourceKind::coherent;
  double mean = 1.0;
  int modes = 1;
  int subtractions = 0;
  int photons = 1;
  double source_efficiency = 1.0;

  void validate() const;
  /// Comma-free display label, e.g. "coherent(5)" or "cluster(9;0.55)".
  std::string label() const;
};

/// Evaluates the law on n = 0..n_max and renormalizes. Laws with infinite
/// support record the discarded tail in truncation_loss and emit a warning
/// through set_warning_handler when it exceeds 1e-6.
PhotonDistribution realize(const SourceSpec& spec, int n_max);

PhotonDistribution coherent(double mean, int n_max);
PhotonDistribution thermal(double mean, int n_max);
PhotonDistribution multimode_thermal(double mean, int modes, int n_max);
/// Thermal state after `subtractions` photon subtractions, parameterized by
/// the mean of the *conditioned output* state.
PhotonDistribution subtracted_thermal(double mean, int subtractions, int n_max);
/// Cluster of `photons` independent single photons, each surviving with
/// probability `efficiency`; requires n_max >= photons.
PhotonDistribution photon_cluster(int photons, double efficiency, int n_max);

/// Binomial thinning: every photon independently survives with probability
/// `transmission` in [0, 1].
PhotonDistribution apply_loss(const PhotonDistribution& p, double transmission);

/// Smallest cutoff whose discarded tail mass is below `tail`, floored at
/// `floor_n`.
int default_cutoff(const SourceSpec& spec, double tail = 1e-9, int floor_n = 50);

/// Replaces the sink for truncation warnings (default: stderr). Passing
/// nullptr silences warnings. Returns the previous handler.
using WarningHandler = void (*)(const std::string& message);
WarningHandler set_warning_handler(WarningHandler handler);

}  // namespace pnr
