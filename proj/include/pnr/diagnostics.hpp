#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pnr/detector.hpp"
#include "pnr/retrieval.hpp"

namespace pnr {

/// Per-field sample standard deviations from bootstrap resampling.
struct DiagnosticsSpread {
  double mean = 0.0;
  double variance = 0.0;
  double g2 = 0.0;
  double mandel_q = 0.0;
  double parity = 0.0;
  double wigner_origin = 0.0;
  std::optional<double> fidelity;
  std::optional<double> tvd;
};

/// Scalar characteristics of one photon-number distribution, optionally
/// compared against a reference and annotated with bootstrap spreads.
struct DiagnosticsBundle {
  double mean = 0.0;
  double variance = 0.0;
  /// Second-order correlation; NaN when the mean vanishes.
  double g2 = 0.0;
  /// Mandel Q; NaN when the mean vanishes.
  double mandel_q = 0.0;
  double parity = 0.0;
  /// Phase-space origin value, parity / pi.
  double wigner_origin = 0.0;
  std::optional<double> fidelity;
  std::optional<double> tvd;
  std::optional<DiagnosticsSpread> uncertainty;
};

/// sum n(n-1) p_n / (sum n p_n)^2; throws numeric_error for zero mean.
double g2(const std::vector<double>& p);
/// (variance - mean) / mean; throws numeric_error for zero mean.
double mandel_q(const std::vector<double>& p);
/// sum (-1)^n p_n.
double parity(const std::vector<double>& p);
/// Radial Wigner section (1/pi) e^{-r^2} sum p_n (-1)^n L_n(2 r^2) via the
/// three-term Laguerre recurrence; at r = 0 it reduces to parity / pi with
/// the identical summation.
double wigner_radial(const std::vector<double>& p, double r);
/// Bhattacharyya fidelity (sum sqrt(p_n q_n))^2; lengths are zero-padded.
double fidelity(const std::vector<double>& p, const std::vector<double>& q);
/// Total variation distance 0.5 * sum |p_n - q_n|; lengths are zero-padded.
double tvd(const std::vector<double>& p, const std::vector<double>& q);

DiagnosticsBundle diagnose(const std::vector<double>& p);
DiagnosticsBundle diagnose(const std::vector<double>& p, const std::vector<double>& reference);

/// Retrieves from `data` (counts mode), then repeats on multinomially
/// resampled histograms with per-trial derived seeds and fills
/// uncertainty with the across-trial standard deviations. Trials fan out
/// across OpenMP threads; results are independent of the thread count.
DiagnosticsBundle bootstrap(const ClickDistribution& data, const ResponseMatrix& response,
                            const RetrievalSettings& settings, int trials, std::uint64_t seed,
                            const std::vector<double>* reference = nullptr, int threads = 0);

/// As bootstrap, but with one explicit seed per trial (repeating a seed must
/// reproduce the trial exactly).
DiagnosticsBundle bootstrap_with_seeds(const ClickDistribution& data, const ResponseMatrix& response,
                                       const RetrievalSettings& settings,
                                       const std::vector<std::uint64_t>& trial_seeds,
                                       const std::vector<double>* reference = nullptr,
                                       int threads = 0);

}  // namespace pnr
