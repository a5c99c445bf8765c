#pragma once

#include <functional>
#include <vector>

#include "pnr/detector.hpp"
#include "pnr/distribution.hpp"

namespace pnr {

enum class Algorithm { direct_inverse, em, eme };
enum class InitPolicy { uniform, custom };
enum class StopReason { converged, iteration_cap, halted };

struct RetrievalSettings {
  Algorithm algorithm = Algorithm::eme;
  /// Entropy-regularization weight; 0 degenerates EME to plain EM.
  double lambda = 1e-3;
  /// Stop once the Euclidean distance between consecutive iterates falls to
  /// or below this value.
  double epsilon = 1e-12;
  /// Photon-number cutoff; must match the response matrix passed in.
  int n_max = 50;
  long long max_iterations = 10'000'000;
  InitPolicy init = InitPolicy::uniform;
  /// Starting iterate when init == custom; normalized internally.
  std::vector<double> init_values;
  /// Record per-iteration distance and log-likelihood traces (memory grows
  /// with the iteration count).
  bool record_traces = false;

  void validate() const;
};

struct RetrievalReport {
  PhotonDistribution estimate;
  long long iterations = 0;
  StopReason stop_reason = StopReason::converged;
  /// Distance between the last two iterates.
  double final_distance = 0.0;
  /// Number of entries clamped to zero across all iterations (EME only; the
  /// EM map preserves non-negativity).
  long long clamp_events = 0;
  std::vector<double> distance_trace;
  std::vector<double> likelihood_trace;
};

/// Called after every accepted iterate with (iteration index from 1, current
/// estimate, inter-iterate distance); return false to halt early.
using IterationObserver = std::function<bool(long long, const std::vector<double>&, double)>;

/// Least-squares inversion of c = C p. Solves the square system exactly when
/// n_max == channels (rank permitting) and applies the Moore-Penrose
/// pseudoinverse (singular values below 1e-12 of the largest are dropped)
/// otherwise. The result is a plain vector: entries may be negative, which is
/// the method's documented failure mode on sampled data.
std::vector<double> direct_inverse(const ClickDistribution& clicks, const ResponseMatrix& response);

/// Expectation-maximization iteration from the uniform (or custom) iterate.
/// Click data are normalized to frequencies internally; every iterate is
/// renormalized. The data log-likelihood is non-decreasing along iterates.
RetrievalReport em_retrieve(const ClickDistribution& clicks, const ResponseMatrix& response,
                            const RetrievalSettings& settings, const IterationObserver& observer = {});

/// Entropy-regularized EM: the EM image minus lambda * (ln p_n - S) p_n with
/// S the iterate's entropy functional; negative entries are clamped to zero
/// (counted in clamp_events) and the iterate renormalized.
RetrievalReport eme_retrieve(const ClickDistribution& clicks, const ResponseMatrix& response,
                             const RetrievalSettings& settings, const IterationObserver& observer = {});

/// Dispatches on settings.algorithm; direct inversion is wrapped in a report
/// with iterations = 0 and the raw (possibly signed) vector as estimate probs.
RetrievalReport retrieve(const ClickDistribution& clicks, const ResponseMatrix& response,
                         const RetrievalSettings& settings);

/// Data log-likelihood sum_m d_m ln (C p)_m with d normalized to frequencies.
double log_likelihood(const ClickDistribution& clicks, const ResponseMatrix& response,
                      const std::vector<double>& p);

/// Max-norm residual |EM-image(p) - p| of the plain EM fixed-point map at p.
/// Zero at EM fixed points; at an EME fixed point it equals the entropy term
/// lambda * max |(ln p_n - S) p_n|.
double fixed_point_residual(const std::vector<double>& p, const ClickDistribution& clicks,
                            const ResponseMatrix& response);

}  // namespace pnr
