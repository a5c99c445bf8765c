#pragma once

#include <vector>

namespace pnr {

/// Photon-number distribution p_n for n = 0..cutoff, normalized to unit mass.
struct PhotonDistribution {
  std::vector<double> probs;
  /// Mass the generating law carried beyond the cutoff, removed by
  /// renormalization; zero for finite-support constructions.
  double truncation_loss = 0.0;

  int cutoff() const { return static_cast<int>(probs.size()) - 1; }
  double mean() const;
  double variance() const;

  /// Scales entries to unit sum; throws numeric_error if total mass is not
  /// positive and finite.
  void normalize();
  /// Throws numeric_error unless entries are non-negative and sum to 1
  /// within 1e-10.
  void validate() const;
};

}  // namespace pnr
