#pragma once

#include <cstdint>
#include <vector>

#include "pnr/distribution.hpp"

namespace pnr {

/// Balanced multiplexed photon-number-resolving detector: `channels` on/off
/// channels behind a uniform fan-out, per-photon survival `efficiency`.
struct DetectorConfig {
  int channels = 10;
  double efficiency = 0.5;

  void validate() const;  // channels >= 1, efficiency in (0, 1]
};

enum class ClickMode { probabilities, counts };

/// Click histogram: values[m] for m = 0..channels simultaneous clicks.
/// In counts mode `runs` holds the number of measurement repetitions and the
/// values sum to it; in probabilities mode the values sum to 1.
struct ClickDistribution {
  std::vector<double> values;
  ClickMode mode = ClickMode::probabilities;
  std::uint64_t runs = 0;

  int channels() const { return static_cast<int>(values.size()) - 1; }
  /// Normalized frequency view of this histogram.
  ClickDistribution as_probabilities() const;
  void validate() const;
};

/// Column-stochastic click response: (m, n) entry is the probability of m
/// clicks given n incident photons. Entries vanish for m > n and for m >
/// channels; every column sums to 1.
class ResponseMatrix {
 public:
  ResponseMatrix(int channels, int n_max);

  double operator()(int m, int n) const { return data_[static_cast<std::size_t>(m) * cols() + n]; }
  double& operator()(int m, int n) { return data_[static_cast<std::size_t>(m) * cols() + n]; }
  /// Contiguous row m (length cols()); the retrieval inner loops stream rows.
  const double* row(int m) const { return data_.data() + static_cast<std::size_t>(m) * cols(); }

  int channels() const { return channels_; }
  int n_max() const { return n_max_; }
  int rows() const { return channels_ + 1; }
  int cols() const { return n_max_ + 1; }

 private:
  int channels_;
  int n_max_;
  std::vector<double> data_;  // row-major (channels+1) x (n_max+1)
};

/// Builds the response by propagating the occupied-channel distribution one
/// photon at a time. All terms are non-negative, so the construction is exact
/// to rounding for any channel count and column-stochastic by construction.
ResponseMatrix response_matrix(const DetectorConfig& det, int n_max);

/// Closed-form construction: inclusion-exclusion over silent channels with
/// compensated (Kahan) summation and the product fast path at m == n. The
/// alternating sum cancels catastrophically for large channel counts; kept as
/// an independent cross-check of response_matrix for small ones.
ResponseMatrix response_matrix_closed_form(const DetectorConfig& det, int n_max);

/// Click statistics of a source behind the detector: c_m = sum_n C_mn p_n.
ClickDistribution forward(const ResponseMatrix& response, const PhotonDistribution& p);

/// Multinomial sample of `runs` detector cycles from analytic click
/// probabilities. Deterministic in `seed`.
ClickDistribution sample_clicks(const ClickDistribution& probabilities, std::uint64_t runs,
                                std::uint64_t seed);

/// Per-run Monte Carlo of the physical detector: draw n from p, let each
/// photon survive with probability efficiency and land in a uniformly chosen
/// channel, count occupied channels. Serves as the model-independent oracle
/// for response_matrix ∘ forward. Runs are split across OpenMP threads with
/// one counter-based substream per run, so the histogram is identical for any
/// thread count. threads = 0 uses all available.
ClickDistribution simulate_microscopic(const PhotonDistribution& p, const DetectorConfig& det,
                                       std::uint64_t runs, std::uint64_t seed, int threads = 0);

/// Plain single-loop reference implementation of simulate_microscopic; kept
/// for testing the parallel path and as the benchmark baseline.
ClickDistribution simulate_microscopic_serial(const PhotonDistribution& p, const DetectorConfig& det,
                                              std::uint64_t runs, std::uint64_t seed);

}  // namespace pnr
