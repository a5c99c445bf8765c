#include "pnr/detector.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pnr/errors.hpp"
#include "pnr/rng.hpp"

namespace pnr {

void DetectorConfig::validate() const {
  if (channels < 1) throw std::invalid_argument("detector needs at least one channel");
  if (!(efficiency > 0.0 && efficiency <= 1.0)) {
    throw std::invalid_argument("detector efficiency must lie in (0, 1]");
  }
}

ClickDistribution ClickDistribution::as_probabilities() const {
  if (mode == ClickMode::probabilities) return *this;
  ClickDistribution out;
  out.values.resize(values.size());
  double total = 0.0;
  for (double v : values) total += v;
  if (!(total > 0.0)) throw numeric_error("click histogram has no mass");
  for (std::size_t m = 0; m < values.size(); ++m) out.values[m] = values[m] / total;
  out.mode = ClickMode::probabilities;
  out.runs = runs;
  return out;
}

void ClickDistribution::validate() const {
  if (values.empty()) throw numeric_error("click histogram is empty");
  double total = 0.0;
  for (double v : values) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw numeric_error("click entry is negative or non-finite");
    total += v;
  }
  if (mode == ClickMode::probabilities) {
    // Loose enough to accept histograms round-tripped through nine-digit text.
    if (std::abs(total - 1.0) > 1e-8) throw numeric_error("click probabilities deviate from unit mass");
  } else {
    if (runs == 0) throw numeric_error("counts mode requires runs > 0");
    if (std::abs(total - static_cast<double>(runs)) > 0.5) {
      throw numeric_error("click counts do not sum to the declared number of runs");
    }
  }
}

ResponseMatrix::ResponseMatrix(int channels, int n_max) : channels_(channels), n_max_(n_max) {
  if (channels < 1 || n_max < 0) throw std::invalid_argument("response matrix shape out of range");
  data_.assign(static_cast<std::size_t>(channels + 1) * (n_max + 1), 0.0);
}

ResponseMatrix response_matrix(const DetectorConfig& det, int n_max) {
  det.validate();
  const int M = det.channels;
  const double eta = det.efficiency;
  ResponseMatrix C(M, n_max);

  // occ[m] = P(m channels occupied) after k photons; photon k+1 is either
  // lost (1 - eta), lands in an occupied channel (eta m / M), or opens a new
  // one (eta (M - m) / M). All terms non-negative: exact to rounding.
  std::vector<double> occ(M + 1, 0.0);
  std::vector<double> nxt(M + 1, 0.0);
  occ[0] = 1.0;
  C(0, 0) = 1.0;
  for (int n = 1; n <= n_max; ++n) {
    const int top = std::min(n, M);
    for (int m = 0; m <= top; ++m) {
      double v = occ[m] * ((1.0 - eta) + eta * m / M);
      if (m > 0) v += occ[m - 1] * (eta * (M - (m - 1)) / M);
      nxt[m] = v;
    }
    for (int m = 0; m <= top; ++m) occ[m] = nxt[m];
    for (int m = 0; m <= M; ++m) C(m, n) = occ[m];
  }
  return C;
}

ResponseMatrix response_matrix_closed_form(const DetectorConfig& det, int n_max) {
  det.validate();
  const int M = det.channels;
  const double eta = det.efficiency;
  ResponseMatrix C(M, n_max);

  // ln binom(a, b) table for a <= M.
  auto lbinom = [](int a, int b) {
    return std::lgamma(a + 1.0) - std::lgamma(b + 1.0) - std::lgamma(a - b + 1.0);
  };

  for (int m = 0; m <= M; ++m) {
    for (int n = 0; n <= n_max; ++n) {
      if (m > n) continue;
      double value;
      if (m == n) {
        // All m photons land in distinct channels: (eta/M)^n M!/(M-n)!.
        value = std::exp(n * std::log(eta / M) + std::lgamma(M + 1.0) - std::lgamma(M - n + 1.0));
      } else {
        // Inclusion-exclusion over the j of m designated channels that stay
        // silent; Kahan summation tempers the alternating cancellation.
        double sum = 0.0;
        double comp = 0.0;
        for (int j = 0; j <= m; ++j) {
          const double base = (1.0 - eta) + (m - j) * eta / M;
          const double term = ((j % 2 == 0) ? 1.0 : -1.0) * std::exp(lbinom(m, j)) * std::pow(base, n);
          const double y = term - comp;
          const double t = sum + y;
          comp = (t - sum) - y;
          sum = t;
        }
        value = std::exp(lbinom(M, m)) * sum;
      }
      if (value < 0.0) value = 0.0;  // residual cancellation noise
      if (value > 1.0) value = 1.0;
      C(m, n) = value;
    }
  }
  return C;
}

ClickDistribution forward(const ResponseMatrix& response, const PhotonDistribution& p) {
  if (p.cutoff() != response.n_max()) {
    throw dimension_error("distribution cutoff does not match response matrix columns");
  }
  ClickDistribution c;
  c.values.resize(response.rows());
  double total = 0.0;
  for (int m = 0; m < response.rows(); ++m) {
    const double* row = response.row(m);
    double acc = 0.0;
    for (int n = 0; n < response.cols(); ++n) acc += row[n] * p.probs[n];
    c.values[m] = acc;
    total += acc;
  }
  for (double& v : c.values) v /= total;  // column-stochastic: total is 1 up to rounding
  c.mode = ClickMode::probabilities;
  c.runs = 0;
  return c;
}

ClickDistribution sample_clicks(const ClickDistribution& probabilities, std::uint64_t runs,
                                std::uint64_t seed) {
  if (probabilities.mode != ClickMode::probabilities) {
    throw std::invalid_argument("sample_clicks expects probabilities mode");
  }
  if (runs == 0) throw std::invalid_argument("sample_clicks needs runs >= 1");
  probabilities.validate();

  // Conditional binomial splitting: bin m receives Binomial(remaining,
  // p_m / remaining mass). One binomial draw per bin regardless of runs.
  std::mt19937_64 engine(rng::derive(seed, {0x636c69636bULL}));
  ClickDistribution out;
  out.values.assign(probabilities.values.size(), 0.0);
  out.mode = ClickMode::counts;
  out.runs = runs;

  auto remaining = static_cast<long long>(runs);
  double mass = 1.0;
  const int bins = static_cast<int>(probabilities.values.size());
  for (int m = 0; m < bins - 1 && remaining > 0; ++m) {
    double q = probabilities.values[m] / mass;
    if (q > 1.0) q = 1.0;
    long long k = 0;
    if (q >= 1.0) {
      k = remaining;
    } else if (q > 0.0) {
      std::binomial_distribution<long long> binom(remaining, q);
      k = binom(engine);
    }
    out.values[m] = static_cast<double>(k);
    remaining -= k;
    mass -= probabilities.values[m];
    if (mass < 1e-300) mass = 1e-300;
  }
  out.values[bins - 1] += static_cast<double>(remaining);
  return out;
}

namespace {

struct MicroKernel {
  std::vector<double> cdf;
  int channels;
  double efficiency;

  explicit MicroKernel(const PhotonDistribution& p, const DetectorConfig& det)
      : channels(det.channels), efficiency(det.efficiency) {
    cdf.resize(p.probs.size());
    double acc = 0.0;
    for (std::size_t n = 0; n < p.probs.size(); ++n) {
      acc += p.probs[n];
      cdf[n] = acc;
    }
    cdf.back() = 1.0;
  }

  /// One detector cycle; `stamp` has size channels, `tag` must be unique per
  /// call so stale stamps never read as occupied.
  int run(rng::Stream& stream, std::vector<std::uint64_t>& stamp, std::uint64_t tag) const {
    const double u = stream.next_unit();
    int n = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    int clicks = 0;
    for (int i = 0; i < n; ++i) {
      if (stream.next_unit() >= efficiency) continue;
      const auto ch = stream.next_below(static_cast<std::uint32_t>(channels));
      if (stamp[ch] != tag) {
        stamp[ch] = tag;
        ++clicks;
      }
    }
    return clicks;
  }
};

}  // namespace

ClickDistribution simulate_microscopic_serial(const PhotonDistribution& p, const DetectorConfig& det,
                                              std::uint64_t runs, std::uint64_t seed) {
  det.validate();
  p.validate();
  if (runs == 0) throw std::invalid_argument("simulate_microscopic needs runs >= 1");

  const MicroKernel kernel(p, det);
  std::vector<std::uint64_t> hist(det.channels + 1, 0);
  std::vector<std::uint64_t> stamp(det.channels, ~0ULL);
  for (std::uint64_t r = 0; r < runs; ++r) {
    rng::Stream stream(rng::derive(seed, {r}));
    ++hist[kernel.run(stream, stamp, r)];
  }

  ClickDistribution out;
  out.values.resize(hist.size());
  for (std::size_t m = 0; m < hist.size(); ++m) out.values[m] = static_cast<double>(hist[m]);
  out.mode = ClickMode::counts;
  out.runs = runs;
  return out;
}

ClickDistribution simulate_microscopic(const PhotonDistribution& p, const DetectorConfig& det,
                                       std::uint64_t runs, std::uint64_t seed, int threads) {
#ifndef _OPENMP
  (void)threads;
  return simulate_microscopic_serial(p, det, runs, seed);
#else
  det.validate();
  p.validate();
  if (runs == 0) throw std::invalid_argument("simulate_microscopic needs runs >= 1");

  const MicroKernel kernel(p, det);
  std::vector<std::uint64_t> hist(det.channels + 1, 0);
  const int team = threads > 0 ? threads : omp_get_max_threads();

#pragma omp parallel num_threads(team)
  {
    std::vector<std::uint64_t> local(det.channels + 1, 0);
    std::vector<std::uint64_t> stamp(det.channels, ~0ULL);
#pragma omp for schedule(static)
    for (long long r = 0; r < static_cast<long long>(runs); ++r) {
      rng::Stream stream(rng::derive(seed, {static_cast<std::uint64_t>(r)}));
      ++local[kernel.run(stream, stamp, static_cast<std::uint64_t>(r))];
    }
#pragma omp critical
    for (std::size_t m = 0; m < hist.size(); ++m) hist[m] += local[m];
  }

  ClickDistribution out;
  out.values.resize(hist.size());
  for (std::size_t m = 0; m < hist.size(); ++m) out.values[m] = static_cast<double>(hist[m]);
  out.mode = ClickMode::counts;
  out.runs = runs;
  return out;
#endif
}

}  // namespace pnr
