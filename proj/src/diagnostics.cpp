#include "pnr/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pnr/errors.hpp"
#include "pnr/rng.hpp"

namespace pnr {

namespace {

double moment_sum(const std::vector<double>& p, int power) {
  double acc = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    double term = p[n];
    for (int k = 0; k < power; ++k) term *= static_cast<double>(n);
    acc += term;
  }
  return acc;
}

}  // namespace

double g2(const std::vector<double>& p) {
  const double m1 = moment_sum(p, 1);
  if (!(m1 > 0.0)) throw numeric_error("g2 undefined for zero mean");
  double fact2 = 0.0;
  for (std::size_t n = 2; n < p.size(); ++n) {
    fact2 += static_cast<double>(n) * static_cast<double>(n - 1) * p[n];
  }
  return fact2 / (m1 * m1);
}

double mandel_q(const std::vector<double>& p) {
  const double m1 = moment_sum(p, 1);
  if (!(m1 > 0.0)) throw numeric_error("Mandel Q undefined for zero mean");
  const double var = moment_sum(p, 2) - m1 * m1;
  return (var - m1) / m1;
}

double parity(const std::vector<double>& p) {
  double acc = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) acc += (n % 2 == 0 ? p[n] : -p[n]);
  return acc;
}

double wigner_radial(const std::vector<double>& p, double r) {
  // Three-term recurrence (k+1) L_{k+1} = (2k+1-x) L_k - k L_{k-1} at x = 2r^2.
  const double x = 2.0 * r * r;
  double acc = 0.0;
  double lkm1 = 0.0;
  double lk = 1.0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    if (n > 0) {
      const auto k = static_cast<double>(n - 1);
      const double lkp1 = ((2.0 * k + 1.0 - x) * lk - k * lkm1) / (k + 1.0);
      lkm1 = lk;
      lk = lkp1;
    }
    acc += (n % 2 == 0 ? p[n] : -p[n]) * lk;
  }
  return acc * std::exp(-r * r) / std::numbers::pi;
}

double fidelity(const std::vector<double>& p, const std::vector<double>& q) {
  const std::size_t overlap = std::min(p.size(), q.size());
  double root = 0.0;
  for (std::size_t n = 0; n < overlap; ++n) root += std::sqrt(p[n] * q[n]);
  return root * root;
}

double tvd(const std::vector<double>& p, const std::vector<double>& q) {
  const std::size_t len = std::max(p.size(), q.size());
  double acc = 0.0;
  for (std::size_t n = 0; n < len; ++n) {
    const double a = n < p.size() ? p[n] : 0.0;
    const double b = n < q.size() ? q[n] : 0.0;
    acc += std::abs(a - b);
  }
  return 0.5 * acc;
}

DiagnosticsBundle diagnose(const std::vector<double>& p) {
  DiagnosticsBundle b;
  b.mean = moment_sum(p, 1);
  b.variance = moment_sum(p, 2) - b.mean * b.mean;
  if (b.mean > 0.0) {
    b.g2 = g2(p);
    b.mandel_q = (b.variance - b.mean) / b.mean;
  } else {
    b.g2 = std::numeric_limits<double>::quiet_NaN();
    b.mandel_q = std::numeric_limits<double>::quiet_NaN();
  }
  b.parity = parity(p);
  b.wigner_origin = b.parity / std::numbers::pi;
  return b;
}

DiagnosticsBundle diagnose(const std::vector<double>& p, const std::vector<double>& reference) {
  DiagnosticsBundle b = diagnose(p);
  b.fidelity = fidelity(p, reference);
  b.tvd = tvd(p, reference);
  return b;
}

namespace {

std::vector<double> bundle_fields(const DiagnosticsBundle& b) {
  return {b.mean,
          b.variance,
          b.g2,
          b.mandel_q,
          b.parity,
          b.wigner_origin,
          b.fidelity.value_or(std::numeric_limits<double>::quiet_NaN()),
          b.tvd.value_or(std::numeric_limits<double>::quiet_NaN())};
}

}  // namespace

DiagnosticsBundle bootstrap_with_seeds(const ClickDistribution& data, const ResponseMatrix& response,
                                       const RetrievalSettings& settings,
                                       const std::vector<std::uint64_t>& trial_seeds,
                                       const std::vector<double>* reference, int threads) {
  if (data.mode != ClickMode::counts) {
    throw std::invalid_argument("bootstrap expects a counts-mode histogram");
  }
  if (trial_seeds.size() < 2) throw std::invalid_argument("bootstrap needs at least two trials");
  data.validate();

  const ClickDistribution freq = data.as_probabilities();
  auto analyze = [&](const ClickDistribution& clicks) {
    const RetrievalReport rep = retrieve(clicks, response, settings);
    return reference ? diagnose(rep.estimate.probs, *reference) : diagnose(rep.estimate.probs);
  };

  DiagnosticsBundle point = analyze(data);

  const int trials = static_cast<int>(trial_seeds.size());
  std::vector<DiagnosticsBundle> results(trials);
#ifdef _OPENMP
  const int team = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(team)
#else
  (void)threads;
#endif
  for (int t = 0; t < trials; ++t) {
    const ClickDistribution resampled = sample_clicks(freq, data.runs, trial_seeds[t]);
    results[t] = analyze(resampled);
  }

  // Across-trial sample standard deviation per field.
  const std::size_t n_fields = bundle_fields(point).size();
  std::vector<double> mean(n_fields, 0.0), sq(n_fields, 0.0);
  for (const auto& r : results) {
    const auto f = bundle_fields(r);
    for (std::size_t i = 0; i < n_fields; ++i) {
      mean[i] += f[i];
      sq[i] += f[i] * f[i];
    }
  }
  DiagnosticsSpread spread;
  std::vector<double> std_dev(n_fields);
  for (std::size_t i = 0; i < n_fields; ++i) {
    mean[i] /= trials;
    const double var = (sq[i] - trials * mean[i] * mean[i]) / (trials - 1);
    std_dev[i] = var > 0.0 ? std::sqrt(var) : 0.0;
  }
  spread.mean = std_dev[0];
  spread.variance = std_dev[1];
  spread.g2 = std_dev[2];
  spread.mandel_q = std_dev[3];
  spread.parity = std_dev[4];
  spread.wigner_origin = std_dev[5];
  if (reference) {
    spread.fidelity = std_dev[6];
    spread.tvd = std_dev[7];
  }
  point.uncertainty = spread;
  return point;
}

DiagnosticsBundle bootstrap(const ClickDistribution& data, const ResponseMatrix& response,
                            const RetrievalSettings& settings, int trials, std::uint64_t seed,
                            const std::vector<double>* reference, int threads) {
  if (trials < 2) throw std::invalid_argument("bootstrap needs at least two trials");
  std::vector<std::uint64_t> seeds(trials);
  for (int t = 0; t < trials; ++t) seeds[t] = rng::derive(seed, {0xb007, static_cast<std::uint64_t>(t)});
  return bootstrap_with_seeds(data, response, settings, seeds, reference, threads);
}

}  // namespace pnr
