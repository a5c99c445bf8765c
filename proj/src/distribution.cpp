#include "pnr/distribution.hpp"

#include <cmath>

#include "pnr/errors.hpp"

namespace pnr {

double PhotonDistribution::mean() const {
  double m = 0.0;
  for (std::size_t n = 0; n < probs.size(); ++n) m += static_cast<double>(n) * probs[n];
  return m;
}

double PhotonDistribution::variance() const {
  double m = 0.0;
  double m2 = 0.0;
  for (std::size_t n = 0; n < probs.size(); ++n) {
    const auto x = static_cast<double>(n);
    m += x * probs[n];
    m2 += x * x * probs[n];
  }
  return m2 - m * m;
}

void PhotonDistribution::normalize() {
  double total = 0.0;
  for (double v : probs) total += v;
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw numeric_error("distribution has no positive finite mass to normalize");
  }
  for (double& v : probs) v /= total;
}

void PhotonDistribution::validate() const {
  if (probs.empty()) throw numeric_error("distribution is empty");
  double total = 0.0;
  for (double v : probs) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw numeric_error("distribution entry is negative or non-finite");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-10) throw numeric_error("distribution mass deviates from 1 beyond 1e-10");
}

}  // namespace pnr
