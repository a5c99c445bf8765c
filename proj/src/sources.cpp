#include "pnr/sources.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "pnr/errors.hpp"

namespace pnr {

namespace {

void warn_to_stderr(const std::string& message) {
  std::fprintf(stderr, "warning: %s\n", message.c_str());
}

std::atomic<WarningHandler> g_warning_handler{&warn_to_stderr};

void emit_warning(const std::string& message) {
  if (WarningHandler h = g_warning_handler.load()) h(message);
}

/// Log-probability of the law at n; laws are normalized on all of N.
double log_term(const SourceSpec& s, int n) {
  switch (s.kind) {
    case SourceKind::coherent:
      return -s.mean + n * std::log(s.mean) - std::lgamma(n + 1.0);
    case SourceKind::thermal: {
      const double x = s.mean / (1.0 + s.mean);
      return n * std::log(x) - std::log1p(s.mean);
    }
    case SourceKind::multimode_thermal: {
      // Negative binomial, shape = modes: mass x^n (1-x)^modes with
      // x = mean / (mean + modes).
      const double x = s.mean / (s.mean + s.modes);
      return std::lgamma(n + static_cast<double>(s.modes)) - std::lgamma(n + 1.0) -
             std::lgamma(static_cast<double>(s.modes)) + n * std::log(x) +
             s.modes * std::log1p(-x);
    }
    case SourceKind::subtracted_thermal: {
      // Binomial-coefficient form of the shape-(m+1) negative binomial
      // parameterized by the output mean.
      const int m = s.subtractions;
      const double x = s.mean / (s.mean + m + 1.0);
      return std::lgamma(n + m + 1.0) - std::lgamma(n + 1.0) - std::lgamma(m + 1.0) +
             n * std::log(x) + (m + 1.0) * std::log1p(-x);
    }
    case SourceKind::photon_cluster: {
      if (n > s.photons) return -std::numeric_limits<double>::infinity();
      return std::lgamma(s.photons + 1.0) - std::lgamma(n + 1.0) -
             std::lgamma(s.photons - n + 1.0) + n * std::log(s.source_efficiency) +
             (s.photons - n) * std::log1p(-s.source_efficiency);
    }
  }
  throw config_error("unknown source kind");
}

PhotonDistribution realize_law(const SourceSpec& s, int n_max) {
  if (n_max < 0) throw std::invalid_argument("n_max must be non-negative");

  PhotonDistribution out;
  out.probs.resize(n_max + 1, 0.0);

  // Point-mass degeneracies that the log-space law cannot express.
  const bool vacuum = (s.kind != SourceKind::photon_cluster && s.mean == 0.0) ||
                      (s.kind == SourceKind::photon_cluster && s.source_efficiency == 0.0);
  const bool saturated_cluster = s.kind == SourceKind::photon_cluster && s.source_efficiency == 1.0;
  if (vacuum) {
    out.probs[0] = 1.0;
    return out;
  }
  if (saturated_cluster) {
    out.probs[s.photons] = 1.0;
    return out;
  }

  double total = 0.0;
  for (int n = 0; n <= n_max; ++n) {
    const double lt = log_term(s, n);
    out.probs[n] = std::isfinite(lt) ? std::exp(lt) : 0.0;
    total += out.probs[n];
  }
  if (!(total > 0.0)) throw numeric_error("law mass under the cutoff is zero");

  double tail = 1.0 - total;
  if (tail < 0.0) tail = 0.0;  // rounding can push the partial sum past 1
  out.truncation_loss = tail;
  if (tail > 1e-6) {
    std::ostringstream msg;
    msg << s.label() << ": cutoff " << n_max << " discards tail mass " << tail;
    emit_warning(msg.str());
  }
  for (double& v : out.probs) v /= total;
  return out;
}

}  // namespace

void SourceSpec::validate() const {
  switch (kind) {
    case SourceKind::coherent:
    case SourceKind::thermal:
      if (!(mean >= 0.0) || !std::isfinite(mean)) throw std::invalid_argument("mean must be finite and >= 0");
      break;
    case SourceKind::multimode_thermal:
      if (!(mean >= 0.0) || !std::isfinite(mean)) throw std::invalid_argument("mean must be finite and >= 0");
      if (modes < 1) throw std::invalid_argument("multimode thermal needs modes >= 1");
      break;
    case SourceKind::subtracted_thermal:
      if (!(mean >= 0.0) || !std::isfinite(mean)) throw std::invalid_argument("mean must be finite and >= 0");
      if (subtractions < 0) throw std::invalid_argument("subtractions must be >= 0");
      break;
    case SourceKind::photon_cluster:
      if (photons < 1) throw std::invalid_argument("cluster needs photons >= 1");
      if (!(source_efficiency >= 0.0 && source_efficiency <= 1.0)) {
        throw std::invalid_argument("cluster efficiency must lie in [0, 1]");
      }
      break;
    default:
      throw config_error("unknown source kind");
  }
}

std::string SourceSpec::label() const {
  std::ostringstream os;
  switch (kind) {
    case SourceKind::coherent: os << "coherent(" << mean << ")"; break;
    case SourceKind::thermal: os << "thermal(" << mean << ")"; break;
    case SourceKind::multimode_thermal: os << "multimode(" << mean << ";" << modes << ")"; break;
    case SourceKind::subtracted_thermal: os << "subtracted(" << mean << ";" << subtractions << ")"; break;
    case SourceKind::photon_cluster: os << "cluster(" << photons << ";" << source_efficiency << ")"; break;
  }
  return os.str();
}

PhotonDistribution realize(const SourceSpec& spec, int n_max) {
  spec.validate();
  if (spec.kind == SourceKind::photon_cluster && n_max < spec.photons) {
    throw std::invalid_argument("cluster cutoff below the cluster size");
  }
  return realize_law(spec, n_max);
}

PhotonDistribution coherent(double mean, int n_max) {
  return realize({.kind = SourceKind::coherent, .mean = mean}, n_max);
}

PhotonDistribution thermal(double mean, int n_max) {
  return realize({.kind = SourceKind::thermal, .mean = mean}, n_max);
}

PhotonDistribution multimode_thermal(double mean, int modes, int n_max) {
  return realize({.kind = SourceKind::multimode_thermal, .mean = mean, .modes = modes}, n_max);
}

PhotonDistribution subtracted_thermal(double mean, int subtractions, int n_max) {
  return realize({.kind = SourceKind::subtracted_thermal, .mean = mean, .subtractions = subtractions},
                 n_max);
}

PhotonDistribution photon_cluster(int photons, double efficiency, int n_max) {
  return realize({.kind = SourceKind::photon_cluster, .photons = photons, .source_efficiency = efficiency},
                 n_max);
}

PhotonDistribution apply_loss(const PhotonDistribution& p, double transmission) {
  if (!(transmission >= 0.0 && transmission <= 1.0)) {
    throw std::invalid_argument("transmission must lie in [0, 1]");
  }
  if (transmission == 1.0) return p;
  if (transmission == 0.0) {
    PhotonDistribution out;
    out.probs.assign(p.probs.size(), 0.0);
    out.probs[0] = 1.0;
    out.truncation_loss = p.truncation_loss;
    return out;
  }

  const int n_max = p.cutoff();
  PhotonDistribution out;
  out.probs.assign(n_max + 1, 0.0);
  out.truncation_loss = p.truncation_loss;
  const double lt = std::log(transmission);
  const double lr = std::log1p(-transmission);
  for (int n = 0; n <= n_max; ++n) {
    if (p.probs[n] == 0.0) continue;
    const double lbase = std::log(p.probs[n]) + std::lgamma(n + 1.0);
    for (int k = 0; k <= n; ++k) {
      out.probs[k] += std::exp(lbase - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
                               k * lt + (n - k) * lr);
    }
  }
  out.normalize();  // thinning preserves mass; rounding only
  return out;
}

int default_cutoff(const SourceSpec& spec, double tail, int floor_n) {
  spec.validate();
  if (spec.kind == SourceKind::photon_cluster) return std::max(floor_n, spec.photons);
  if (spec.mean == 0.0) return floor_n;

  constexpr int kHardCap = 100'000;
  double total = 0.0;
  for (int n = 0; n <= kHardCap; ++n) {
    total += std::exp(log_term(spec, n));
    if (1.0 - total < tail) return std::max(floor_n, n);
  }
  throw std::invalid_argument("cutoff search exceeded hard cap; parameters out of range");
}

WarningHandler set_warning_handler(WarningHandler handler) {
  return g_warning_handler.exchange(handler);
}

}  // namespace pnr
