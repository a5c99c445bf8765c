#include "pnr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "pnr/errors.hpp"

namespace pnr {

void RetrievalSettings::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite and >= 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (n_max < 0) throw std::invalid_argument("n_max must be non-negative");
  if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  if (init == InitPolicy::custom && init_values.empty()) {
    throw std::invalid_argument("custom init requires init_values");
  }
}

namespace {

/// Normalized click frequencies; counts and probabilities enter the
/// iterations identically.
std::vector<double> normalized_data(const ClickDistribution& clicks, const ResponseMatrix& response) {
  clicks.validate();
  if (clicks.channels() != response.channels()) {
    throw dimension_error("click histogram length does not match response matrix rows");
  }
  std::vector<double> d = clicks.values;
  double total = 0.0;
  for (double v : d) total += v;
  for (double& v : d) v /= total;
  return d;
}

std::vector<double> initial_iterate(const RetrievalSettings& s, int cols) {
  if (s.init == InitPolicy::uniform) {
    return std::vector<double>(cols, 1.0 / cols);
  }
  if (static_cast<int>(s.init_values.size()) != cols) {
    throw dimension_error("init_values length does not match n_max + 1");
  }
  std::vector<double> p = s.init_values;
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("init_values must be non-negative");
    total += v;
  }
  if (!(total > 0.0)) throw std::invalid_argument("init_values must carry positive mass");
  for (double& v : p) v /= total;
  return p;
}

/// model = C p and image_n = p_n sum_m (d_m / model_m) C_mn — one EM image.
/// Throws when a bin with data mass has zero model mass (support mismatch).
void em_image(const ResponseMatrix& C, const std::vector<double>& d, const std::vector<double>& p,
              std::vector<double>& model, std::vector<double>& image) {
  const int rows = C.rows();
  const int cols = C.cols();
  for (int m = 0; m < rows; ++m) {
    const double* row = C.row(m);
    double acc = 0.0;
    for (int n = 0; n < cols; ++n) acc += row[n] * p[n];
    model[m] = acc;
  }
  std::fill(image.begin(), image.end(), 0.0);
  for (int m = 0; m < rows; ++m) {
    if (d[m] == 0.0) continue;
    if (!(model[m] > 0.0)) {
      throw numeric_error("click bin with data mass has zero model probability");
    }
    const double r = d[m] / model[m];
    const double* row = C.row(m);
    for (int n = 0; n < cols; ++n) image[n] += r * row[n];
  }
  for (int n = 0; n < cols; ++n) image[n] *= p[n];
}

double data_log_likelihood(const std::vector<double>& d, const std::vector<double>& model) {
  double ll = 0.0;
  for (std::size_t m = 0; m < d.size(); ++m) {
    if (d[m] > 0.0) ll += d[m] * std::log(model[m]);
  }
  return ll;
}

RetrievalReport iterate(const ClickDistribution& clicks, const ResponseMatrix& response,
                        const RetrievalSettings& settings, const IterationObserver& observer,
                        bool entropy_term) {
  settings.validate();
  if (settings.n_max != response.n_max()) {
    throw dimension_error("settings n_max does not match response matrix columns");
  }
  const std::vector<double> d = normalized_data(clicks, response);
  const int cols = response.cols();
  const double lambda = entropy_term ? settings.lambda : 0.0;

  RetrievalReport report;
  std::vector<double> p = initial_iterate(settings, cols);
  std::vector<double> next(cols), model(response.rows()), image(cols), logs;
  if (entropy_term) logs.resize(cols);

  if (settings.record_traces) {
    report.distance_trace.reserve(256);
    report.likelihood_trace.reserve(256);
  }

  report.stop_reason = StopReason::iteration_cap;
  for (long long k = 1; k <= settings.max_iterations; ++k) {
    em_image(response, d, p, model, entropy_term ? image : next);
    if (settings.record_traces) report.likelihood_trace.push_back(data_log_likelihood(d, model));

    if (entropy_term) {
      // image_n - lambda (ln p_n - S) p_n; entries with p_n = 0 contribute 0.
      double S = 0.0;
      for (int n = 0; n < cols; ++n) {
        if (p[n] > 0.0) {
          logs[n] = std::log(p[n]);
          S += p[n] * logs[n];
        } else {
          logs[n] = 0.0;
        }
      }
      for (int n = 0; n < cols; ++n) next[n] = image[n] - lambda * (logs[n] - S) * p[n];
      for (int n = 0; n < cols; ++n) {
        if (next[n] < 0.0) {
          next[n] = 0.0;
          ++report.clamp_events;
        }
      }
    }

    double total = 0.0;
    for (double v : next) total += v;
    if (!(total > 0.0) || !std::isfinite(total)) {
      throw numeric_error("iterate lost all mass; regularization weight too large");
    }
    double dist2 = 0.0;
    for (int n = 0; n < cols; ++n) {
      next[n] /= total;
      const double diff = next[n] - p[n];
      dist2 += diff * diff;
    }
    const double dist = std::sqrt(dist2);

    p.swap(next);
    report.iterations = k;
    report.final_distance = dist;
    if (settings.record_traces) report.distance_trace.push_back(dist);
    if (observer && !observer(k, p, dist)) {
      report.stop_reason = StopReason::halted;
      break;
    }
    if (dist <= settings.epsilon) {
      report.stop_reason = StopReason::converged;
      break;
    }
  }

  if (settings.record_traces) {
    // Close the likelihood trace with the final iterate.
    for (int m = 0; m < response.rows(); ++m) {
      const double* row = response.row(m);
      double acc = 0.0;
      for (int n = 0; n < cols; ++n) acc += row[n] * p[n];
      model[m] = acc;
    }
    report.likelihood_trace.push_back(data_log_likelihood(d, model));
  }

  report.estimate.probs = std::move(p);
  report.estimate.truncation_loss = 0.0;
  return report;
}

}  // namespace

std::vector<double> direct_inverse(const ClickDistribution& clicks, const ResponseMatrix& response) {
  const std::vector<double> d = normalized_data(clicks, response);
  const int rows = response.rows();
  const int cols = response.cols();

  Eigen::MatrixXd C(rows, cols);
  for (int m = 0; m < rows; ++m) {
    for (int n = 0; n < cols; ++n) C(m, n) = response(m, n);
  }
  Eigen::VectorXd b(rows);
  for (int m = 0; m < rows; ++m) b(m) = d[m];

  constexpr double kCutoff = 1e-12;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(C, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (rows == cols && sv(sv.size() - 1) <= kCutoff * sv(0)) {
    throw numeric_error("square response matrix is numerically singular");
  }
  svd.setThreshold(kCutoff);
  const Eigen::VectorXd x = svd.solve(b);

  return std::vector<double>(x.data(), x.data() + x.size());
}

RetrievalReport em_retrieve(const ClickDistribution& clicks, const ResponseMatrix& response,
                            const RetrievalSettings& settings, const IterationObserver& observer) {
  return iterate(clicks, response, settings, observer, /*entropy_term=*/false);
}

RetrievalReport eme_retrieve(const ClickDistribution& clicks, const ResponseMatrix& response,
                             const RetrievalSettings& settings, const IterationObserver& observer) {
  return iterate(clicks, response, settings, observer, /*entropy_term=*/true);
}

RetrievalReport retrieve(const ClickDistribution& clicks, const ResponseMatrix& response,
                         const RetrievalSettings& settings) {
  switch (settings.algorithm) {
    case Algorithm::em:
      return em_retrieve(clicks, response, settings);
    case Algorithm::eme:
      return eme_retrieve(clicks, response, settings);
    case Algorithm::direct_inverse: {
      RetrievalReport report;
      report.estimate.probs = direct_inverse(clicks, response);
      report.iterations = 0;
      report.stop_reason = StopReason::converged;
      return report;
    }
  }
  throw config_error("unknown retrieval algorithm");
}

double log_likelihood(const ClickDistribution& clicks, const ResponseMatrix& response,
                      const std::vector<double>& p) {
  const std::vector<double> d = normalized_data(clicks, response);
  if (static_cast<int>(p.size()) != response.cols()) {
    throw dimension_error("estimate length does not match response matrix columns");
  }
  double ll = 0.0;
  for (int m = 0; m < response.rows(); ++m) {
    if (d[m] == 0.0) continue;
    const double* row = response.row(m);
    double acc = 0.0;
    for (int n = 0; n < response.cols(); ++n) acc += row[n] * p[n];
    if (!(acc > 0.0)) throw numeric_error("click bin with data mass has zero model probability");
    ll += d[m] * std::log(acc);
  }
  return ll;
}

double fixed_point_residual(const std::vector<double>& p, const ClickDistribution& clicks,
                            const ResponseMatrix& response) {
  if (static_cast<int>(p.size()) != response.cols()) {
    throw dimension_error("estimate length does not match response matrix columns");
  }
  const std::vector<double> d = normalized_data(clicks, response);
  std::vector<double> model(response.rows());
  std::vector<double> image(response.cols());
  em_image(response, d, p, model, image);
  double worst = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) worst = std::max(worst, std::abs(image[n] - p[n]));
  return worst;
}

}  // namespace pnr
