#include "pnr/experiments.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pnr/diagnostics.hpp"
#include "pnr/errors.hpp"
#include "pnr/io.hpp"
#include "pnr/rng.hpp"
#include "pnr/version.hpp"

namespace pnr {

namespace {

using nlohmann::json;

Cell ci(long long v) { return Cell(static_cast<std::int64_t>(v)); }
Cell cd(double v) { return Cell(v); }
Cell cs(std::string v) { return Cell(std::move(v)); }
/// Seeds are 64-bit unsigned; kept as decimal strings so they survive CSV
/// and JSON round-trips unmangled.
Cell cseed(std::uint64_t v) { return Cell(std::to_string(v)); }

double vec_mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

/// Mean over finite entries only; NaN when none are finite.
double vec_mean_finite(const std::vector<double>& v) {
  double acc = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (std::isfinite(x)) {
      acc += x;
      ++n;
    }
  }
  return n ? acc / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

double vec_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = vec_mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double vec_median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Least-squares slope of y against x.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = vec_mean(x);
  const double my = vec_mean(y);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    den += (x[i] - mx) * (x[i] - mx);
  }
  return den > 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
}

/// Truth realized once per source: the photon law at a cutoff wide enough
/// for simulation, and its exact click statistics under the detector.
struct Truth {
  SourceSpec spec;
  std::string label;
  PhotonDistribution photons;
  ClickDistribution clicks_exact;
};

int simulation_cutoff(const SourceSpec& spec, int retrieval_n_max) {
  return std::max(retrieval_n_max, default_cutoff(spec, 1e-12, retrieval_n_max));
}

std::vector<Truth> build_truths(const ExperimentConfig& cfg) {
  std::vector<Truth> out;
  out.reserve(cfg.sources.size());
  for (const auto& spec : cfg.sources) {
    Truth t;
    t.spec = spec;
    t.label = spec.label();
    t.photons = realize(spec, simulation_cutoff(spec, cfg.retrieval.n_max));
    const ResponseMatrix rsp = response_matrix(cfg.detector, t.photons.cutoff());
    t.clicks_exact = forward(rsp, t.photons);
    out.push_back(std::move(t));
  }
  return out;
}

/// Runs body(i) for i in [0, count), fanned out across OpenMP threads unless
/// threads == 1. The first exception is rethrown after the region completes,
/// so rows keep their task-indexed slots.
template <typename Body>
void for_each_task(int count, int threads, Body&& body) {
#ifdef _OPENMP
  if (threads != 1) {
    const int team = threads > 0 ? threads : omp_get_max_threads();
    std::exception_ptr first_error = nullptr;
#pragma omp parallel for schedule(dynamic) num_threads(team)
    for (int i = 0; i < count; ++i) {
      try {
        body(i);
      } catch (...) {
#pragma omp critical(pnr_task_error)
        if (!first_error) first_error = std::current_exception();
      }
    }
    if (first_error) std::rethrow_exception(first_error);
    return;
  }
#else
  (void)threads;
#endif
  for (int i = 0; i < count; ++i) body(i);
}

std::string distribution_csv(const std::vector<double>& p) {
  std::string s = "n,p\n";
  for (std::size_t n = 0; n < p.size(); ++n) {
    s += std::to_string(n);
    s += ',';
    s += io::format_double(p[n]);
    s += '\n';
  }
  return s;
}

std::string trace_csv(const std::vector<std::array<double, 3>>& points) {
  std::string s = "iteration,distance,log_likelihood\n";
  for (const auto& row : points) {
    s += io::format_double(row[0]);
    s += ',';
    s += io::format_double(row[1]);
    s += ',';
    s += io::format_double(row[2]);
    s += '\n';
  }
  return s;
}

constexpr std::uint64_t kTagSingle = 0;
constexpr std::uint64_t kTagComparison = 1;
constexpr std::uint64_t kTagScaling = 2;
constexpr std::uint64_t kTagLambda = 3;
constexpr std::uint64_t kTagConvergence = 4;
constexpr std::uint64_t kTagOverfit = 5;
constexpr std::uint64_t kTagTable = 6;

/// Fills in per-kind defaults for fields the config left empty; the echoed
/// config.json records the result.
ExperimentConfig resolved(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  if (c.sources.empty()) c.sources = default_sources(c.kind);
  if (c.kind == ExperimentKind::scaling_study && c.runs_grid.empty()) {
    c.runs_grid = {1'000, 10'000, 100'000, 1'000'000, 10'000'000};
  }
  if (c.kind == ExperimentKind::lambda_sweep && c.lambda_grid.empty()) {
    c.lambda_grid = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  }
  if (c.kind == ExperimentKind::overfitting_study && c.epsilon_grid.empty()) {
    c.epsilon_grid = {1e-12, 1e-9, 1e-6};
  }
  return c;
}

}  // namespace

std::vector<SourceSpec> default_sources(ExperimentKind kind) {
  using K = SourceKind;
  auto coh = [](double mu) { return SourceSpec{.kind = K::coherent, .mean = mu}; };
  auto th = [](double mu) { return SourceSpec{.kind = K::thermal, .mean = mu}; };
  auto mm = [](double mu, int modes) {
    return SourceSpec{.kind = K::multimode_thermal, .mean = mu, .modes = modes};
  };
  auto sub = [](double mu, int subs) {
    return SourceSpec{.kind = K::subtracted_thermal, .mean = mu, .subtractions = subs};
  };
  auto clu = [](int n, double eta) {
    return SourceSpec{.kind = K::photon_cluster, .photons = n, .source_efficiency = eta};
  };
  switch (kind) {
    case ExperimentKind::single_retrieval:
      return {th(4.93)};
    case ExperimentKind::method_comparison: {
      std::vector<SourceSpec> roster = {coh(1.0),     coh(2.5),    coh(4.95),  coh(10.0),
                                        coh(20.0),    th(1.0),     th(4.93),   th(5.0),
                                        mm(5.0, 2),   mm(5.0, 4),  mm(5.0, 10), mm(10.0, 4),
                                        sub(5.77, 1), sub(5.77, 2), sub(5.77, 3), sub(8.0, 2)};
      for (int n = 1; n <= 9; ++n) roster.push_back(clu(n, 0.55));
      return roster;
    }
    case ExperimentKind::scaling_study:
      return {coh(10.0), th(5.0), clu(1, 0.55), clu(9, 0.55)};
    case ExperimentKind::lambda_sweep:
      return {coh(5.0), th(2.0), clu(1, 0.55), mm(2.0, 2)};
    case ExperimentKind::convergence_study:
      return {coh(4.95), th(4.93), sub(5.77, 2), clu(1, 0.55)};
    case ExperimentKind::overfitting_study:
      return {coh(4.95)};
    case ExperimentKind::table_report:
      return {coh(4.95), th(4.93), sub(5.77, 2), clu(1, 0.55), clu(9, 0.55)};
  }
  return {};
}

ExperimentResult run_single_retrieval(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = resolved(raw);
  const auto truths = build_truths(cfg);
  const ResponseMatrix rsp = response_matrix(cfg.detector, cfg.retrieval.n_max);
  const int S = static_cast<int>(truths.size());
  const int T = cfg.trials;

  ExperimentResult res;
  res.columns = {"source",         "trial",    "algorithm", "runs",     "seed",
                 "iterations",     "stop_reason", "final_distance", "fidelity", "tvd",
                 "mean_estimate",  "g2_estimate", "mean_truth", "g2_truth"};
  res.rows.resize(static_cast<std::size_t>(S) * T);
  std::vector<PhotonDistribution> first_estimates(S);

  for_each_task(S * T, cfg.threads, [&](int task) {
    const int s = task / T;
    const int t = task % T;
    const Truth& tr = truths[s];
    const std::uint64_t seed = rng::derive(cfg.seed, {kTagSingle, static_cast<std::uint64_t>(s),
                                                      static_cast<std::uint64_t>(t)});
    const ClickDistribution clicks = sample_clicks(tr.clicks_exact, cfg.runs, seed);
    const RetrievalReport rep = retrieve(clicks, rsp, cfg.retrieval);
    const DiagnosticsBundle est = diagnose(rep.estimate.probs, tr.photons.probs);
    const DiagnosticsBundle tru = diagnose(tr.photons.probs);
    if (t == 0) first_estimates[s] = rep.estimate;
    res.rows[task] = {cs(tr.label),
                      ci(t),
                      cs(algorithm_name(cfg.retrieval.algorithm)),
                      ci(static_cast<long long>(cfg.runs)),
                      cseed(seed),
                      ci(rep.iterations),
                      cs(io::stop_reason_name(rep.stop_reason)),
                      cd(rep.final_distance),
                      cd(est.fidelity.value()),
                      cd(est.tvd.value()),
                      cd(est.mean),
                      cd(est.g2),
                      cd(tru.mean),
                      cd(tru.g2)};
  });

  json per_source;
  for (int s = 0; s < S; ++s) {
    std::vector<double> fids, tvs, iters;
    for (int t = 0; t < T; ++t) {
      const auto& row = res.rows[static_cast<std::size_t>(s) * T + t];
      fids.push_back(std::get<double>(row[8]));
      tvs.push_back(std::get<double>(row[9]));
      iters.push_back(static_cast<double>(std::get<std::int64_t>(row[5])));
    }
    per_source[truths[s].label] = {{"fidelity_mean", vec_mean(fids)},
                                   {"fidelity_std", vec_std(fids)},
                                   {"tvd_mean", vec_mean(tvs)},
                                   {"tvd_std", vec_std(tvs)},
                                   {"iterations_mean", vec_mean(iters)}};
    res.extra_files.emplace_back("estimate_" + truths[s].label + ".csv",
                                 distribution_csv(first_estimates[s].probs));
    res.extra_files.emplace_back("truth_" + truths[s].label + ".csv",
                                 distribution_csv(truths[s].photons.probs));
  }
  res.summary = {{"per_source", per_source}};
  return res;
}

ExperimentResult run_method_comparison(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = resolved(raw);
  const auto truths = build_truths(cfg);
  const ResponseMatrix rsp = response_matrix(cfg.detector, cfg.retrieval.n_max);
  const int S = static_cast<int>(truths.size());
  const int T = cfg.trials;
  const Algorithm methods[] = {Algorithm::direct_inverse, Algorithm::em, Algorithm::eme};

  ExperimentResult res;
  res.columns = {"source", "trial", "method",   "runs", "seed",
                 "iterations", "stop_reason", "fidelity", "tvd",  "min_entry"};
  res.rows.resize(static_cast<std::size_t>(S) * T * 3);

  for_each_task(S * T, cfg.threads, [&](int task) {
    const int s = task / T;
    const int t = task % T;
    const Truth& tr = truths[s];
    const std::uint64_t seed = rng::derive(cfg.seed, {kTagComparison, static_cast<std::uint64_t>(s),
                                                      static_cast<std::uint64_t>(t)});
    const ClickDistribution clicks = sample_clicks(tr.clicks_exact, cfg.runs, seed);
    for (int mi = 0; mi < 3; ++mi) {
      RetrievalSettings st = cfg.retrieval;
      st.algorithm = methods[mi];
      // The plain iteration drifts into the noise if run to the regularized
      // method's stopping distance, so it gets its own.
      if (st.algorithm == Algorithm::em) st.epsilon = cfg.em_epsilon;
      const RetrievalReport rep = retrieve(clicks, rsp, st);
      const double fid = fidelity(rep.estimate.probs, tr.photons.probs);
      const double tv = tvd(rep.estimate.probs, tr.photons.probs);
      const double lo = *std::min_element(rep.estimate.probs.begin(), rep.estimate.probs.end());
      res.rows[static_cast<std::size_t>(task) * 3 + mi] = {cs(tr.label),
                                                           ci(t),
                                                           cs(algorithm_name(methods[mi])),
                                                           ci(static_cast<long long>(cfg.runs)),
                                                           cseed(seed),
                                                           ci(rep.iterations),
                                                           cs(io::stop_reason_name(rep.stop_reason)),
                                                           cd(fid),
                                                           cd(tv),
                                                           cd(lo)};
    }
  });

  json per_method;
  json per_source;
  double em_tvd_mean = 0.0, eme_tvd_mean = 0.0;
  for (int mi = 0; mi < 3; ++mi) {
    std::vector<double> fids, tvs, iters, lows;
    for (int task = 0; task < S * T; ++task) {
      const auto& row = res.rows[static_cast<std::size_t>(task) * 3 + mi];
      fids.push_back(std::get<double>(row[7]));
      tvs.push_back(std::get<double>(row[8]));
      iters.push_back(static_cast<double>(std::get<std::int64_t>(row[5])));
      lows.push_back(std::get<double>(row[9]));
    }
    json entry = {{"fidelity_mean", vec_mean_finite(fids)},
                  {"fidelity_std", vec_std(fids)},
                  {"tvd_mean", vec_mean(tvs)},
                  {"tvd_std", vec_std(tvs)},
                  {"iterations_mean", vec_mean(iters)}};
    if (methods[mi] == Algorithm::direct_inverse) {
      int negative = 0;
      for (double lo : lows) negative += lo < 0.0;
      entry["negative_fraction"] = static_cast<double>(negative) / lows.size();
      entry.erase("fidelity_std");
    }
    if (methods[mi] == Algorithm::em) em_tvd_mean = vec_mean(tvs);
    if (methods[mi] == Algorithm::eme) eme_tvd_mean = vec_mean(tvs);
    per_method[algorithm_name(methods[mi])] = entry;
  }
  for (int s = 0; s < S; ++s) {
    json entry;
    for (int mi = 0; mi < 3; ++mi) {
      std::vector<double> fids, tvs;
      for (int t = 0; t < T; ++t) {
        const auto& row = res.rows[(static_cast<std::size_t>(s) * T + t) * 3 + mi];
        fids.push_back(std::get<double>(row[7]));
        tvs.push_back(std::get<double>(row[8]));
      }
      entry[algorithm_name(methods[mi])] = {{"fidelity_mean", vec_mean_finite(fids)},
                                            {"tvd_mean", vec_mean(tvs)}};
    }
    per_source[truths[s].label] = entry;
  }
  res.summary = {{"per_method", per_method},
                 {"per_source", per_source},
                 {"tvd_ratio_em_over_eme", em_tvd_mean / eme_tvd_mean}};
  return res;
}

ExperimentResult run_scaling_study(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = resolved(raw);
  const auto truths = build_truths(cfg);
  const ResponseMatrix rsp = response_matrix(cfg.detector, cfg.retrieval.n_max);
  const int S = static_cast<int>(truths.size());
  const int G = static_cast<int>(cfg.runs_grid.size());
  const int T = cfg.trials;

  ExperimentResult res;
  res.columns = {"source", "runs", "trial", "seed", "iterations", "fidelity", "tvd"};
  res.rows.resize(static_cast<std::size_t>(S) * G * T);

  for_each_task(S * G * T, cfg.threads, [&](int task) {
    const int s = task / (G * T);
    const int g = (task / T) % G;
    const int t = task % T;
    const Truth& tr = truths[s];
    const std::uint64_t runs = cfg.runs_grid[g];
    const std::uint64_t seed =
        rng::derive(cfg.seed, {kTagScaling, static_cast<std::uint64_t>(s),
                               static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(t)});
    const ClickDistribution clicks = sample_clicks(tr.clicks_exact, runs, seed);
    const RetrievalReport rep = retrieve(clicks, rsp, cfg.retrieval);
    res.rows[task] = {cs(tr.label),
                      ci(static_cast<long long>(runs)),
                      ci(t),
                      cseed(seed),
                      ci(rep.iterations),
                      cd(fidelity(rep.estimate.probs, tr.photons.probs)),
                      cd(tvd(rep.estimate.probs, tr.photons.probs))};
  });

  json per_source;
  for (int s = 0; s < S; ++s) {
    std::vector<double> log_runs, log_median;
    json medians = json::array();
    for (int g = 0; g < G; ++g) {
      std::vector<double> tvs;
      for (int t = 0; t < T; ++t) {
        const auto& row = res.rows[(static_cast<std::size_t>(s) * G + g) * T + t];
        tvs.push_back(std::get<double>(row[6]));
      }
      const double med = vec_median(tvs);
      medians.push_back(med);
      log_runs.push_back(std::log10(static_cast<double>(cfg.runs_grid[g])));
      log_median.push_back(std::log10(med));
    }
    per_source[truths[s].label] = {{"runs", cfg.runs_grid},
                                   {"median_tvd", medians},
                                   {"slope", fit_slope(log_runs, log_median)}};
  }
  res.summary = {{"per_source", per_source}};
  return res;
}

ExperimentResult run_lambda_sweep(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = resolved(raw);
  const auto truths = build_truths(cfg);
  const ResponseMatrix rsp = response_matrix(cfg.detector, cfg.retrieval.n_max);
  const int S = static_cast<int>(truths.size());
  const int L = static_cast<int>(cfg.lambda_grid.size());
  const int T = cfg.trials;

  ExperimentResult res;
  res.columns = {"source", "lambda", "trial", "seed", "iterations", "fidelity", "tvd"};
  res.rows.resize(static_cast<std::size_t>(S) * T * L);

  // One histogram per (source, trial), analyzed at every regularization
  // weight: the sweep is paired.
  for_each_task(S * T, cfg.threads, [&](int task) {
    const int s = task / T;
    const int t = task % T;
    const Truth& tr = truths[s];
    const std::uint64_t seed = rng::derive(cfg.seed, {kTagLambda, static_cast<std::uint64_t>(s),
                                                      static_cast<std::uint64_t>(t)});
    const ClickDistribution clicks = sample_clicks(tr.clicks_exact, cfg.runs, seed);
    for (int l = 0; l < L; ++l) {
      RetrievalSettings st = cfg.retrieval;
      st.algorithm = Algorithm::eme;
      st.lambda = cfg.lambda_grid[l];
      const RetrievalReport rep = retrieve(clicks, rsp, st);
      res.rows[(static_cast<std::size_t>(s) * T + t) * L + l] = {
          cs(tr.label),
          cd(cfg.lambda_grid[l]),
          ci(t),
          cseed(seed),
          ci(rep.iterations),
          cd(fidelity(rep.estimate.probs, tr.photons.probs)),
          cd(tvd(rep.estimate.probs, tr.photons.probs))};
    }
  });

  json per_lambda;
  json per_source_lambda;
  json best_lambda_per_source;
  double best_lambda = cfg.lambda_grid.empty() ? 0.0 : cfg.lambda_grid[0];
  double best_tvd = std::numeric_limits<double>::infinity();
  std::vector<double> source_best(S, std::numeric_limits<double>::infinity());
  std::vector<double> source_best_lambda(S, 0.0);
  for (int l = 0; l < L; ++l) {
    std::vector<double> pooled;
    for (int s = 0; s < S; ++s) {
      std::vector<double> tvs;
      for (int t = 0; t < T; ++t) {
        const auto& row = res.rows[(static_cast<std::size_t>(s) * T + t) * L + l];
        tvs.push_back(std::get<double>(row[6]));
        pooled.push_back(std::get<double>(row[6]));
      }
      const double sm = vec_mean(tvs);
      per_source_lambda[truths[s].label][io::format_double(cfg.lambda_grid[l])] = {
          {"tvd_mean", sm}, {"tvd_std", vec_std(tvs)}};
      if (sm < source_best[s]) {
        source_best[s] = sm;
        source_best_lambda[s] = cfg.lambda_grid[l];
      }
    }
    const double m = vec_mean(pooled);
    per_lambda[io::format_double(cfg.lambda_grid[l])] = {{"tvd_mean", m},
                                                         {"tvd_std", vec_std(pooled)}};
    if (m < best_tvd) {
      best_tvd = m;
      best_lambda = cfg.lambda_grid[l];
    }
  }
  for (int s = 0; s < S; ++s) best_lambda_per_source[truths[s].label] = source_best_lambda[s];
  res.summary = {{"per_lambda", per_lambda},
                 {"per_source_lambda", per_source_lambda},
                 {"best_lambda", best_lambda},
                 {"best_lambda_per_source", best_lambda_per_source}};
  return res;
}

ExperimentResult run_convergence_study(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = resolved(raw);
  const auto truths = build_truths(cfg);
  const ResponseMatrix rsp = response_matrix(cfg.detector, cfg.retrieval.n_max);
  const int S = static_cast<int>(truths.size());
  const int T = cfg.trials;
  const Algorithm methods[] = {Algorithm::em, Algorithm::eme};

  ExperimentResult res;
  res.columns = {"source",    "trial",       "method",         "runs",     "seed",
                 "iterations", "stop_reason", "final_distance", "fidelity", "tvd",
                 "distance_increases_after_10"};
  res.rows.resize(static_cast<std::size_t>(S) * T * 2);
  std::vector<std::string> traces(res.rows.size());

  for_each_task(S * T, cfg.threads, [&](int task) {
    const int s = task / T;
    const int t = task % T;
    const Truth& tr = truths[s];
    const std::uint64_t seed = rng::derive(cfg.seed, {kTagConvergence, static_cast<std::uint64_t>(s),
                                                      static_cast<std::uint64_t>(t)});
    const ClickDistribution clicks = sample_clicks(tr.clicks_exact, cfg.runs, seed);
    for (int mi = 0; mi < 2; ++mi) {
      RetrievalSettings st = cfg.retrieval;
      st.algorithm = methods[mi];

      // Dense for the first thousand iterations, every thousandth afterwards.
      std::vector<std::array<double, 3>> points;
      long long increases = 0;
      double prev_dist = std::numeric_limits<double>::infinity();
      auto observer = [&](long long k, const std::vector<double>& p, double dist) {
        if (k > 10 && dist > prev_dist) ++increases;
        prev_dist = dist;
        if (k <= 1000 || k % 1000 == 0) {
          points.push_back({static_cast<double>(k), dist, log_likelihood(clicks, rsp, p)});
        }
        return true;
      };
      const RetrievalReport rep = (methods[mi] == Algorithm::em)
                                      ? em_retrieve(clicks, rsp, st, observer)
                                      : eme_retrieve(clicks, rsp, st, observer);
      if (points.empty() || points.back()[0] != static_cast<double>(rep.iterations)) {
        points.push_back({static_cast<double>(rep.iterations), rep.final_distance,
                          log_likelihood(clicks, rsp, rep.estimate.probs)});
      }
      const std::size_t slot = (static_cast<std::size_t>(s) * T + t) * 2 + mi;
      traces[slot] = trace_csv(points);
      res.rows[slot] = {cs(tr.label),
                        ci(t),
                        cs(algorithm_name(methods[mi])),
                        ci(static_cast<long long>(cfg.runs)),
                        cseed(seed),
                        ci(rep.iterations),
                        cs(io::stop_reason_name(rep.stop_reason)),
                        cd(rep.final_distance),
                        cd(fidelity(rep.estimate.probs, tr.photons.probs)),
                        cd(tvd(rep.estimate.probs, tr.photons.probs)),
                        ci(increases)};
    }
  });

  json per_source;
  bool all_monotone = true;
  for (int s = 0; s < S; ++s) {
    std::vector<double> em_iters, eme_iters;
    for (int t = 0; t < T; ++t) {
      const std::size_t base = (static_cast<std::size_t>(s) * T + t) * 2;
      em_iters.push_back(static_cast<double>(std::get<std::int64_t>(res.rows[base][5])));
      eme_iters.push_back(static_cast<double>(std::get<std::int64_t>(res.rows[base + 1][5])));
      all_monotone = all_monotone && std::get<std::int64_t>(res.rows[base][10]) == 0 &&
                     std::get<std::int64_t>(res.rows[base + 1][10]) == 0;
      for (int mi = 0; mi < 2; ++mi) {
        res.extra_files.emplace_back("trace_" + truths[s].label + "_" +
                                         algorithm_name(methods[mi]) + "_t" + std::to_string(t) +
                                         ".csv",
                                     std::move(traces[base + mi]));
      }
    }
    const double em_mean = vec_mean(em_iters);
    const double eme_mean = vec_mean(eme_iters);
    per_source[truths[s].label] = {
        {"em_iterations_mean", em_mean},
        {"eme_iterations_mean", eme_mean},
        {"iteration_ratio_eme_over_em",
         em_mean > 0 ? eme_mean / em_mean : std::numeric_limits<double>::quiet_NaN()}};
  }
  res.summary = {{"per_source", per_source}, {"all_traces_monotone_after_10", all_monotone}};
  return res;
}

ExperimentResult run_overfitting_study(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = resolved(raw);
  const auto truths = build_truths(cfg);
  const ResponseMatrix rsp = response_matrix(cfg.detector, cfg.retrieval.n_max);
  const int S = static_cast<int>(truths.size());
  const int T = cfg.trials;
  const Algorithm methods[] = {Algorithm::em, Algorithm::eme};

  // Loosest threshold first; the run continues to the tightest, snapshotting
  // the iterate the first time the inter-iterate distance crosses each level.
  std::vector<double> grid = cfg.epsilon_grid;
  std::sort(grid.begin(), grid.end(), std::greater<>());
  const int E = static_cast<int>(grid.size());

  ExperimentResult res;
  res.columns = {"source", "trial", "method", "epsilon", "seed",
                 "iterations", "stop_reason", "fidelity", "tvd", "click_tvd"};
  res.rows.resize(static_cast<std::size_t>(S) * T * 2 * E);

  for_each_task(S * T, cfg.threads, [&](int task) {
    const int s = task / T;
    const int t = task % T;
    const Truth& tr = truths[s];
    const std::uint64_t seed = rng::derive(cfg.seed, {kTagOverfit, static_cast<std::uint64_t>(s),
                                                      static_cast<std::uint64_t>(t)});
    const ClickDistribution clicks = sample_clicks(tr.clicks_exact, cfg.runs, seed);
    for (int mi = 0; mi < 2; ++mi) {
      RetrievalSettings st = cfg.retrieval;
      st.algorithm = methods[mi];
      st.epsilon = grid.back();

      struct Snapshot {
        long long iterations = 0;
        std::vector<double> estimate;
        bool reached = false;
      };
      std::vector<Snapshot> snaps(E);
      int next = 0;
      auto observer = [&](long long k, const std::vector<double>& p, double dist) {
        while (next < E - 1 && dist <= grid[next]) {
          snaps[next] = {k, p, true};
          ++next;
        }
        return true;
      };
      const RetrievalReport rep = (methods[mi] == Algorithm::em)
                                      ? em_retrieve(clicks, rsp, st, observer)
                                      : eme_retrieve(clicks, rsp, st, observer);
      snaps[E - 1] = {rep.iterations, rep.estimate.probs,
                      rep.stop_reason == StopReason::converged};
      // Levels never reached take the final iterate.
      for (int e = next; e < E - 1; ++e) snaps[e] = snaps[E - 1];

      const ClickDistribution freq = clicks.as_probabilities();
      for (int e = 0; e < E; ++e) {
        const char* reason = snaps[e].reached ? "converged" : "iteration_cap";
        PhotonDistribution snap_dist;
        snap_dist.probs = snaps[e].estimate;
        const ClickDistribution mapped = forward(rsp, snap_dist);
        res.rows[((static_cast<std::size_t>(s) * T + t) * 2 + mi) * E + e] = {
            cs(tr.label),
            ci(t),
            cs(algorithm_name(methods[mi])),
            cd(grid[e]),
            cseed(seed),
            ci(snaps[e].iterations),
            cs(reason),
            cd(fidelity(snaps[e].estimate, tr.photons.probs)),
            cd(tvd(snaps[e].estimate, tr.photons.probs)),
            cd(tvd(mapped.values, freq.values))};
      }
    }
  });

  json per_method;
  for (int mi = 0; mi < 2; ++mi) {
    json by_eps;
    std::vector<double> tight, loose;
    for (int e = 0; e < E; ++e) {
      std::vector<double> tvs;
      for (int s = 0; s < S; ++s) {
        for (int t = 0; t < T; ++t) {
          const auto& row = res.rows[((static_cast<std::size_t>(s) * T + t) * 2 + mi) * E + e];
          tvs.push_back(std::get<double>(row[8]));
        }
      }
      by_eps[io::format_double(grid[e])] = {{"tvd_mean", vec_mean(tvs)},
                                            {"tvd_std", vec_std(tvs)}};
      if (e == 0) loose = tvs;
      if (e == E - 1) tight = tvs;
    }
    per_method[algorithm_name(methods[mi])] = {
        {"tvd_by_epsilon", by_eps},
        {"tightest_over_loosest", vec_mean(tight) / vec_mean(loose)}};
  }
  res.summary = {{"per_method", per_method}};
  return res;
}

ExperimentResult run_table_report(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = resolved(raw);
  const auto truths = build_truths(cfg);
  const ResponseMatrix rsp = response_matrix(cfg.detector, cfg.retrieval.n_max);
  const int S = static_cast<int>(truths.size());

  const Algorithm methods[] = {Algorithm::em, Algorithm::eme};

  ExperimentResult res;
  res.columns = {"source",       "method",     "runs",        "seed",         "mean_truth",
                 "mean",         "mean_err",   "variance_truth", "variance",  "variance_err",
                 "g2_truth",     "g2",         "g2_err",      "q_truth",      "q",
                 "q_err",        "parity_truth", "parity",    "parity_err",
                 "wigner_origin_truth", "wigner_origin", "wigner_origin_err",
                 "fidelity",     "fidelity_err", "tvd",       "tvd_err"};
  res.rows.resize(static_cast<std::size_t>(S) * 2);

  // Bootstrap already fans its trials out across threads; the outer loop runs
  // serially. The same histogram and resampling seeds serve both methods, so
  // the comparison is paired.
  for (int s = 0; s < S; ++s) {
    const Truth& tr = truths[s];
    const std::uint64_t seed = rng::derive(cfg.seed, {kTagTable, static_cast<std::uint64_t>(s)});
    const ClickDistribution clicks = sample_clicks(tr.clicks_exact, cfg.runs, seed);
    const DiagnosticsBundle tru = diagnose(tr.photons.probs);
    for (int mi = 0; mi < 2; ++mi) {
      RetrievalSettings st = cfg.retrieval;
      st.algorithm = methods[mi];
      const RetrievalReport rep = retrieve(clicks, rsp, st);
      const DiagnosticsBundle est =
          bootstrap(clicks, rsp, st, cfg.bootstrap_trials,
                    rng::derive(cfg.seed, {kTagTable, static_cast<std::uint64_t>(s), 1}),
                    &tr.photons.probs, cfg.threads);
      const DiagnosticsSpread& err = est.uncertainty.value();
      const auto nanv = std::numeric_limits<double>::quiet_NaN();
      res.rows[static_cast<std::size_t>(s) * 2 + mi] = {cs(tr.label),
                                                        cs(algorithm_name(methods[mi])),
                                                        ci(static_cast<long long>(cfg.runs)),
                                                        cseed(seed),
                                                        cd(tru.mean),
                                                        cd(est.mean),
                                                        cd(err.mean),
                                                        cd(tru.variance),
                                                        cd(est.variance),
                                                        cd(err.variance),
                                                        cd(tru.g2),
                                                        cd(est.g2),
                                                        cd(err.g2),
                                                        cd(tru.mandel_q),
                                                        cd(est.mandel_q),
                                                        cd(err.mandel_q),
                                                        cd(tru.parity),
                                                        cd(est.parity),
                                                        cd(err.parity),
                                                        cd(tru.wigner_origin),
                                                        cd(est.wigner_origin),
                                                        cd(err.wigner_origin),
                                                        cd(est.fidelity.value_or(nanv)),
                                                        cd(err.fidelity.value_or(nanv)),
                                                        cd(est.tvd.value_or(nanv)),
                                                        cd(err.tvd.value_or(nanv))};
      res.extra_files.emplace_back(
          "estimate_" + tr.label + "_" + algorithm_name(methods[mi]) + ".csv",
          distribution_csv(rep.estimate.probs));
    }
    res.extra_files.emplace_back("truth_" + tr.label + ".csv",
                                 distribution_csv(tr.photons.probs));
  }

  json per_method;
  for (int mi = 0; mi < 2; ++mi) {
    std::vector<double> fids, tvs;
    for (int s = 0; s < S; ++s) {
      fids.push_back(std::get<double>(res.rows[static_cast<std::size_t>(s) * 2 + mi][22]));
      tvs.push_back(std::get<double>(res.rows[static_cast<std::size_t>(s) * 2 + mi][24]));
    }
    per_method[algorithm_name(methods[mi])] = {{"fidelity_mean", vec_mean(fids)},
                                               {"tvd_mean", vec_mean(tvs)}};
  }
  res.summary = {{"per_method", per_method}};
  return res;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult res;
  switch (cfg.kind) {
    case ExperimentKind::single_retrieval:
      res = run_single_retrieval(cfg);
      break;
    case ExperimentKind::method_comparison:
      res = run_method_comparison(cfg);
      break;
    case ExperimentKind::scaling_study:
      res = run_scaling_study(cfg);
      break;
    case ExperimentKind::lambda_sweep:
      res = run_lambda_sweep(cfg);
      break;
    case ExperimentKind::convergence_study:
      res = run_convergence_study(cfg);
      break;
    case ExperimentKind::overfitting_study:
      res = run_overfitting_study(cfg);
      break;
    case ExperimentKind::table_report:
      res = run_table_report(cfg);
      break;
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw parse_error("cannot open for writing: " + path.string());
  out << content;
}

std::string cell_text(const Cell& c) {
  if (std::holds_alternative<std::int64_t>(c)) return std::to_string(std::get<std::int64_t>(c));
  if (std::holds_alternative<double>(c)) return io::format_double(std::get<double>(c));
  return std::get<std::string>(c);
}

json cell_json(const Cell& c) {
  if (std::holds_alternative<std::int64_t>(c)) return std::get<std::int64_t>(c);
  if (std::holds_alternative<double>(c)) return std::get<double>(c);
  return std::get<std::string>(c);
}

}  // namespace

void write_experiment(const ExperimentResult& result, const ExperimentConfig& cfg,
                      const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  const ExperimentConfig echo = resolved(cfg);

  write_text(dir / "config.json", echo.to_json().dump(2) + "\n");

  std::string csv;
  for (std::size_t i = 0; i < result.columns.size(); ++i) {
    if (i) csv += ',';
    csv += result.columns[i];
  }
  csv += '\n';
  for (const auto& row : result.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) csv += ',';
      csv += cell_text(row[i]);
    }
    csv += '\n';
  }
  write_text(dir / "rows.csv", csv);

  json jrows = json::array();
  for (const auto& row : result.rows) {
    json jr = json::array();
    for (const auto& c : row) jr.push_back(cell_json(c));
    jrows.push_back(std::move(jr));
  }
  write_text(dir / "rows.json", json{{"columns", result.columns}, {"rows", jrows}}.dump(2) + "\n");

  write_text(dir / "summary.json", result.summary.dump(2) + "\n");

  std::vector<std::string> files = {"config.json", "rows.csv", "rows.json", "summary.json",
                                    "timing.log"};
  for (const auto& [name, content] : result.extra_files) {
    write_text(dir / name, content);
    files.push_back(name);
  }
  std::sort(files.begin(), files.end());
  json manifest = {{"schema_version", echo.schema_version},
                   {"version", kVersion},
                   {"kind", experiment_kind_name(echo.kind)},
                   {"master_seed", echo.seed},
                   {"row_count", result.rows.size()},
                   {"files", files}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  // The one file allowed to differ between replays.
  write_text(dir / "timing.log", "wall_seconds " + io::format_double(result.wall_seconds) + "\n");
}

}  // namespace pnr
