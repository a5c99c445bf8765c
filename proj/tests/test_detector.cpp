#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pnr/detector.hpp"
#include "pnr/diagnostics.hpp"
#include "pnr/errors.hpp"
#include "pnr/sources.hpp"
#include "test_support.hpp"

using namespace pnr;

namespace {

/// Exhaustive oracle for the click response: enumerate every survival pattern
/// of the n photons and every assignment of survivors to channels.
double enumerated_response(int channels, double efficiency, int m, int n) {
  double prob = 0.0;
  for (unsigned survivors = 0; survivors < (1u << n); ++survivors) {
    int k = 0;
    for (int i = 0; i < n; ++i) k += (survivors >> i) & 1;
    const double weight =
        std::pow(efficiency, k) * std::pow(1.0 - efficiency, n - k);
    if (weight == 0.0) continue;

    long long hits = 0, total = 0;
    std::vector<int> assign(static_cast<std::size_t>(k), 0);
    while (true) {
      unsigned occupied = 0;
      for (int c : assign) occupied |= 1u << c;
      int distinct = 0;
      for (int c = 0; c < channels; ++c) distinct += (occupied >> c) & 1;
      ++total;
      if (distinct == m) ++hits;

      int pos = k - 1;
      while (pos >= 0 && assign[pos] == channels - 1) assign[pos--] = 0;
      if (pos < 0) break;
      ++assign[pos];
    }
    prob += weight * static_cast<double>(hits) / static_cast<double>(total);
  }
  return prob;
}

ClickDistribution probabilities_of(std::vector<double> values) {
  ClickDistribution c;
  c.values = std::move(values);
  c.mode = ClickMode::probabilities;
  return c;
}

}  // namespace

TEST_CASE("detector configuration rejects out-of-range parameters") {
  CHECK_THROWS_AS((DetectorConfig{0, 0.5}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((DetectorConfig{4, 0.0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((DetectorConfig{4, 1.5}).validate(), std::invalid_argument);
  CHECK_NOTHROW((DetectorConfig{1, 1.0}).validate());
}

TEST_CASE("zero-click row is the pure loss probability") {
  ResponseMatrix C = response_matrix({10, 0.5}, 20);
  for (int n = 0; n <= 20; ++n) {
    CHECK(C(0, n) == doctest::Approx(std::pow(0.5, n)).epsilon(1e-12));
  }
  CHECK(C(0, 2) == doctest::Approx(0.25).epsilon(1e-13));
}

TEST_CASE("two photons on two lossless channels collide half the time") {
  ResponseMatrix C = response_matrix({2, 1.0}, 4);
  CHECK(C(1, 2) == doctest::Approx(0.5).epsilon(1e-13));
  CHECK(C(2, 2) == doctest::Approx(0.5).epsilon(1e-13));
}

TEST_CASE("columns are stochastic across the whole configuration grid") {
  for (int channels : {1, 2, 5, 10, 16}) {
    for (double efficiency : {0.1, 0.5, 0.65, 1.0}) {
      ResponseMatrix C = response_matrix({channels, efficiency}, 60);
      for (int n = 0; n <= 60; ++n) {
        double sum = 0.0;
        for (int m = 0; m <= channels; ++m) {
          const double entry = C(m, n);
          REQUIRE(entry >= 0.0);
          REQUIRE(entry <= 1.0);
          if (m > n) REQUIRE(entry == 0.0);
          sum += entry;
        }
        REQUIRE(std::abs(sum - 1.0) <= 1e-10);
      }
    }
  }
}

TEST_CASE("occupancy recurrence agrees with the exhaustive enumeration") {
  for (double efficiency : {0.3, 1.0}) {
    ResponseMatrix C = response_matrix({3, efficiency}, 5);
    for (int n = 0; n <= 5; ++n) {
      for (int m = 0; m <= 3; ++m) {
        CHECK(std::abs(C(m, n) - enumerated_response(3, efficiency, m, n)) < 1e-12);
      }
    }
  }
}

TEST_CASE("occupancy recurrence agrees with the closed-form construction") {
  for (int channels : {1, 2, 5, 10}) {
    ResponseMatrix a = response_matrix({channels, 0.5}, 30);
    ResponseMatrix b = response_matrix_closed_form({channels, 0.5}, 30);
    double worst = 0.0;
    for (int m = 0; m <= channels; ++m) {
      for (int n = 0; n <= 30; ++n) worst = std::max(worst, std::abs(a(m, n) - b(m, n)));
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("saturated diagonal follows the falling-factorial fast path") {
  const int channels = 10;
  const double efficiency = 0.5;
  ResponseMatrix C = response_matrix({channels, efficiency}, 20);
  double falling = 1.0;
  for (int n = 1; n <= channels; ++n) {
    falling *= channels - n + 1;
    const double expected = std::pow(efficiency / channels, n) * falling;
    CHECK(C(n, n) == doctest::Approx(expected).epsilon(1e-12));
  }
  // More clicks than channels is impossible: the response has no such row.
  CHECK(C.rows() == channels + 1);
  CHECK(C(channels, channels) > 0.0);
}

TEST_CASE("response matches the frozen 10-channel table") {
  const auto rows = testsup::load_rows(testsup::data_path("det_m10_eta05_n50.csv"));
  ResponseMatrix C = response_matrix({10, 0.5}, 50);
  REQUIRE(static_cast<int>(rows.size()) == C.rows());
  double worst = 0.0;
  for (int m = 0; m <= 10; ++m) {
    REQUIRE(static_cast<int>(rows[m].size()) == C.cols());
    for (int n = 0; n <= 50; ++n) worst = std::max(worst, std::abs(C(m, n) - rows[m][n]));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("forward model: single photon, vacuum, frozen coherent clicks") {
  set_warning_handler(nullptr);
  ResponseMatrix C = response_matrix({10, 0.5}, 50);

  PhotonDistribution single;
  single.probs.assign(51, 0.0);
  single.probs[1] = 1.0;
  ClickDistribution c1 = forward(C, single);
  CHECK(c1.values[0] == doctest::Approx(0.5).epsilon(1e-13));
  CHECK(c1.values[1] == doctest::Approx(0.5).epsilon(1e-13));
  CHECK(c1.values[2] == 0.0);

  PhotonDistribution vac;
  vac.probs.assign(51, 0.0);
  vac.probs[0] = 1.0;
  CHECK(forward(C, vac).values[0] == doctest::Approx(1.0).epsilon(1e-13));

  const auto expected = testsup::load_column(testsup::data_path("forward_reference.csv"));
  ClickDistribution c = forward(C, coherent(10.0, 50));
  REQUIRE(c.values.size() == expected.size());
  CHECK(testsup::max_abs_diff(c.values, expected) < 1e-9);
  double sum = 0.0;
  for (double v : c.values) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("forward model rejects mismatched dimensions") {
  ResponseMatrix C = response_matrix({10, 0.5}, 50);
  PhotonDistribution p = coherent(1.0, 20);
  CHECK_THROWS_AS(forward(C, p), dimension_error);
}

TEST_CASE("multinomial sampling: degenerate draws and determinism") {
  ClickDistribution c = probabilities_of({0.25, 0.5, 0.25});

  ClickDistribution one = sample_clicks(c, 1, 7);
  double total = 0.0;
  int nonzero = 0;
  for (double v : one.values) {
    total += v;
    nonzero += v != 0.0;
  }
  CHECK(total == 1.0);
  CHECK(nonzero == 1);
  CHECK(one.mode == ClickMode::counts);
  CHECK(one.runs == 1);

  ClickDistribution all_zero = sample_clicks(probabilities_of({1.0, 0.0, 0.0}), 500, 3);
  CHECK(all_zero.values[0] == 500.0);
  CHECK(all_zero.values[1] == 0.0);

  ClickDistribution a = sample_clicks(c, 10000, 42);
  ClickDistribution b = sample_clicks(c, 10000, 42);
  ClickDistribution other = sample_clicks(c, 10000, 43);
  CHECK(a.values == b.values);
  CHECK(a.values != other.values);

  CHECK_THROWS_AS(sample_clicks(c, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_clicks(a, 10, 1), std::invalid_argument);  // counts mode input
}

TEST_CASE("sampled frequencies sit inside the per-bin binomial band") {
  set_warning_handler(nullptr);
  ResponseMatrix C = response_matrix({10, 0.5}, 50);
  ClickDistribution c = forward(C, coherent(10.0, 50));
  const std::uint64_t runs = 1000000;
  ClickDistribution counts = sample_clicks(c, runs, 2024);
  double sum = 0.0;
  for (double v : counts.values) sum += v;
  CHECK(sum == static_cast<double>(runs));

  ClickDistribution freq = counts.as_probabilities();
  for (std::size_t m = 0; m < c.values.size(); ++m) {
    const double band = 5.0 * std::sqrt(c.values[m] * (1.0 - c.values[m]) / runs);
    CHECK(std::abs(freq.values[m] - c.values[m]) <= band + 1e-12);
  }
}

TEST_CASE("microscopic simulation: vacuum, collision rate, determinism") {
  PhotonDistribution vac;
  vac.probs = {1.0};
  ClickDistribution zero = simulate_microscopic(vac, {10, 0.5}, 2000, 5);
  CHECK(zero.values[0] == 2000.0);

  PhotonDistribution two;
  two.probs = {0.0, 0.0, 1.0};
  const std::uint64_t runs = 400000;
  ClickDistribution c2 = simulate_microscopic(two, {2, 1.0}, runs, 11);
  const double f2 = c2.values[2] / runs;
  CHECK(std::abs(f2 - 0.5) < 5.0 * std::sqrt(0.25 / runs));

  ClickDistribution a = simulate_microscopic(two, {2, 1.0}, 5000, 9);
  ClickDistribution b = simulate_microscopic(two, {2, 1.0}, 5000, 9);
  CHECK(a.values == b.values);
}

TEST_CASE("microscopic histogram is identical for any thread count") {
  set_warning_handler(nullptr);
  PhotonDistribution p = thermal(3.0, 60);
  ClickDistribution serial = simulate_microscopic_serial(p, {10, 0.5}, 60000, 123);
  for (int threads : {0, 1, 2, 5}) {
    ClickDistribution par = simulate_microscopic(p, {10, 0.5}, 60000, 123, threads);
    CHECK(par.values == serial.values);
    CHECK(par.runs == serial.runs);
  }
}

TEST_CASE("microscopic frequencies converge to the analytic forward model") {
  set_warning_handler(nullptr);
  PhotonDistribution p = thermal(5.0, 200);
  ResponseMatrix C = response_matrix({10, 0.5}, 200);
  ClickDistribution exact = forward(C, p);
  for (std::uint64_t seed : {1ULL, 2ULL}) {
    ClickDistribution sim = simulate_microscopic(p, {10, 0.5}, 1000000, seed);
    CHECK(tvd(sim.as_probabilities().values, exact.values) < 5e-3);
  }
}

TEST_CASE("finite channel counts lose clicks to collisions") {
  set_warning_handler(nullptr);
  PhotonDistribution p = thermal(5.0, 200);
  ClickDistribution c = forward(response_matrix({10, 0.5}, 200), p);
  double mean_clicks = 0.0;
  for (std::size_t m = 0; m < c.values.size(); ++m) mean_clicks += m * c.values[m];
  CHECK(mean_clicks < 0.5 * p.mean());

  // With many channels the loss vanishes.
  for (const PhotonDistribution& q : {coherent(2.0, 60), thermal(1.0, 120)}) {
    ClickDistribution wide = forward(response_matrix({100, 0.5}, q.cutoff()), q);
    double mean_wide = 0.0;
    for (std::size_t m = 0; m < wide.values.size(); ++m) mean_wide += m * wide.values[m];
    CHECK(mean_wide > 0.99 * 0.5 * q.mean());
    CHECK(mean_wide < 0.5 * q.mean());
  }
}

TEST_CASE("click histograms validate their declared mode") {
  ClickDistribution bad = probabilities_of({0.5, 0.4});
  CHECK_THROWS_AS(bad.validate(), numeric_error);

  ClickDistribution counts;
  counts.values = {3.0, 7.0};
  counts.mode = ClickMode::counts;
  counts.runs = 10;
  CHECK_NOTHROW(counts.validate());
  counts.runs = 11;
  CHECK_THROWS_AS(counts.validate(), numeric_error);

  ClickDistribution freq = counts.as_probabilities();
  CHECK(freq.mode == ClickMode::probabilities);
  CHECK(freq.values[1] == doctest::Approx(0.7).epsilon(1e-14));
}
