// Compares the OpenMP kernels against their serial reference implementations:
// same seeds, identical outputs required, wall times reported.

#include <chrono>
#include <cstdint>
#include <iostream>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pnr/detector.hpp"
#include "pnr/diagnostics.hpp"
#include "pnr/retrieval.hpp"
#include "pnr/sources.hpp"

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

bool identical(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  const std::uint64_t runs = argc > 1 ? std::stoull(argv[1]) : 2'000'000;
  const std::uint64_t seed = 7;

  const pnr::DetectorConfig det{10, 0.5};
  const pnr::PhotonDistribution p = pnr::thermal(4.93, 60);

#ifdef _OPENMP
  const int threads = omp_get_max_threads();
#else
  const int threads = 1;
#endif
  std::cout << "microscopic simulation, thermal(4.93), M=10, eta=0.5, R=" << runs << "\n";

  auto t0 = std::chrono::steady_clock::now();
  const pnr::ClickDistribution serial = pnr::simulate_microscopic_serial(p, det, runs, seed);
  const double serial_s = seconds_since(t0);
  std::cout << "  serial              " << serial_s << " s\n";

  t0 = std::chrono::steady_clock::now();
  const pnr::ClickDistribution parallel = pnr::simulate_microscopic(p, det, runs, seed, 0);
  const double parallel_s = seconds_since(t0);
  std::cout << "  openmp (" << threads << " threads)  " << parallel_s << " s\n";
  std::cout << "  speedup             " << serial_s / parallel_s << "x\n";
  std::cout << "  outputs identical   " << (identical(serial.values, parallel.values) ? "yes" : "NO")
            << "\n";

  // Retrieval throughput on one histogram: iterations per second of the EME map.
  const pnr::ResponseMatrix rsp = pnr::response_matrix(det, 50);
  const pnr::ClickDistribution law = pnr::forward(rsp, pnr::thermal(4.93, 50));
  const pnr::ClickDistribution data = pnr::sample_clicks(law, 300'000, seed);
  pnr::RetrievalSettings settings;
  settings.epsilon = 1e-12;
  t0 = std::chrono::steady_clock::now();
  const pnr::RetrievalReport rep = pnr::eme_retrieve(data, rsp, settings);
  const double eme_s = seconds_since(t0);
  std::cout << "eme retrieval, thermal(4.93), R=3e5: " << rep.iterations << " iterations in "
            << eme_s << " s (" << static_cast<double>(rep.iterations) / eme_s << " it/s)\n";

  return identical(serial.values, parallel.values) ? 0 : 1;
}
