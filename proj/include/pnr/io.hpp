#pragma once

#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "pnr/detector.hpp"
#include "pnr/diagnostics.hpp"
#include "pnr/distribution.hpp"
#include "pnr/retrieval.hpp"

namespace pnr::io {

/// Shortest decimal string that round-trips the double (std::to_chars);
/// keeps CSV output byte-stable across runs.
std::string format_double(double v);

// Photon-number distributions: CSV with header "n,p", or a bare JSON array.
void write_distribution_csv(const std::string& path, const PhotonDistribution& p);
void write_distribution_json(const std::string& path, const PhotonDistribution& p);
PhotonDistribution read_distribution(const std::string& path);  // dispatch on extension

/// Detector context a click histogram was produced under.
struct ClickMeta {
  int channels = 0;
  double efficiency = 0.0;
  ClickMode mode = ClickMode::probabilities;
  std::uint64_t runs = 0;
};

// Click histograms: CSV with header "m,value" plus a "<stem>.meta.json"
// sidecar {M, eta, mode, R}, or a single JSON object {M, eta, mode, R,
// values}.
void write_clicks_csv(const std::string& path, const ClickDistribution& c, const ClickMeta& meta);
void write_clicks_json(const std::string& path, const ClickDistribution& c, const ClickMeta& meta);
std::pair<ClickDistribution, std::optional<ClickMeta>> read_clicks(const std::string& path);

/// Sidecar path for a CSV click file: extension replaced by ".meta.json".
std::string sidecar_path(const std::string& csv_path);

void write_report_json(const std::string& path, const RetrievalReport& report);
nlohmann::json report_to_json(const RetrievalReport& report);

nlohmann::json bundle_to_json(const DiagnosticsBundle& b);
void write_bundle_json(const std::string& path, const DiagnosticsBundle& b);
/// One header row and one value row; optional fields serialize as "nan".
void write_bundle_csv(const std::string& path, const DiagnosticsBundle& b);

std::string stop_reason_name(StopReason r);

}  // namespace pnr::io
