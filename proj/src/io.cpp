#include "pnr/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include <nlohmann/json.hpp>

#include "pnr/errors.hpp"

namespace pnr::io {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw numeric_error("failed to format double");
  return {buf, ptr};
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw parse_error("cannot open for writing: " + path);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

double parse_field_double(const std::string& field, const std::string& path, int line_no) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = first + field.size();
  while (first != last && (*first == ' ' || *first == '\t')) ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  while (ptr != last && (*ptr == ' ' || *ptr == '\t' || *ptr == '\r')) ++ptr;
  if (ec != std::errc() || ptr != last) {
    throw parse_error(path + ":" + std::to_string(line_no) + ": expected a number, got \"" + field + "\"");
  }
  return v;
}

/// Reads a two-column CSV, checking the header and that the index column
/// counts 0,1,2,... without gaps.
std::vector<double> read_indexed_csv(const std::string& path, const std::string& expected_header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open: " + path);
  std::string line;
  int line_no = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != expected_header) {
        throw parse_error(path + ":1: expected header \"" + expected_header + "\", got \"" + line + "\"");
      }
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw parse_error(path + ":" + std::to_string(line_no) + ": expected two comma-separated fields");
    }
    const double idx = parse_field_double(line.substr(0, comma), path, line_no);
    const auto expected = static_cast<double>(values.size());
    if (idx != expected) {
      throw parse_error(path + ":" + std::to_string(line_no) + ": expected index " +
                        format_double(expected) + ", got " + format_double(idx));
    }
    values.push_back(parse_field_double(line.substr(comma + 1), path, line_no));
  }
  if (values.empty()) throw parse_error(path + ": no data rows");
  return values;
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(slurp(path));
  } catch (const json::parse_error& e) {
    throw parse_error(path + ": " + e.what());
  }
}

std::vector<double> json_to_vector(const json& arr, const std::string& path) {
  if (!arr.is_array()) throw parse_error(path + ": expected a JSON array");
  std::vector<double> values;
  values.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw parse_error(path + ": array entries must be numbers");
    values.push_back(v.get<double>());
  }
  if (values.empty()) throw parse_error(path + ": empty array");
  return values;
}

const char* click_mode_name(ClickMode m) {
  return m == ClickMode::counts ? "counts" : "probabilities";
}

ClickMode click_mode_from_name(const std::string& name, const std::string& path) {
  if (name == "counts") return ClickMode::counts;
  if (name == "probabilities") return ClickMode::probabilities;
  throw parse_error(path + ": unknown mode \"" + name + "\"");
}

json meta_to_json(const ClickMeta& meta) {
  return json{{"M", meta.channels},
              {"eta", meta.efficiency},
              {"mode", click_mode_name(meta.mode)},
              {"R", meta.runs}};
}

ClickMeta meta_from_json(const json& j, const std::string& path) {
  ClickMeta meta;
  try {
    meta.channels = j.at("M").get<int>();
    meta.efficiency = j.at("eta").get<double>();
    meta.mode = click_mode_from_name(j.at("mode").get<std::string>(), path);
    meta.runs = j.value("R", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw parse_error(path + ": " + e.what());
  }
  return meta;
}

}  // namespace

void write_distribution_csv(const std::string& path, const PhotonDistribution& p) {
  auto out = open_out(path);
  out << "n,p\n";
  for (std::size_t n = 0; n < p.probs.size(); ++n) {
    out << n << ',' << format_double(p.probs[n]) << '\n';
  }
}

void write_distribution_json(const std::string& path, const PhotonDistribution& p) {
  auto out = open_out(path);
  json arr = json::array();
  for (double v : p.probs) arr.push_back(v);
  out << arr.dump() << '\n';
}

PhotonDistribution read_distribution(const std::string& path) {
  PhotonDistribution p;
  if (ends_with(path, ".json")) {
    p.probs = json_to_vector(parse_json_file(path), path);
  } else {
    p.probs = read_indexed_csv(path, "n,p");
  }
  return p;
}

std::string sidecar_path(const std::string& csv_path) {
  const auto dot = csv_path.find_last_of('.');
  const auto slash = csv_path.find_last_of("/\\");
  const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  return (has_ext ? csv_path.substr(0, dot) : csv_path) + ".meta.json";
}

void write_clicks_csv(const std::string& path, const ClickDistribution& c, const ClickMeta& meta) {
  auto out = open_out(path);
  out << "m,value\n";
  for (std::size_t m = 0; m < c.values.size(); ++m) {
    out << m << ',' << format_double(c.values[m]) << '\n';
  }
  auto side = open_out(sidecar_path(path));
  side << meta_to_json(meta).dump(2) << '\n';
}

void write_clicks_json(const std::string& path, const ClickDistribution& c, const ClickMeta& meta) {
  auto out = open_out(path);
  json j = meta_to_json(meta);
  j["values"] = c.values;
  out << j.dump(2) << '\n';
}

std::pair<ClickDistribution, std::optional<ClickMeta>> read_clicks(const std::string& path) {
  ClickDistribution clicks;
  std::optional<ClickMeta> meta;
  if (ends_with(path, ".json")) {
    const json j = parse_json_file(path);
    if (!j.is_object()) throw parse_error(path + ": expected a JSON object");
    if (!j.contains("values")) throw parse_error(path + ": missing \"values\"");
    clicks.values = json_to_vector(j.at("values"), path);
    meta = meta_from_json(j, path);
  } else {
    clicks.values = read_indexed_csv(path, "m,value");
    std::ifstream probe(sidecar_path(path));
    if (probe) {
      probe.close();
      meta = meta_from_json(parse_json_file(sidecar_path(path)), sidecar_path(path));
    }
  }
  if (meta) {
    clicks.mode = meta->mode;
    clicks.runs = meta->runs;
    if (clicks.mode == ClickMode::counts && clicks.runs == 0) {
      double total = 0.0;
      for (double v : clicks.values) total += v;
      clicks.runs = static_cast<std::uint64_t>(std::llround(total));
      meta->runs = clicks.runs;
    }
    const auto expected = static_cast<std::size_t>(meta->channels) + 1;
    if (clicks.values.size() != expected) {
      throw parse_error(path + ": " + std::to_string(clicks.values.size()) + " entries but M=" +
                        std::to_string(meta->channels) + " implies " + std::to_string(expected));
    }
  } else {
    // No context: counts if every entry is a non-negative integer summing
    // past 1, probabilities otherwise.
    double total = 0.0;
    bool integral = true;
    for (double v : clicks.values) {
      total += v;
      if (v != std::floor(v) || v < 0.0) integral = false;
    }
    if (integral && total > 1.5) {
      clicks.mode = ClickMode::counts;
      clicks.runs = static_cast<std::uint64_t>(std::llround(total));
    } else {
      clicks.mode = ClickMode::probabilities;
      clicks.runs = 0;
    }
  }
  return {clicks, meta};
}

json report_to_json(const RetrievalReport& report) {
  json j;
  j["estimate"] = report.estimate.probs;
  j["iterations"] = report.iterations;
  j["stop_reason"] = stop_reason_name(report.stop_reason);
  j["final_distance"] = report.final_distance;
  j["clamp_events"] = report.clamp_events;
  if (!report.distance_trace.empty()) j["distance_trace"] = report.distance_trace;
  if (!report.likelihood_trace.empty()) j["likelihood_trace"] = report.likelihood_trace;
  return j;
}

void write_report_json(const std::string& path, const RetrievalReport& report) {
  auto out = open_out(path);
  out << report_to_json(report).dump(2) << '\n';
}

namespace {

json optional_to_json(const std::optional<double>& v) {
  if (!v || std::isnan(*v)) return nullptr;
  return *v;
}

}  // namespace

json bundle_to_json(const DiagnosticsBundle& b) {
  json j;
  j["mean"] = b.mean;
  j["variance"] = b.variance;
  j["g2"] = std::isnan(b.g2) ? json(nullptr) : json(b.g2);
  j["mandel_q"] = std::isnan(b.mandel_q) ? json(nullptr) : json(b.mandel_q);
  j["parity"] = b.parity;
  j["wigner_origin"] = b.wigner_origin;
  j["fidelity"] = optional_to_json(b.fidelity);
  j["tvd"] = optional_to_json(b.tvd);
  if (b.uncertainty) {
    const auto& u = *b.uncertainty;
    json ju;
    ju["mean"] = u.mean;
    ju["variance"] = u.variance;
    ju["g2"] = u.g2;
    ju["mandel_q"] = u.mandel_q;
    ju["parity"] = u.parity;
    ju["wigner_origin"] = u.wigner_origin;
    ju["fidelity"] = optional_to_json(u.fidelity);
    ju["tvd"] = optional_to_json(u.tvd);
    j["uncertainty"] = ju;
  }
  return j;
}

void write_bundle_json(const std::string& path, const DiagnosticsBundle& b) {
  auto out = open_out(path);
  out << bundle_to_json(b).dump(2) << '\n';
}

void write_bundle_csv(const std::string& path, const DiagnosticsBundle& b) {
  auto out = open_out(path);
  auto cell = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
  auto opt_cell = [&](const std::optional<double>& v) {
    return v ? cell(*v) : std::string("nan");
  };
  out << "mean,variance,g2,mandel_q,parity,wigner_origin,fidelity,tvd\n";
  out << cell(b.mean) << ',' << cell(b.variance) << ',' << cell(b.g2) << ',' << cell(b.mandel_q)
      << ',' << cell(b.parity) << ',' << cell(b.wigner_origin) << ',' << opt_cell(b.fidelity) << ','
      << opt_cell(b.tvd) << '\n';
}

std::string stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::converged:
      return "converged";
    case StopReason::iteration_cap:
      return "iteration_cap";
    case StopReason::halted:
      return "halted";
  }
  return "unknown";
}

}  // namespace pnr::io
