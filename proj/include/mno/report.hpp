#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mno/metrics.hpp"
#include "mno/serialize.hpp"

namespace mno {

inline constexpr const char* kCodeVersion = "mno 0.1.0";

struct DiagnosticReport {
  std::string name;
  bool pass = false;
  Json evidence;    // named scalars backing the verdict
  Json thresholds;  // the constants the verdict used
  uint64_t seed = 0;
  double runtime_ms = 0.0;

  Json to_json() const {
    Json j;
    j["name"] = name;
    j["pass"] = pass;
    j["evidence"] = evidence.is_null() ? Json::object() : evidence;
    j["thresholds"] = thresholds.is_null() ? Json::object() : thresholds;
    j["seed"] = seed;
    j["runtime_ms"] = runtime_ms;
    return j;
  }
};

struct ResultBundle {
  std::vector<metrics::MetricRecord> records;
  std::vector<DiagnosticReport> diagnostics;
  Json timings;     // wall-clock observations; excluded from the bundle hash
  Json provenance;  // config hash, dataset hash, code version

  Json to_json() const {
    Json j;
    Json recs = Json::array();
    for (const auto& r : records) recs.push_back(r.to_json());
    j["records"] = recs;
    Json diags = Json::array();
    for (const auto& d : diagnostics) diags.push_back(d.to_json());
    j["diagnostics"] = diags;
    j["timings"] = timings.is_null() ? Json::object() : timings;
    j["provenance"] = provenance.is_null() ? Json::object() : provenance;
    return j;
  }

  // content hash over everything except wall-clock observations
  std::string content_hash() const {
    Json j = to_json();
    j.erase("timings");
    Json stripped = j;
    if (stripped.contains("diagnostics"))
      for (auto& d : stripped["diagnostics"]) d.erase("runtime_ms");
    return hash_bytes(stripped.dump());
  }
};

inline void write_json_file(const Json& j, const std::filesystem::path& path, bool force = true) {
  require_path_writable(path, force);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return Json::parse(in);
}

// Minimal CSV writer; all evidence tables are plain numeric columns.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add_row(std::vector<double> r) {
    if (r.size() != columns.size()) throw Error("csv row width mismatch");
    rows.push_back(std::move(r));
  }

  void write(const std::filesystem::path& path) const {
    require_path_writable(path, true);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << "\n";
    char buf[64];
    for (const auto& r : rows) {
      for (size_t i = 0; i < r.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", r[i]);
        out << (i ? "," : "") << buf;
      }
      out << "\n";
    }
  }
};

}  // namespace mno
