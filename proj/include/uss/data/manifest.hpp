#pragma once

// Corpus manifest: JSON-lines, one record per clip.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "uss/core/error.hpp"

namespace uss::data {

struct ManifestRecord {
  std::string path;
  int class_id = 0;
  std::string class_name;
  int sample_rate = 0;
  double duration = 0.0;
};

struct Manifest {
  std::vector<ManifestRecord> records;

  int num_classes() const {
    int k = 0;
    for (const auto& r : records) k = std::max(k, r.class_id + 1);
    return k;
  }

  // class ids must be dense in [0, K)
  void validate_class_ids() const {
    check(!records.empty(), "manifest: empty");
    std::set<int> ids;
    for (const auto& r : records) ids.insert(r.class_id);
    int expect = 0;
    for (int id : ids)
      check(id == expect++, "manifest: class ids are not dense in [0, K)");
  }

  std::vector<ManifestRecord> of_class(int class_id) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
      if (r.class_id == class_id) out.push_back(r);
    return out;
  }
};

inline void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  check(f.good(), "manifest: cannot open '" + path + "' for writing");
  for (const auto& r : m.records) {
    nlohmann::json j;
    j["path"] = r.path;
    j["class_id"] = r.class_id;
    j["class_name"] = r.class_name;
    j["sample_rate"] = r.sample_rate;
    j["duration"] = r.duration;
    f << j.dump() << "\n";
  }
  check(f.good(), "manifest: write failed for '" + path + "'");
}

inline Manifest load_manifest(const std::string& path, bool check_paths = true) {
  std::ifstream f(path);
  check(f.good(), "manifest: cannot open '" + path + "'");
  Manifest m;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error("manifest: bad JSON at " + path + ":" + std::to_string(line_no) +
                  ": " + e.what());
    }
    ManifestRecord r;
    r.path = j.at("path").get<std::string>();
    r.class_id = j.at("class_id").get<int>();
    r.class_name = j.at("class_name").get<std::string>();
    r.sample_rate = j.at("sample_rate").get<int>();
    r.duration = j.at("duration").get<double>();
    if (check_paths)
      check(std::filesystem::exists(r.path),
            "manifest: missing file '" + r.path + "' (from " + path + ")");
    m.records.push_back(std::move(r));
  }
  m.validate_class_ids();
  return m;
}

}  // namespace uss::data
