#include "vmi/report.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace vmi {

namespace {

std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

bool parse_cell_double(const std::string& s, double& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

void check_csv_header(const std::filesystem::path& path, const std::string& expected,
                      std::vector<std::string>& problems) {
  if (!std::filesystem::exists(path)) {
    problems.push_back("missing file: " + path.filename().string());
    return;
  }
  std::ifstream is(path, std::ios::binary);
  std::string header;
  if (!std::getline(is, header)) {
    problems.push_back(path.filename().string() + ": empty file");
    return;
  }
  if (header != expected) {
    problems.push_back(path.filename().string() + ": header '" + header + "' != '" + expected +
                       "'");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, p);
}

CsvWriter::CsvWriter(const std::filesystem::path& path) : os_(path, std::ios::binary | std::ios::trunc) {
  if (!os_) throw std::runtime_error("csv: cannot open " + path.string() + " for writing");
}

void CsvWriter::row(std::span<const std::string> cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) os_ << ',';
    os_ << csv_escape(cells[i]);
  }
  os_ << '\n';
  if (!os_) throw std::runtime_error("csv: write failed");
}

void CsvWriter::row(std::initializer_list<std::string> cells) {
  row(std::span<const std::string>(cells.begin(), cells.size()));
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("csv: cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      char c = line[i];
      if (quoted) {
        if (c == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            cur += '"';
            ++i;
          } else {
            quoted = false;
          }
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        cells.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    cells.push_back(cur);
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::vector<std::string> validate_report_files(const std::filesystem::path& out_dir) {
  std::vector<std::string> problems;
  namespace fs = std::filesystem;

  check_csv_header(out_dir / "metrics" / "per_class.csv",
                   "method,class,n_real,n_gen,accuracy,accuracy_half_width,precision,recall,density,coverage,diversity",
                   problems);
  check_csv_header(out_dir / "metrics" / "methods.csv",
                   "method,accuracy,precision,recall,density,coverage,diversity,fid", problems);
  check_csv_header(out_dir / "attacks" / "traces.csv", "class,step,nll,kl,total", problems);
  check_csv_header(out_dir / "attacks" / "layer_diagnostics.csv", "class,layer,kl,entropy",
                   problems);

  // Per-class metric ranges.
  fs::path per_class = out_dir / "metrics" / "per_class.csv";
  if (fs::exists(per_class)) {
    auto rows = read_csv(per_class);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].size() != 11) {
        problems.push_back("per_class.csv row " + std::to_string(r) + ": wrong cell count");
        continue;
      }
      // accuracy..diversity in [0,1] except density (>= 0); the half-width
      // column between accuracy and precision is skipped here.
      static const char* names[] = {"accuracy", "precision", "recall",
                                    "density",  "coverage",  "diversity"};
      static const int cols[] = {4, 6, 7, 8, 9, 10};
      for (int m = 0; m < 6; ++m) {
        double v = 0.0;
        if (!parse_cell_double(rows[r][cols[m]], v)) {
          problems.push_back("per_class.csv row " + std::to_string(r) + ": bad " + names[m]);
          continue;
        }
        bool ok = std::string(names[m]) == "density" ? v >= 0.0 : (v >= 0.0 && v <= 1.0);
        if (!ok) {
          problems.push_back("per_class.csv row " + std::to_string(r) + ": " + names[m] +
                             " out of range: " + rows[r][cols[m]]);
        }
      }
    }
  }

  fs::path summary = out_dir / "metrics" / "summary.json";
  if (!fs::exists(summary)) {
    problems.push_back("missing file: summary.json");
  } else {
    try {
      std::ifstream is(summary);
      nlohmann::json j = nlohmann::json::parse(is);
      for (const char* key : {"config_hash", "seed", "k", "samples_per_class", "methods"}) {
        if (!j.contains(key)) problems.push_back("summary.json: missing key '" + std::string(key) + "'");
      }
      if (j.contains("methods")) {
        for (const auto& [name, method] : j["methods"].items()) {
          for (const char* key :
               {"accuracy", "precision", "recall", "density", "coverage", "diversity", "fid"}) {
            if (!method.contains(key)) {
              problems.push_back("summary.json: method '" + name + "' missing '" + key + "'");
            }
          }
        }
      }
    } catch (const std::exception& e) {
      problems.push_back(std::string("summary.json: parse error: ") + e.what());
    }
  }

  fs::path manifest = out_dir / "manifest.json";
  if (!fs::exists(manifest)) {
    problems.push_back("missing file: manifest.json");
  } else {
    try {
      std::ifstream is(manifest);
      nlohmann::json j = nlohmann::json::parse(is);
      for (const char* key :
           {"artifact_version", "command", "config_hash", "seed", "status", "inventory"}) {
        if (!j.contains(key)) problems.push_back("manifest.json: missing key '" + std::string(key) + "'");
      }
      if (j.value("status", "") != "ok") {
        problems.push_back("manifest.json: status is '" + j.value("status", "") + "'");
      }
      // Inventory must match the directory contents exactly (manifest aside).
      std::set<std::string> on_disk;
      for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string rel = fs::relative(entry.path(), out_dir).generic_string();
        if (rel == "manifest.json") continue;
        on_disk.insert(rel);
      }
      std::set<std::string> listed;
      if (j.contains("inventory")) {
        for (const auto& item : j["inventory"]) {
          std::string rel = item.value("path", "");
          listed.insert(rel);
          if (!on_disk.count(rel)) {
            problems.push_back("manifest.json: inventory lists missing file '" + rel + "'");
          } else {
            auto bytes = fs::file_size(out_dir / rel);
            if (item.value("bytes", std::uintmax_t{0}) != bytes) {
              problems.push_back("manifest.json: size mismatch for '" + rel + "'");
            }
          }
        }
      }
      for (const std::string& rel : on_disk) {
        if (!listed.count(rel)) {
          problems.push_back("manifest.json: file on disk not in inventory: '" + rel + "'");
        }
      }
    } catch (const std::exception& e) {
      problems.push_back(std::string("manifest.json: parse error: ") + e.what());
    }
  }
  return problems;
}

}  // namespace vmi
