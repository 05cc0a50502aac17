#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vmi {

// Shortest round-trip decimal representation; locale-free, '.' decimal
// point, so identical seeds reproduce identical report bytes.
std::string format_double(double v);

// RFC-style CSV: cells containing commas, quotes or newlines are quoted with
// doubled inner quotes; rows end with a bare LF.
class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);
  void row(std::span<const std::string> cells);
  void row(std::initializer_list<std::string> cells);

 private:
  std::ofstream os_;
};

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

// Structural checks over an experiment output directory: expected headers,
// value ranges, parsable summary JSON, manifest inventory matching the files
// on disk. Returns human-readable problems; empty means valid.
std::vector<std::string> validate_report_files(const std::filesystem::path& out_dir);

}  // namespace vmi
