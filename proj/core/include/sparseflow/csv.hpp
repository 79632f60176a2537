#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace sparseflow {

/// Shortest text that parses back to the same double ("nan"/"inf" for
/// non-finite values).
std::string format_real(double v);

/// Line-oriented CSV writer with a fixed header. Fields are written as given;
/// no quoting is performed (all emitted fields are numeric or identifiers).
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header,
            bool append = false);

  CsvWriter& field(const std::string& s);
  CsvWriter& field(double v);
  CsvWriter& field(long long v);
  CsvWriter& field(unsigned long long v);
  CsvWriter& field(std::size_t v) { return field(static_cast<unsigned long long>(v)); }
  CsvWriter& field(int v) { return field(static_cast<long long>(v)); }
  void end_row();

 private:
  std::ofstream out_;
  std::size_t columns_;
  std::size_t pending_ = 0;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of column `name`; throws if absent.
  [[nodiscard]] std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace sparseflow
