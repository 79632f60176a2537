#include "sparseflow/csv.hpp"

#include "sparseflow/error.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace sparseflow {

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header,
                     bool append)
    : columns_(header.size()) {
  const bool write_header = !append || !std::filesystem::exists(path) ||
                            std::filesystem::file_size(path) == 0;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw Error("cannot open " + path.string() + " for writing");
  if (write_header) {
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }
}

CsvWriter& CsvWriter::field(const std::string& s) {
  if (pending_ > 0) out_ << ',';
  out_ << s;
  ++pending_;
  return *this;
}

CsvWriter& CsvWriter::field(double v) { return field(format_real(v)); }
CsvWriter& CsvWriter::field(long long v) { return field(std::to_string(v)); }
CsvWriter& CsvWriter::field(unsigned long long v) { return field(std::to_string(v)); }

void CsvWriter::end_row() {
  if (pending_ != columns_) {
    throw ContractError("CSV row has " + std::to_string(pending_) + " fields, header has " +
                        std::to_string(columns_));
  }
  out_ << '\n';
  out_.flush();
  pending_ = 0;
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw Error("CSV has no column '" + name + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  auto split_line = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
  };
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) return t;
  t.header = split_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.rows.push_back(split_line(line));
  }
  return t;
}

}  // namespace sparseflow
