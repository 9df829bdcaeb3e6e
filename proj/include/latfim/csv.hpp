#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace latfim {

// Floats in every table are printed with 9 significant digits.
std::string format_double(double value);

// Minimal RFC-4180 writer: fields containing separators, quotes or newlines are quoted.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  CsvWriter& field(const std::string& text);
  CsvWriter& field(double value);
  CsvWriter& field(long long value);
  CsvWriter& field(int value) { return field(static_cast<long long>(value)); }
  CsvWriter& field(std::size_t value) { return field(static_cast<long long>(value)); }
  CsvWriter& empty();
  void end_row();
  void row(const std::vector<std::string>& fields);

 private:
  std::ostream& out_;
  bool first_ = true;
};

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace latfim
