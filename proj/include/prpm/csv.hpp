// Minimal RFC 4180 style CSV reading and writing.
#pragma once

#include <cstddef>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace prpm {

class CsvReader {
 public:
  explicit CsvReader(std::istream& in, char sep = ',') : in_(in), sep_(sep) {}

  /// Reads the next record into `row`. Returns false at end of input.
  /// Quoted fields may contain separators, doubled quotes and newlines.
  bool next(std::vector<std::string>& row);

  /// 1-based line number on which the last returned record started.
  std::size_t line() const noexcept { return record_line_; }

 private:
  std::istream& in_;
  char sep_;
  std::size_t line_ = 0;
  std::size_t record_line_ = 0;
};

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields, char sep = ',');

}  // namespace prpm
