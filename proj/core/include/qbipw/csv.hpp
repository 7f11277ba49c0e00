#pragma once

#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace qbipw {

// Comma-separated table with a header row. Fields may be double-quoted
// (embedded quotes doubled); lines starting with '#' and blank lines are
// skipped; a trailing carriage return is stripped. Quoted fields do not span
// lines.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;  // each the header width

  int column_index(const std::string& name) const;  // -1 when absent

  static CsvTable parse(std::istream& in);
  static CsvTable read_file(const std::string& path);
};

// Full-string numeric parse; nullopt on anything trailing or empty.
std::optional<double> parse_number(const std::string& text);

}  // namespace qbipw
