#include "qbipw/csv.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

namespace qbipw {

namespace {

std::vector<std::string> split_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  std::size_t i = 0;
  const std::size_t n = line.size();
  for (;;) {
    if (quoted) {
      if (i >= n)
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": unterminated quoted field");
      const char c = line[i];
      if (c == '"') {
        if (i + 1 < n && line[i + 1] == '"') {
          field += '"';
          i += 2;
        } else {
          quoted = false;
          ++i;
        }
      } else {
        field += c;
        ++i;
      }
    } else if (i >= n || line[i] == ',') {
      fields.push_back(field);
      field.clear();
      if (i >= n) break;
      ++i;
    } else if (line[i] == '"' && field.empty()) {
      quoted = true;
      ++i;
    } else {
      field += line[i];
      ++i;
    }
  }
  return fields;
}

}  // namespace

int CsvTable::column_index(const std::string& name) const {
  for (std::size_t j = 0; j < columns.size(); ++j)
    if (columns[j] == name) return static_cast<int>(j);
  return -1;
}

CsvTable CsvTable::parse(std::istream& in) {
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_line(line, line_no);
    if (!have_header) {
      table.columns = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.columns.size())
      throw std::runtime_error("line " + std::to_string(line_no) + ": expected " +
                               std::to_string(table.columns.size()) +
                               " fields, found " + std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
  }
  if (!have_header) throw std::runtime_error("no header row found");
  return table;
}

CsvTable CsvTable::read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse(in);
}

std::optional<double> parse_number(const std::string& text) {
  std::size_t begin = text.find_first_not_of(" \t");
  if (begin == std::string::npos) return std::nullopt;
  std::size_t end = text.find_last_not_of(" \t") + 1;
  const char* first = text.data() + begin;
  const char* last = text.data() + end;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  return value;
}

}  // namespace qbipw
