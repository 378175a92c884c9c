#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace smrl {

/// Parsed CSV contents. Header row is mandatory in this artifact's formats.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // rows[i] pairs with file line i+2

  std::size_t column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    throw std::runtime_error("csv: no column named '" + name + "'");
  }

  bool has_column(const std::string& name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }
};

namespace detail {

/// RFC-4180 record splitter. Handles quoted fields, doubled quotes, and
/// embedded newlines (the caller feeds whole physical lines; this function
/// asks for more by returning false until the quotes balance).
struct CsvRecordParser {
  std::vector<std::string> fields;
  std::string current;
  bool in_quotes = false;
  bool any = false;

  // Returns true when the record is complete after consuming this line.
  bool consume_line(const std::string& line) {
    std::size_t i = 0;
    if (in_quotes) current.push_back('\n');
    while (i < line.size()) {
      const char c = line[i];
      if (in_quotes) {
        if (c == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            current.push_back('"');
            ++i;
          } else {
            in_quotes = false;
          }
        } else {
          current.push_back(c);
        }
      } else if (c == '"') {
        in_quotes = true;
      } else if (c == ',') {
        fields.push_back(std::move(current));
        current.clear();
      } else if (c == '\r' && i + 1 == line.size()) {
        // trailing CR from CRLF input
      } else {
        current.push_back(c);
      }
      ++i;
    }
    any = true;
    if (in_quotes) return false;
    fields.push_back(std::move(current));
    current.clear();
    return true;
  }
};

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("csv: cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  std::size_t lineno = 0;
  detail::CsvRecordParser rec;
  std::size_t record_start = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!rec.any) record_start = lineno;
    if (!rec.consume_line(line)) continue;
    if (table.header.empty()) {
      table.header = std::move(rec.fields);
      if (table.header.empty())
        throw std::runtime_error("csv: empty header row in '" + path + "'");
    } else {
      if (rec.fields.size() != table.header.size())
        throw std::runtime_error("csv: line " + std::to_string(record_start) + " has " +
                                 std::to_string(rec.fields.size()) + " fields, header has " +
                                 std::to_string(table.header.size()));
      table.rows.push_back(std::move(rec.fields));
    }
    rec = detail::CsvRecordParser{};
  }
  if (rec.in_quotes)
    throw std::runtime_error("csv: unterminated quote starting at line " +
                             std::to_string(record_start));
  if (table.header.empty()) throw std::runtime_error("csv: '" + path + "' is empty");
  return table;
}

inline std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

/// Shortest round-trip double formatting; all numeric CSV output goes through
/// here so byte-identical reruns are a matter of identical doubles.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Trim to the shortest representation that still round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char cand[40];
    std::snprintf(cand, sizeof(cand), "%.*g", prec, v);
    if (std::strtod(cand, nullptr) == v) return cand;
  }
  return buf;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("csv: cannot write '" + path + "'");
  auto emit = [&out](const std::vector<std::string>& fields) {
    for (std::size_t j = 0; j < fields.size(); ++j) {
      if (j) out << ',';
      out << csv_quote(fields[j]);
    }
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  if (!out) throw std::runtime_error("csv: write failed for '" + path + "'");
}

/// Parses a full double field. Empty (or whitespace) fields read as NaN so
/// callers can apply their missing-data policy; garbage is an error.
inline double parse_double_field(const std::string& s, std::size_t lineno, const std::string& col) {
  std::size_t begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return std::numeric_limits<double>::quiet_NaN();
  const char* start = s.c_str() + begin;
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(start, &end);
  while (end && *end == ' ') ++end;
  if (end == start || (end && *end != '\0'))
    throw std::runtime_error("csv: line " + std::to_string(lineno) + ", column '" + col +
                             "': cannot parse '" + s + "' as a number");
  return v;
}

}  // namespace smrl
