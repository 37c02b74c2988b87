#pragma once

// Small text I/O helpers shared by the dataset loader, the model format and
// the report writers: shortest round-trip double formatting and line/field
// splitting for comma-separated tables.

#include <charconv>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "treexplain/errors.hpp"

namespace treexplain {

// Shortest decimal string that parses back to exactly the same double.
inline std::string format_double(double value) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view text) {
  // from_chars rejects leading whitespace and '+'; trim both for tolerance.
  size_t begin = text.find_first_not_of(" \t");
  if (begin == std::string_view::npos) return std::nullopt;
  size_t end = text.find_last_not_of(" \t");
  text = text.substr(begin, end - begin + 1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    return std::nullopt;
  }
  return value;
}

// Splits one table line on commas. No quoting: fields in this format are
// numeric or plain identifiers.
inline std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

inline std::string trim(std::string_view text) {
  size_t begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return std::string();
  size_t end = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(begin, end - begin + 1));
}

// Reads all lines of a text file. Strips a UTF-8 BOM from the first line and
// a trailing '\r' from every line so CRLF input behaves like LF input.
inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (!lines.empty() && lines.front().rfind("\xEF\xBB\xBF", 0) == 0) {
    lines.front().erase(0, 3);
  }
  return lines;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open file for writing: " + path);
  out << text;
  if (!out) throw Error("write failed: " + path);
}

}  // namespace treexplain
