#pragma once

#include <istream>
#include <string>
#include <vector>

namespace jcar::csv {

/// Splits one record on ',' or '\t' and trims surrounding whitespace.
std::vector<std::string> split_row(const std::string& line);

/// True for blank lines and lines whose first non-space char is '#'.
bool is_skippable(const std::string& line);

/// Shortest-safe round-trip formatting: 17 significant digits.
std::string format_double(double value);

double parse_double(const std::string& field, const std::string& context);
long long parse_int(const std::string& field, const std::string& context);

/// Reads `in` line by line, calling `fn(line_number, fields)` for every
/// non-skippable record. Strips a trailing '\r'.
template <typename Fn>
void for_each_record(std::istream& in, Fn&& fn) {
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_skippable(line)) continue;
    fn(line_number, split_row(line));
  }
}

}  // namespace jcar::csv
