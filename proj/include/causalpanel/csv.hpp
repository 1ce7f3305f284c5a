// Small CSV utilities: a generic reader for modest files (survey records,
// policy events, configs) and formatting helpers shared by all writers so
// numeric output is deterministic.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace causalpanel {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column position for `name`; throws ParseError when absent.
  std::size_t column(const std::string& name) const;
  std::optional<std::size_t> find_column(const std::string& name) const;
};

// Reads a CSV file with a header row.  Handles RFC-style double-quoted
// fields (embedded commas/quotes/newlines).
CsvTable read_csv(const std::string& path);

// Splits one CSV record; exposed for fast line-oriented readers.
std::vector<std::string> split_csv_line(const std::string& line);

// Quotes a field only when needed.
std::string csv_escape(const std::string& field);

// Fixed "%.*g" formatting; empty string for NaN (the missing-value encoding).
std::string format_double(double value, int significant_digits = 12);

// Round-trip-exact formatting used where values are re-read by the library.
std::string format_double_exact(double value);

// Whole-file slurp + FNV-1a 64 content hash (hex), for run manifests.
std::string read_file(const std::string& path);
std::string fnv1a_hex(const std::string& bytes);

std::optional<double> parse_double_field(const std::string& field);
std::optional<long long> parse_int_field(const std::string& field);

}  // namespace causalpanel
