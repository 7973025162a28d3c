#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cspeech::textio {

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename so readers never see partial output.
void write_file(const std::filesystem::path& path, std::string_view content);
/// Appends one line (newline added) and flushes.
void append_line(const std::filesystem::path& path, std::string_view line);

struct CsvRow {
  std::size_t line;  // 1-based line where the row starts
  std::vector<std::string> fields;
};

/// RFC 4180 CSV: quoted fields may contain commas, doubled quotes and newlines.
std::vector<CsvRow> parse_csv(std::string_view text);
std::string csv_escape(std::string_view field);
std::string csv_line(const std::vector<std::string>& fields);

/// Parses a Python list literal such as "['a', \"b\"]" or "[1, 3]" into its
/// element strings (quotes removed, escapes resolved). Throws InputError.
std::vector<std::string> parse_python_list(std::string_view literal);

/// Calls fn(object, line) for each non-blank line of a JSONL file. Parse
/// failures, JSON access errors and ConfigErrors thrown by fn become
/// InputErrors carrying the line number.
void for_each_json_line(const std::filesystem::path& path,
                        const std::function<void(const nlohmann::json&, std::size_t)>& fn);

}  // namespace cspeech::textio
