#include "cspeech/textio.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "cspeech/common.hpp"

namespace cspeech::textio {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename onto " + path.string() + ": " + ec.message());
}

void append_line(const std::filesystem::path& path, std::string_view line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  out << line << '\n';
  out.flush();
  if (!out) throw IoError("append failed for " + path.string());
}

std::vector<CsvRow> parse_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  std::size_t line = 1;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    CsvRow row{line, {}};
    std::string field;
    bool in_quotes = false;
    bool row_done = false;
    while (i < n && !row_done) {
      char c = text[i];
      if (in_quotes) {
        if (c == '"') {
          if (i + 1 < n && text[i + 1] == '"') {
            field += '"';
            i += 2;
            continue;
          }
          in_quotes = false;
          ++i;
          continue;
        }
        if (c == '\n') ++line;
        field += c;
        ++i;
        continue;
      }
      switch (c) {
        case '"':
          in_quotes = true;
          ++i;
          break;
        case ',':
          row.fields.push_back(std::move(field));
          field.clear();
          ++i;
          break;
        case '\r':
          ++i;
          break;
        case '\n':
          ++line;
          ++i;
          row_done = true;
          break;
        default:
          field += c;
          ++i;
      }
    }
    if (in_quotes) throw InputError("unterminated quoted CSV field", row.line);
    row.fields.push_back(std::move(field));
    // Skip blank lines.
    if (!(row.fields.size() == 1 && row.fields[0].empty())) rows.push_back(std::move(row));
  }
  return rows;
}

std::string csv_escape(std::string_view field) {
  bool needs = field.find_first_of(",\"\n\r") != std::string_view::npos;
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string csv_line(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_escape(fields[i]);
  }
  return out;
}

std::vector<std::string> parse_python_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  };
  skip_ws();
  if (i >= s.size() || s[i] != '[') throw InputError("expected '[' in list literal");
  ++i;
  skip_ws();
  if (i < s.size() && s[i] == ']') return out;
  while (true) {
    skip_ws();
    if (i >= s.size()) throw InputError("unterminated list literal");
    std::string item;
    if (s[i] == '\'' || s[i] == '"') {
      const char quote = s[i++];
      bool closed = false;
      while (i < s.size()) {
        char c = s[i++];
        if (c == '\\' && i < s.size()) {
          char e = s[i++];
          switch (e) {
            case 'n': item += '\n'; break;
            case 't': item += '\t'; break;
            case 'r': item += '\r'; break;
            default: item += e;
          }
          continue;
        }
        if (c == quote) {
          closed = true;
          break;
        }
        item += c;
      }
      if (!closed) throw InputError("unterminated string in list literal");
    } else {
      while (i < s.size() && s[i] != ',' && s[i] != ']') item += s[i++];
      item = trim(item);
    }
    out.push_back(std::move(item));
    skip_ws();
    if (i >= s.size()) throw InputError("unterminated list literal");
    if (s[i] == ',') {
      ++i;
      skip_ws();
      if (i < s.size() && s[i] == ']') break;  // trailing comma
      continue;
    }
    if (s[i] == ']') break;
    throw InputError("unexpected character in list literal");
  }
  return out;
}

void for_each_json_line(const std::filesystem::path& path,
                        const std::function<void(const nlohmann::json&, std::size_t)>& fn) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ": invalid JSON: " + e.what(), lineno);
    }
    try {
      fn(j, lineno);
    } catch (const InputError&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ": malformed record: " + e.what(), lineno);
    } catch (const ConfigError& e) {
      throw InputError(path.string() + ": " + e.what(), lineno);
    }
  }
}

}  // namespace cspeech::textio
