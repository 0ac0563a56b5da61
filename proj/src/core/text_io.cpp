#include "text_io.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "falsevfl/error.hpp"
#include "falsevfl/vpartition.hpp"

namespace falsevfl::detail {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable table;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view t = trim(line);
    if (t.empty()) continue;
    if (!have_header && t.front() == '#') {
      constexpr std::string_view key = "format_version:";
      const auto pos = t.find(key);
      if (pos != std::string_view::npos) {
        const std::string_view v = trim(t.substr(pos + key.size()));
        int version = 0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), version);
        if (res.ec != std::errc() || version != kFormatVersion) {
          throw IoError(where(path, lineno) + ": unsupported format_version '" + std::string(v) + "'");
        }
      }
      continue;
    }
    auto cells = split(t);
    if (!have_header) {
      table.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != table.header.size()) {
      throw IoError(where(path, lineno) + ": expected " + std::to_string(table.header.size()) +
                    " cells, got " + std::to_string(cells.size()));
    }
    table.rows.push_back(std::move(cells));
    table.line_numbers.push_back(lineno);
  }
  if (!have_header) throw IoError(path.string() + ": missing header row");
  return table;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void write_csv_preamble(std::ostream& out) { out << "# format_version: " << kFormatVersion << '\n'; }

double parse_double(std::string_view cell, const std::filesystem::path& path, std::size_t line,
                    std::size_t column) {
  double v = 0.0;
  const char* first = cell.data();
  if (!cell.empty() && cell.front() == '+') ++first;
  const auto res = std::from_chars(first, cell.data() + cell.size(), v);
  if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    throw IoError(where(path, line) + ": column " + std::to_string(column + 1) + ": not a finite number: '" +
                  std::string(cell) + "'");
  }
  return v;
}

long long parse_int(std::string_view cell, const std::filesystem::path& path, std::size_t line,
                    std::size_t column) {
  long long v = 0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
    throw IoError(where(path, line) + ": column " + std::to_string(column + 1) + ": not an integer: '" +
                  std::string(cell) + "'");
  }
  return v;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void check_format_version(const nlohmann::json& j, const std::filesystem::path& path) {
  if (!j.is_object() || !j.contains("format_version") || !j["format_version"].is_number_integer() ||
      j["format_version"].get<int>() != kFormatVersion) {
    throw IoError(path.string() + ": missing or unsupported format_version");
  }
}

}  // namespace falsevfl::detail
