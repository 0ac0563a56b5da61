#pragma once
// Private helpers for the CSV/JSON file formats.

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace falsevfl::detail {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  // Line number (1-based) of each row in the source file.
  std::vector<std::size_t> line_numbers;
};

// Leading "# format_version: N" comment lines are checked and skipped;
// unknown versions are rejected. Ragged rows are an IoError.
CsvTable read_csv(const std::filesystem::path& path);

std::ofstream open_for_write(const std::filesystem::path& path);
// Writes the "# format_version" comment line.
void write_csv_preamble(std::ostream& out);

double parse_double(std::string_view cell, const std::filesystem::path& path, std::size_t line,
                    std::size_t column);
long long parse_int(std::string_view cell, const std::filesystem::path& path, std::size_t line,
                    std::size_t column);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const nlohmann::json& j, const std::filesystem::path& path);
// Rejects a missing or unknown `format_version`.
void check_format_version(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace falsevfl::detail
