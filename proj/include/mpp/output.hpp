#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mpp {

/// Shortest round-trip decimal form; "nan", "inf", "-inf" for non-finite values.
std::string format_number(double x);
std::string format_number(std::int64_t x);
std::string format_number(std::uint64_t x);
std::string format_optional(const std::optional<double>& x);

/// RFC 4180 field quoting.
std::string csv_escape(std::string_view field);

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);
  void add_row(std::vector<std::string> fields);
  std::size_t rows() const { return rows_.size(); }
  /// CRLF line endings per RFC 4180.
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Pretty-printed with two-space indent and a trailing newline.
std::string json_text(const nlohmann::json& j);

/// Writes `content` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, std::string_view content);

/// Appends a timestamped line to <dir>/run.log. Timestamps live only there.
void append_run_log(const std::filesystem::path& dir, std::string_view message);

/// Version string of this build (git describe at configure time).
std::string build_version();

}  // namespace mpp
