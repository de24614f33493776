#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

// Deterministic CSV output. The contract: two runs with the same seed and
// configuration produce byte-identical files, except for the timestamp,
// which is confined to its own leading comment line. Comment lines start
// with '#'; the first non-comment line is the UTF-8 header row.

namespace hourglass {

// 64-bit FNV-1a over the canonical option string; hex-encoded for headers.
std::uint64_t fnv1a64(std::string_view s);
std::string config_hash_hex(std::string_view canonical);

// "2026-08-22T12:34:56Z" (UTC). Only ever written into comment lines.
std::string utc_timestamp();

// Shortest round-trip-stable formatting helpers.
std::string fmt_double(double v);           // %.17g — exact round trip
std::string fmt_double_short(double v);     // %.12g — metrics, ratios
std::string fmt_ms(double v);               // %.4f  — millisecond timings

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);

  // Standard prologue: one deterministic metadata comment, then the
  // timestamp on its own comment line, then the header row.
  void prologue(std::string_view tool, std::uint64_t seed,
                std::string_view canonical_config,
                const std::vector<std::string>& columns);

  void comment(std::string_view line);           // writes "# <line>\n"
  void row(const std::vector<std::string>& cells);

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

}  // namespace hourglass
