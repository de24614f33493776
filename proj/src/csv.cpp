#include "hourglass/csv.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <stdexcept>

#include "hourglass/version.hpp"

namespace hourglass {

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash_hex(std::string_view canonical) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical)));
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_double_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string fmt_ms(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open " + path.string());
}

void CsvWriter::prologue(std::string_view tool, std::uint64_t seed,
                         std::string_view canonical_config,
                         const std::vector<std::string>& columns) {
  std::string meta = "tool=";
  meta += tool;
  meta += " version=";
  meta += kVersion;
  meta += " seed=" + std::to_string(seed);
  meta += " config_hash=" + config_hash_hex(canonical_config);
  comment(meta);
  comment("generated=" + utc_timestamp());
  row(columns);
}

void CsvWriter::comment(std::string_view line) {
  out_ << "# " << line << '\n';
  if (!out_) throw std::runtime_error("write failed: " + path_.string());
}

namespace {

// RFC 4180: a field containing a comma, quote, or newline is wrapped in
// double quotes, with embedded quotes doubled. Pattern names ("sink:1,32")
// make this a live concern, not armor-plating.
std::string escape_field(const std::string& f) {
  if (f.find_first_of(",\"\n\r") == std::string::npos) return f;
  std::string out = "\"";
  for (char c : f) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

}  // namespace

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << escape_field(cells[i]);
  }
  out_ << '\n';
  if (!out_) throw std::runtime_error("write failed: " + path_.string());
}

}  // namespace hourglass
