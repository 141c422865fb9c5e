#pragma once

// Shared plumbing for the "KEY=value" header + raw little-endian payload
// files (volumes and scene-coordinate maps). Internal to the library.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace scr::detail {

struct RawFile {
  std::map<std::string, std::string> header;  // keys in file order irrelevant
  std::string payload;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Splits a header terminated by the "DATA=raw" line from the payload.
/// Throws ParseError for a malformed or incomplete header.
RawFile parse_raw_file(std::string bytes, const std::filesystem::path& path);

const std::string& require_key(const RawFile& f, const std::string& key, const std::filesystem::path& path);
std::vector<double> parse_numbers(const std::string& text, std::size_t count, const std::string& key,
                                  const std::filesystem::path& path);
long long parse_integer(const std::string& text, const std::string& key, const std::filesystem::path& path);

/// Shortest round-trip decimal rendering.
std::string format_number(double value);

template <typename T>
T load_le(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&value);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  }
  return value;
}

template <typename T>
void store_le(T value, std::string& out) {
  char b[sizeof(T)];
  std::memcpy(b, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  }
  out.append(b, sizeof(T));
}

}  // namespace scr::detail
