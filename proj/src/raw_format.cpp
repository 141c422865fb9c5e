#include "raw_format.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "scr/error.hpp"

namespace scr::detail {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed: " + path.string());
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

RawFile parse_raw_file(std::string bytes, const std::filesystem::path& path) {
  RawFile f;
  std::size_t pos = 0;
  while (true) {
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos)
      throw Error(ErrorCode::ParseError, path.string() + ": header ends before DATA=raw");
    std::string line = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw Error(ErrorCode::ParseError, path.string() + ": malformed header line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key == "DATA") {
      if (value != "raw") throw Error(ErrorCode::ParseError, path.string() + ": unsupported DATA=" + value);
      break;
    }
    if (!f.header.emplace(std::move(key), std::move(value)).second)
      throw Error(ErrorCode::ParseError, path.string() + ": duplicate header key");
  }
  f.payload = bytes.substr(pos);
  return f;
}

const std::string& require_key(const RawFile& f, const std::string& key, const std::filesystem::path& path) {
  auto it = f.header.find(key);
  if (it == f.header.end()) throw Error(ErrorCode::ParseError, path.string() + ": missing header key " + key);
  return it->second;
}

std::vector<double> parse_numbers(const std::string& text, std::size_t count, const std::string& key,
                                  const std::filesystem::path& path) {
  std::vector<double> out;
  const char* p = text.data();
  const char* end = text.data() + text.size();
  while (p < end) {
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
    if (p == end) break;
    double v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc()) throw Error(ErrorCode::ParseError, path.string() + ": bad number in " + key);
    out.push_back(v);
    p = next;
  }
  if (out.size() != count)
    throw Error(ErrorCode::ParseError,
                path.string() + ": " + key + " expects " + std::to_string(count) + " values");
  return out;
}

long long parse_integer(const std::string& text, const std::string& key, const std::filesystem::path& path) {
  long long v = 0;
  auto [next, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || next != text.data() + text.size())
    throw Error(ErrorCode::ParseError, path.string() + ": bad integer in " + key);
  return v;
}

std::string format_number(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

}  // namespace scr::detail
