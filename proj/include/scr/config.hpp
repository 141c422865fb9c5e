#pragma once

// Flat key/value run configuration. Sources are layered: built-in defaults,
// then a config file (JSON object or "key = value" lines), then command-line
// flags.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "scr/geometry.hpp"
#include "scr/pipeline.hpp"
#include "scr/scene_coords.hpp"
#include "scr/solver.hpp"
#include "scr/volume.hpp"

namespace scr {

class Config {
 public:
  /// JSON objects are flattened one level; arrays become space-separated
  /// lists. Anything else is read as "key = value" lines with '#' comments.
  static Config parse(std::string_view text, const std::string& source = "<config>");
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  /// "key=value"; throws InvalidArgument otherwise.
  void set_assignment(std::string_view assignment);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  Eigen::Vector3d get_vec3(const std::string& key, const Eigen::Vector3d& fallback) const;

  /// Throws InvalidArgument naming any key that no getter asked for, so a
  /// misspelt key never passes silently.
  void check_all_used() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  /// Every key read so far with the value actually used, defaults included.
  const std::map<std::string, std::string>& resolved() const { return resolved_; }

 private:
  const std::string* find(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
  mutable std::map<std::string, std::string> resolved_;
};

/// Resolved settings sections. Each reader consumes its keys from cfg and
/// falls back to the library defaults.
CameraModeld camera_from(const Config& cfg);
IsoSurfaceSpec iso_from(const Config& cfg);
DrrConfig drr_from(const Config& cfg);
ProtocolSpec protocol_from(const Config& cfg);
RansacConfig ransac_from(const Config& cfg);
NoiseSpec noise_from(const Config& cfg);

/// Default detector: 256 x 256 pixels of 2.4 mm at 1020 mm source-detector
/// distance.
CameraModeld default_camera();

/// Sorted "key = value" lines.
std::string describe(const std::map<std::string, std::string>& resolved);

}  // namespace scr
