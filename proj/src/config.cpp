#include "scr/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include <json.hpp>

#include "raw_format.hpp"

namespace scr {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) return detail::format_number(v.get<double>());
  return v.dump();
}

Error bad_value(const std::string& key, const std::string& value, const char* expected) {
  return Error(ErrorCode::InvalidArgument, "config key '" + key + "' = '" + value + "' is not " + expected);
}

template <typename T>
T parse_whole(const std::string& key, const std::string& text, const char* expected) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw bad_value(key, text, expected);
  return value;
}

}  // namespace

Config Config::parse(std::string_view text, const std::string& source) {
  Config cfg;
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, source + ": " + e.what());
    }
    for (const auto& [key, value] : j.items()) {
      if (value.is_array()) {
        std::string joined;
        for (const auto& item : value) joined += (joined.empty() ? "" : " ") + scalar_text(item);
        cfg.set(key, joined);
      } else if (value.is_object()) {
        throw Error(ErrorCode::ParseError, source + ": nested object under '" + key + "'");
      } else {
        cfg.set(key, scalar_text(value));
      }
    }
    return cfg;
  }

  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
      throw Error(ErrorCode::ParseError, source + ":" + std::to_string(line_no) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) { return parse(detail::read_file(path), path.string()); }

void Config::set_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || trim(assignment.substr(0, eq)).empty())
    throw Error(ErrorCode::InvalidArgument, "expected key=value, got '" + std::string(assignment) + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string* Config::find(const std::string& key) const {
  used_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const auto* v = find(key);
  return resolved_[key] = v ? *v : fallback;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto* v = find(key);
  const double out = v ? parse_whole<double>(key, *v, "a number") : fallback;
  resolved_[key] = detail::format_number(out);
  return out;
}

int Config::get_int(const std::string& key, int fallback) const {
  const auto* v = find(key);
  const int out = v ? parse_whole<int>(key, *v, "an integer") : fallback;
  resolved_[key] = std::to_string(out);
  return out;
}

std::uint64_t Config::get_uint(const std::string& key, std::uint64_t fallback) const {
  const auto* v = find(key);
  const auto out = v ? parse_whole<std::uint64_t>(key, *v, "a non-negative integer") : fallback;
  resolved_[key] = std::to_string(out);
  return out;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto* v = find(key);
  bool out = fallback;
  if (v) {
    if (*v == "true" || *v == "1" || *v == "yes")
      out = true;
    else if (*v == "false" || *v == "0" || *v == "no")
      out = false;
    else
      throw bad_value(key, *v, "a boolean");
  }
  resolved_[key] = out ? "true" : "false";
  return out;
}

Eigen::Vector3d Config::get_vec3(const std::string& key, const Eigen::Vector3d& fallback) const {
  const auto* v = find(key);
  auto note = [&](const Eigen::Vector3d& x) {
    resolved_[key] = detail::format_number(x[0]) + " " + detail::format_number(x[1]) + " " + detail::format_number(x[2]);
    return x;
  };
  if (!v) return note(fallback);
  std::string text = *v;
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream in(text);
  Eigen::Vector3d out;
  std::string token;
  int n = 0;
  while (in >> token) {
    if (n == 3) throw bad_value(key, *v, "three numbers");
    out[n++] = parse_whole<double>(key, token, "three numbers");
  }
  if (n != 3) throw bad_value(key, *v, "three numbers");
  return note(out);
}

void Config::check_all_used() const {
  std::string unknown;
  for (const auto& [key, value] : values_)
    if (!used_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
  if (!unknown.empty()) throw Error(ErrorCode::InvalidArgument, "unknown config keys: " + unknown);
}

CameraModeld default_camera() { return CameraModeld::from_detector(256, 256, 2.4, 1020.0); }

CameraModeld camera_from(const Config& cfg) {
  const CameraModeld d = default_camera();
  auto camera = CameraModeld::from_detector(cfg.get_int("width", d.width), cfg.get_int("height", d.height),
                                            cfg.get_double("pixel_pitch", d.pixel_pitch),
                                            cfg.get_double("source_detector_distance", d.source_detector_distance));
  camera.validate();
  return camera;
}

IsoSurfaceSpec iso_from(const Config& cfg) {
  IsoSurfaceSpec iso;
  iso.threshold = cfg.get_double("iso_threshold", iso.threshold);
  iso.refine_tolerance = cfg.get_double("refine_tolerance", iso.refine_tolerance);
  iso.step = cfg.get_double("march_step", iso.step);
  if (!(iso.refine_tolerance > 0) || !(iso.step > 0))
    throw Error(ErrorCode::InvalidArgument, "refine_tolerance and march_step must be positive");
  return iso;
}

DrrConfig drr_from(const Config& cfg) {
  DrrConfig drr;
  drr.step = cfg.get_double("drr_step", drr.step);
  drr.mu_water = cfg.get_double("mu_water", drr.mu_water);
  drr.hu_air_cutoff = cfg.get_double("hu_air_cutoff", drr.hu_air_cutoff);
  drr.output = parse_drr_output(cfg.get_string("drr_output", std::string(to_string(drr.output))));
  drr.validate();
  return drr;
}

ProtocolSpec protocol_from(const Config& cfg) {
  ProtocolSpec p;
  p.alpha = {cfg.get_double("alpha_min", p.alpha.min), cfg.get_double("alpha_max", p.alpha.max),
             cfg.get_double("alpha_step", p.alpha.step)};
  p.beta = {cfg.get_double("beta_min", p.beta.min), cfg.get_double("beta_max", p.beta.max),
            cfg.get_double("beta_step", p.beta.step)};
  p.offset_sigma_mm = cfg.get_vec3("offset_sigma_mm", p.offset_sigma_mm);
  const int grid = static_cast<int>(p.alpha.values().size() * p.beta.values().size());
  p.total_views = cfg.get_int("total_views", grid);
  const SplitCounts fallback = p.total_views == p.split.total() ? p.split : SplitCounts::proportional(p.total_views);
  p.split.train = cfg.get_int("split_train", fallback.train);
  p.split.val = cfg.get_int("split_val", fallback.val);
  p.split.test = cfg.get_int("split_test", fallback.test);
  p.seed = cfg.get_uint("seed", p.seed);
  p.source_isocenter_distance = cfg.get_double("source_isocenter_distance", p.source_isocenter_distance);
  if (cfg.has("isocenter")) p.isocenter = cfg.get_vec3("isocenter", Eigen::Vector3d::Zero());
  p.validate();
  return p;
}

RansacConfig ransac_from(const Config& cfg) {
  RansacConfig r;
  r.max_iterations = cfg.get_int("ransac_iters", r.max_iterations);
  r.reproj_threshold_px = cfg.get_double("reproj_px", r.reproj_threshold_px);
  r.min_sample = cfg.get_int("min_sample", r.min_sample);
  r.confidence = cfg.get_double("confidence", r.confidence);
  r.early_exit = cfg.get_bool("early_exit", r.early_exit);
  r.seed = cfg.get_uint("seed", r.seed);
  r.max_correspondences = cfg.get_int("max_correspondences", r.max_correspondences);
  r.lm_max_iterations = cfg.get_int("lm_max_iterations", r.lm_max_iterations);
  r.validate();
  return r;
}

NoiseSpec noise_from(const Config& cfg) {
  NoiseSpec n;
  n.sigma_mm = cfg.get_double("noise_sigma_mm", n.sigma_mm);
  n.sigma_jitter = cfg.get_double("noise_jitter", n.sigma_jitter);
  n.outlier_rate = cfg.get_double("outlier_rate", n.outlier_rate);
  n.honest_outliers = cfg.get_bool("honest_outliers", n.honest_outliers);
  n.seed = cfg.get_uint("seed", n.seed);
  n.validate();
  return n;
}

std::string describe(const std::map<std::string, std::string>& resolved) {
  std::string out;
  for (const auto& [key, value] : resolved) out += key + " = " + value + "\n";
  return out;
}

}  // namespace scr
