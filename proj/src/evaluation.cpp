#include "scr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include <json.hpp>

#include "raw_format.hpp"

namespace scr {

using nlohmann::json;

void LandmarkSet::validate() const {
  if (points.empty()) throw Error(ErrorCode::EmptyInput, "landmark set is empty");
  std::set<std::string> names;
  for (const auto& p : points) {
    if (!names.insert(p.name).second) throw Error(ErrorCode::InvalidArgument, "duplicate landmark name " + p.name);
    if (!p.position.allFinite()) throw Error(ErrorCode::NonFiniteValue, "landmark " + p.name + " is not finite");
  }
}

LandmarkSet load_landmarks(const std::filesystem::path& path) {
  LandmarkSet set;
  try {
    const json j = json::parse(detail::read_file(path));
    if (!j.is_array()) throw Error(ErrorCode::ParseError, path.string() + ": expected a JSON array");
    for (const auto& item : j) {
      const auto xyz = item.at("xyz_mm").get<std::vector<double>>();
      if (xyz.size() != 3) throw Error(ErrorCode::ParseError, path.string() + ": xyz_mm needs 3 values");
      set.points.push_back({item.at("name").get<std::string>(), {xyz[0], xyz[1], xyz[2]}});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  set.validate();
  return set;
}

void save_landmarks(const LandmarkSet& landmarks, const std::filesystem::path& path) {
  landmarks.validate();
  json j = json::array();
  for (const auto& p : landmarks.points)
    j.push_back({{"name", p.name}, {"xyz_mm", {p.position.x(), p.position.y(), p.position.z()}}});
  detail::write_file(path, j.dump(2) + "\n");
}

double mtre(const LandmarkSet& landmarks, const RigidTransformd& pose_true, const RigidTransformd& pose_est) {
  landmarks.validate();
  double sum = 0.0;
  for (const auto& p : landmarks.points) sum += ((pose_est * p.position) - (pose_true * p.position)).norm();
  return sum / static_cast<double>(landmarks.size());
}

double proj_mtre(const LandmarkSet& landmarks, const CameraModeld& camera, const RigidTransformd& pose_true,
                 const RigidTransformd& pose_est) {
  landmarks.validate();
  double sum = 0.0;
  for (const auto& p : landmarks.points) {
    const Eigen::Vector3d a = pose_true * p.position;
    const Eigen::Vector3d b = pose_est * p.position;
    if (a.z() <= 1e-9 || b.z() <= 1e-9)
      throw Error(ErrorCode::LandmarkBehindCamera, "landmark " + p.name + " is not in front of the source");
    sum += camera.pixel_pitch * (project_camera_point(camera, b) - project_camera_point(camera, a)).norm();
  }
  return sum / static_cast<double>(landmarks.size());
}

double gfr(std::span<const double> mtres, double failure_threshold) {
  if (mtres.empty()) throw Error(ErrorCode::EmptyInput, "no mTRE values");
  const auto failed = std::count_if(mtres.begin(), mtres.end(), [&](double m) { return !(m <= failure_threshold); });
  return static_cast<double>(failed) / static_cast<double>(mtres.size());
}

double percentile(std::span<const double> sorted_values, double q) {
  if (sorted_values.empty()) throw Error(ErrorCode::EmptyInput, "no values");
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted_values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted_values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  const double a = sorted_values[lo];
  const double b = sorted_values[hi];
  if (frac == 0.0 || a == b) return a;
  if (std::isinf(b)) return b;
  return a + frac * (b - a);
}

MetricReport report(std::span<const double> mtres, double failure_threshold) {
  if (mtres.empty()) throw Error(ErrorCode::EmptyInput, "no mTRE values");
  MetricReport r;
  r.values.assign(mtres.begin(), mtres.end());
  std::vector<double> sorted = r.values;
  // NaN would break the ordering; treat it as an unregistered view.
  for (double& v : sorted)
    if (std::isnan(v)) v = std::numeric_limits<double>::infinity();
  std::sort(sorted.begin(), sorted.end());
  r.p25 = percentile(sorted, 0.25);
  r.p50 = percentile(sorted, 0.50);
  r.p95 = percentile(sorted, 0.95);
  r.gfr = gfr(sorted, failure_threshold);
  r.failure_threshold = failure_threshold;
  r.n_views = static_cast<int>(sorted.size());
  r.n_failures_unregistered =
      static_cast<int>(std::count_if(sorted.begin(), sorted.end(), [](double v) { return std::isinf(v); }));
  return r;
}

std::string MetricReport::to_json() const {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j{{"p25_mm", num(p25)},     {"p50_mm", num(p50)}, {"p95_mm", num(p95)},
         {"gfr", gfr},             {"n_views", n_views}, {"n_failures", n_failures_unregistered},
         {"failure_threshold_mm", failure_threshold}};
  return j.dump(2) + "\n";
}

std::string MetricReport::to_text(const std::string& label) const {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-12s %10s %10s %10s %10s %8s\n", label.c_str(), "25th", "50th", "95th", "GFR[%]",
                "views");
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-12s %10.2f %10.2f %10.2f %10.2f %8d\n", "", p25, p50, p95, 100.0 * gfr, n_views);
  out += buf;
  return out;
}

// ---------------------------------------------------------------------------
// Overlay
// ---------------------------------------------------------------------------

Mask map_edges(const SceneCoordMap& map, const RigidTransformd& pose, double depth_jump_factor) {
  Mask edges = Mask::Constant(map.height, map.width, false);
  std::vector<double> depth(static_cast<std::size_t>(map.size()), 0.0);
  std::vector<double> valid_depths;
  for (Eigen::Index i = 0; i < map.size(); ++i) {
    if (!map.valid[static_cast<std::size_t>(i)]) continue;
    depth[static_cast<std::size_t>(i)] = (pose * map.entry.col(i).cast<double>()).z();
    valid_depths.push_back(depth[static_cast<std::size_t>(i)]);
  }
  if (valid_depths.empty()) return edges;
  std::nth_element(valid_depths.begin(), valid_depths.begin() + valid_depths.size() / 2, valid_depths.end());
  const double jump = depth_jump_factor * valid_depths[valid_depths.size() / 2];

  constexpr int kNeighbours[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (int row = 0; row < map.height; ++row) {
    for (int col = 0; col < map.width; ++col) {
      const Eigen::Index i = map.index(col, row);
      if (!map.valid[static_cast<std::size_t>(i)]) continue;
      for (const auto& d : kNeighbours) {
        const int c = col + d[0];
        const int r = row + d[1];
        if (c < 0 || r < 0 || c >= map.width || r >= map.height) continue;
        const Eigen::Index j = map.index(c, r);
        if (!map.valid[static_cast<std::size_t>(j)] ||
            std::abs(depth[static_cast<std::size_t>(i)] - depth[static_cast<std::size_t>(j)]) > jump) {
          edges(row, col) = true;
          break;
        }
      }
    }
  }
  return edges;
}

Image render_overlay(const Volume& v, const IsoSurfaceSpec& iso, const CameraModeld& camera,
                     const RigidTransformd& pose_est, const Image& base_image, Mask* edges_out) {
  if (base_image.rows() != camera.height || base_image.cols() != camera.width)
    throw Error(ErrorCode::DimensionMismatch, "base image does not match the camera size");
  const Mask edges = map_edges(generate_gt_map(v, iso, camera, pose_est), pose_est);
  Image out = base_image;
  if (edges.any()) {
    const double lo = base_image.minCoeff();
    const double hi = base_image.maxCoeff();
    const double mark = hi > lo ? hi : lo + 1.0;
    for (int r = 0; r < camera.height; ++r)
      for (int c = 0; c < camera.width; ++c)
        if (edges(r, c)) out(r, c) = mark;
  }
  if (edges_out) *edges_out = edges;
  return out;
}

}  // namespace scr
