#pragma once

// Registration metrics (mTRE, projected mTRE, gross failure rate),
// percentile reports and projection overlays.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "scr/geometry.hpp"
#include "scr/scene_coords.hpp"
#include "scr/volume.hpp"

namespace scr {

struct Landmark {
  std::string name;
  Eigen::Vector3d position;  // world, mm
};

struct LandmarkSet {
  std::vector<Landmark> points;

  std::size_t size() const { return points.size(); }
  /// N >= 1, unique names, finite points.
  void validate() const;
};

/// JSON array of {"name": ..., "xyz_mm": [x, y, z]}.
LandmarkSet load_landmarks(const std::filesystem::path& path);
void save_landmarks(const LandmarkSet& landmarks, const std::filesystem::path& path);

/// Mean camera-frame distance between landmarks mapped by the true and the
/// estimated pose, mm.
double mtre(const LandmarkSet& landmarks, const RigidTransformd& pose_true, const RigidTransformd& pose_est);

/// Mean detector-plane distance (pixel distance times pixel pitch), mm.
double proj_mtre(const LandmarkSet& landmarks, const CameraModeld& camera, const RigidTransformd& pose_true,
                 const RigidTransformd& pose_est);

inline constexpr double kDefaultFailureThresholdMm = 10.0;

/// Fraction of values strictly greater than the threshold. Unregistered
/// views enter as +inf and therefore count as failures.
double gfr(std::span<const double> mtres, double failure_threshold = kDefaultFailureThresholdMm);

/// Linear interpolation between order statistics (position q * (n - 1)).
double percentile(std::span<const double> sorted_values, double q);

struct MetricReport {
  std::vector<double> values;  // per view, input order
  double p25 = 0;
  double p50 = 0;
  double p95 = 0;
  double gfr = 0;
  double failure_threshold = kDefaultFailureThresholdMm;
  int n_views = 0;
  int n_failures_unregistered = 0;

  /// {p25_mm, p50_mm, p95_mm, gfr, n_views, n_failures}; +inf is written as null.
  std::string to_json() const;
  /// Fixed-width table: 25th / 50th / 95th percentile and GFR in percent.
  std::string to_text(const std::string& label = "mTRE[mm]") const;
};

MetricReport report(std::span<const double> mtres, double failure_threshold = kDefaultFailureThresholdMm);

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Edge pixels of a scene-coordinate map: valid pixels bordering an invalid
/// one, plus valid pixels whose entry depth jumps by more than
/// depth_jump_factor * median depth to a valid neighbour.
Mask map_edges(const SceneCoordMap& map, const RigidTransformd& pose, double depth_jump_factor = 0.05);

/// Isosurface outline under pose_est, drawn at the base image's maximum.
Image render_overlay(const Volume& v, const IsoSurfaceSpec& iso, const CameraModeld& camera,
                     const RigidTransformd& pose_est, const Image& base_image, Mask* edges_out = nullptr);

}  // namespace scr
