#pragma once

// Scene-coordinate maps: per-pixel world points where the pixel ray first
// enters and last leaves the bone isosurface, with a per-point log variance.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "scr/geometry.hpp"
#include "scr/volume.hpp"

namespace scr {

/// Log variance carried by pixels without a scene coordinate.
inline constexpr float kInvalidLogVar = 1e6f;

enum class Channel : std::uint8_t { Entry, Exit };

/// Dense 8-channel map. Pixel (col, row) lives at index row * width + col.
/// Invalid pixels hold zero coordinates and kInvalidLogVar in both channels.
struct SceneCoordMap {
  using Points = Eigen::Matrix<float, 3, Eigen::Dynamic>;

  int width = 0;
  int height = 0;
  Points entry;
  Eigen::VectorXf entry_logvar;
  Points exit;
  Eigen::VectorXf exit_logvar;
  std::vector<std::uint8_t> valid;

  SceneCoordMap() = default;
  /// All-invalid map.
  SceneCoordMap(int width, int height);

  Eigen::Index size() const { return static_cast<Eigen::Index>(width) * height; }
  Eigen::Index index(int col, int row) const { return static_cast<Eigen::Index>(row) * width + col; }
  int col_of(Eigen::Index i) const { return static_cast<int>(i % width); }
  int row_of(Eigen::Index i) const { return static_cast<int>(i / width); }

  void set_invalid(Eigen::Index i);
  void set(Eigen::Index i, const Eigen::Vector3d& entry_point, double entry_lv, const Eigen::Vector3d& exit_point,
           double exit_lv);

  std::size_t valid_count() const;
  /// Throws DimensionMismatch / NonFiniteValue on a broken map.
  void validate() const;

  friend bool operator==(const SceneCoordMap& a, const SceneCoordMap& b);
};

struct Correspondence {
  Eigen::Vector2d pixel;       // continuous pixel coordinate
  Eigen::Vector3d point;       // world, mm
  double logvar = 0;
  Channel which = Channel::Entry;
};

using CorrespondenceSet = std::vector<Correspondence>;

/// Isotropic noise model used to emulate a regressor's output.
struct NoiseSpec {
  double sigma_mm = 1.0;
  double sigma_jitter = 0.5;
  double outlier_rate = 0.0;
  std::uint64_t seed = 0;
  /// Outliers get a high log variance instead of keeping the inlier one.
  bool honest_outliers = false;

  void validate() const;
};

/// Ground-truth map: pixel rays intersected with the isosurface. Hits carry
/// logvar 0.
SceneCoordMap generate_gt_map(const Volume& v, const IsoSurfaceSpec& iso, const CameraModeld& camera,
                              const RigidTransformd& pose);

/// Entry and exit channels are filtered independently; a point passes when
/// its logvar <= threshold.
CorrespondenceSet filter_map(const SceneCoordMap& map, double logvar_threshold, bool entry_only = false);

struct IntersectingLoss {
  double loss = 0;
  Eigen::Vector3d grad_mean = Eigen::Vector3d::Zero();
  double grad_sigma = 0;
};

/// ||target - mean||^2 / sigma^2 + 2 ln sigma, with analytic gradients.
IntersectingLoss nll_loss_intersecting(const Eigen::Vector3d& pred_mean, double pred_sigma,
                                       const Eigen::Vector3d& target);

struct NonexistentLoss {
  double loss = 0;
  double grad_sigma = 0;
};

/// 1 / sigma.
NonexistentLoss nll_loss_nonexistent(double pred_sigma);

/// Map file: WIDTH, HEIGHT, CHANNELS=8, TYPE=float32 header, then planar
/// little-endian channels entry_xyz, entry_logvar, exit_xyz, exit_logvar.
void save_map(const SceneCoordMap& map, const std::filesystem::path& path);
SceneCoordMap load_map(const std::filesystem::path& path);

}  // namespace scr
