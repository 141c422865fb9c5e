#pragma once

// Simulated C-arm dataset protocol and the correspondence providers that
// stand in for a trained scene-coordinate regressor.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "scr/geometry.hpp"
#include "scr/scene_coords.hpp"
#include "scr/volume.hpp"

namespace scr {

/// Half-open angle grid [min, max) with the given step, degrees.
struct AngleRange {
  double min = -45.0;
  double max = 45.0;
  double step = 1.0;

  std::vector<double> values() const;
};

struct SplitCounts {
  int train = 5184;
  int val = 1296;
  int test = 1620;

  int total() const { return train + val + test; }
  /// 64 / 16 / 20 percent, remainder to the test split.
  static SplitCounts proportional(int total_views);
};

struct ProtocolSpec {
  AngleRange alpha;
  AngleRange beta;
  /// Per world axis (x lateral, y longitudinal, z anterior-posterior).
  Eigen::Vector3d offset_sigma_mm{90.0, 30.0, 30.0};
  int total_views = 8100;
  SplitCounts split;
  std::uint64_t seed = 0;
  double source_isocenter_distance = 765.0;  // mm
  /// Defaults to the volume centre.
  std::optional<Eigen::Vector3d> isocenter;

  /// Split counts sum to total_views and the angle grid has total_views points.
  void validate() const;
};

enum class Split { Train, Val, Test };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct ManifestRecord {
  std::string id;
  Split split = Split::Train;
  CArmPosed carm;
  RigidTransformd pose;
  std::string image_path;  // relative to the dataset directory
  std::string map_path;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  /// Unique ids, distinct paths.
  void validate() const;
  const ManifestRecord* find(std::string_view id) const;
};

/// One pose per (alpha, beta) grid point, alpha-major, with Gaussian isocenter
/// offsets. Deterministic under spec.seed.
std::vector<CArmPosed> sample_poses(const ProtocolSpec& spec, const CameraModeld& camera,
                                    const Eigen::Vector3d& isocenter);

/// Poses, seeded split assignment and file layout, without rendering.
DatasetManifest plan_dataset(const ProtocolSpec& spec, const CameraModeld& camera, const Eigen::Vector3d& isocenter);

/// manifest.jsonl: one JSON record per view, in view order.
std::string manifest_jsonl(const DatasetManifest& manifest);
/// poses.jsonl: {id, alpha_deg, beta_deg, offset_mm, rotation, translation_mm}.
std::string poses_jsonl(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view jsonl, const std::filesystem::path& source = "manifest.jsonl");
DatasetManifest read_manifest(const std::filesystem::path& dataset_dir);

/// Geometry needed to reuse a dataset: stored as dataset.json.
struct DatasetInfo {
  CameraModeld camera;
  IsoSurfaceSpec iso;
  DrrConfig drr;
  ProtocolSpec protocol;
  std::string volume_file = "volume.vol";
};

void write_dataset_info(const DatasetInfo& info, const std::filesystem::path& dataset_dir);
DatasetInfo read_dataset_info(const std::filesystem::path& dataset_dir);

/// Renders DRR and ground-truth map per view and writes the dataset layout:
/// manifest.jsonl, poses.jsonl, dataset.json, volume.vol, images/, maps/.
DatasetManifest generate_dataset(const Volume& v, const IsoSurfaceSpec& iso, const CameraModeld& camera,
                                 const ProtocolSpec& spec, const DrrConfig& cfg,
                                 const std::filesystem::path& out_dir);

/// The stored ground-truth map, unmodified.
SceneCoordMap oracle_exact(const ManifestRecord& record, const std::filesystem::path& dataset_dir);

/// Log variance assigned when the per-pixel sigma is zero.
inline constexpr double kLogVarFloor = -20.0;
/// Log variance of an outlier when NoiseSpec::honest_outliers is set.
inline constexpr double kHonestOutlierLogVar = 10.0;

/// Heteroscedastic isotropic Gaussian corruption with uniform outliers drawn
/// from `outlier_box`. Validity mask and size are preserved.
SceneCoordMap oracle_noisy(const SceneCoordMap& map, const NoiseSpec& noise, const Eigen::AlignedBox3d& outlier_box);

/// A map produced by an external regressor, in the scene-coordinate file
/// format. Pixels with non-finite values are marked invalid.
SceneCoordMap load_external_map(const std::filesystem::path& path);

}  // namespace scr
