#pragma once

// Rigid pose from 2D-3D correspondences: minimal-sample hypotheses, RANSAC
// consensus and Levenberg-Marquardt reprojection refinement.

#include <cstdint>
#include <span>
#include <vector>

#include "scr/geometry.hpp"
#include "scr/scene_coords.hpp"

namespace scr {

struct RansacConfig {
  int max_iterations = 1000;
  double reproj_threshold_px = 10.0;
  int min_sample = 4;
  /// Early exit once the adaptive bound log(1 - c) / log(1 - w^s) is met.
  double confidence = 0.999;
  bool early_exit = true;
  std::uint64_t seed = 0;
  /// Correspondences are uniformly subsampled to at most this many.
  int max_correspondences = 4000;
  int lm_max_iterations = 50;
  double lm_tolerance = 1e-10;

  void validate() const;
};

struct PoseEstimate {
  RigidTransformd pose;
  int inlier_count = 0;
  double inlier_ratio = 0;
  double mean_reproj_error_px = 0;  // over inliers
  int iterations_used = 0;
  bool converged = false;
  /// Indices (into the correspondences actually used) of the final inliers.
  std::vector<int> inliers;
  /// Number of correspondences after subsampling.
  int used_correspondences = 0;
};

/// Candidate poses from a P3P solve on the best-spread triple of the sample,
/// filtered for positive depth of every sample point and sorted by their
/// total reprojection error. Throws DegenerateConfiguration.
std::vector<RigidTransformd> pnp_minimal(std::span<const Correspondence> sample, const CameraModeld& camera);

struct RefineResult {
  RigidTransformd pose;
  double mean_reproj_error_px = 0;
  int iterations = 0;
};

/// Levenberg-Marquardt on sum ||project(X) - x||^2 with a left-multiplied
/// axis-angle / translation update. Points behind the camera at the initial
/// pose are left out. Never returns a pose with higher mean error than the
/// initial one. Throws AllPointsBehindCamera when fewer than three points are
/// in front of the camera.
RefineResult refine_lm(const RigidTransformd& initial, std::span<const Correspondence> correspondences,
                       const CameraModeld& camera, int max_iters = 50, double tol = 1e-10);

/// Reprojection error in px, +inf for points at or behind the source.
double reprojection_error(const CameraModeld& camera, const RigidTransformd& pose, const Correspondence& c);

/// Mean reprojection error over the given points (+inf if any is behind).
double mean_reprojection_error(const CameraModeld& camera, const RigidTransformd& pose,
                               std::span<const Correspondence> correspondences);

/// Full RANSAC registration. Deterministic for a given seed. Throws
/// InsufficientCorrespondences and NoConsensus.
PoseEstimate register_pose(const CorrespondenceSet& correspondences, const CameraModeld& camera,
                           const RansacConfig& cfg);

}  // namespace scr
