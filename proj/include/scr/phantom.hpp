#pragma once

// Analytic test phantoms: unions of balls voxelized with a linear edge ramp,
// and the landmark sets that go with them.

#include <span>
#include <vector>

#include <Eigen/Core>

#include "scr/evaluation.hpp"
#include "scr/volume.hpp"

namespace scr {

struct Ball {
  Eigen::Vector3d center;  // world, mm
  double radius = 1.0;     // mm
};

struct PhantomGrid {
  int size = 128;        // voxels per axis
  double spacing = 1.0;  // mm
};

/// Cubic grid centred on the world origin. Each voxel takes the inside value
/// where the signed distance to the union of balls is below -edge_mm / 2 and
/// the outside value above +edge_mm / 2, linear in between. edge_mm = 0 gives
/// a hard boundary.
Volume make_ball_phantom(const PhantomGrid& grid, std::span<const Ball> balls, float inside_hu = 1000.0f,
                         float outside_hu = -1000.0f, double edge_mm = 1.0);

/// Single ball at the origin.
Volume make_sphere_phantom(const PhantomGrid& grid = {}, double radius = 40.0, float inside_hu = 1000.0f,
                           float outside_hu = -1000.0f);

/// Two overlapping lobes of unequal size; the asymmetry removes the
/// rotational ambiguity a single sphere would have.
std::vector<Ball> two_lobe_balls();
Volume make_two_lobe_phantom(const PhantomGrid& grid = {});

/// Ball centres plus the six axis-aligned surface points of each ball.
LandmarkSet ball_landmarks(std::span<const Ball> balls);
/// 14 landmarks on the two-lobe phantom.
LandmarkSet two_lobe_landmarks();

}  // namespace scr
