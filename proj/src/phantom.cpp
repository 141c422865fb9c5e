#include "scr/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "scr/parallel.hpp"

namespace scr {

Volume make_ball_phantom(const PhantomGrid& grid, std::span<const Ball> balls, float inside_hu, float outside_hu,
                         double edge_mm) {
  if (grid.size < 2 || !(grid.spacing > 0)) throw Error(ErrorCode::InvalidArgument, "phantom grid needs size >= 2");
  if (balls.empty()) throw Error(ErrorCode::InvalidArgument, "phantom needs at least one ball");
  if (edge_mm < 0) throw Error(ErrorCode::InvalidArgument, "edge width must be >= 0");

  const Eigen::Vector3d origin = Eigen::Vector3d::Constant(-0.5 * (grid.size - 1) * grid.spacing);
  Volume v(Eigen::Vector3i::Constant(grid.size), Eigen::Vector3d::Constant(grid.spacing), origin, outside_hu);

  parallel_for(grid.size, [&](int k) {
    for (int j = 0; j < grid.size; ++j) {
      for (int i = 0; i < grid.size; ++i) {
        const Eigen::Vector3d p = v.voxel_center(i, j, k);
        double d = std::numeric_limits<double>::infinity();
        for (const Ball& b : balls) d = std::min(d, (p - b.center).norm() - b.radius);
        double f;
        if (edge_mm == 0.0)
          f = d <= 0 ? 1.0 : 0.0;
        else
          f = std::clamp(0.5 - d / edge_mm, 0.0, 1.0);
        v.at(i, j, k) = static_cast<float>(outside_hu + f * (inside_hu - outside_hu));
      }
    }
  });
  return v;
}

Volume make_sphere_phantom(const PhantomGrid& grid, double radius, float inside_hu, float outside_hu) {
  const Ball ball{Eigen::Vector3d::Zero(), radius};
  return make_ball_phantom(grid, std::span<const Ball>(&ball, 1), inside_hu, outside_hu);
}

std::vector<Ball> two_lobe_balls() {
  return {{Eigen::Vector3d(-18.0, -8.0, 4.0), 30.0}, {Eigen::Vector3d(24.0, 16.0, -6.0), 22.0}};
}

Volume make_two_lobe_phantom(const PhantomGrid& grid) { return make_ball_phantom(grid, two_lobe_balls()); }

LandmarkSet ball_landmarks(std::span<const Ball> balls) {
  static constexpr const char* kAxes[6] = {"+x", "-x", "+y", "-y", "+z", "-z"};
  LandmarkSet set;
  for (std::size_t b = 0; b < balls.size(); ++b) {
    const std::string prefix = "lobe" + std::to_string(b);
    set.points.push_back({prefix + "_center", balls[b].center});
    for (int a = 0; a < 6; ++a) {
      Eigen::Vector3d dir = Eigen::Vector3d::Zero();
      dir[a / 2] = a % 2 == 0 ? 1.0 : -1.0;
      set.points.push_back({prefix + "_" + kAxes[a], balls[b].center + balls[b].radius * dir});
    }
  }
  return set;
}

LandmarkSet two_lobe_landmarks() { return ball_landmarks(two_lobe_balls()); }

}  // namespace scr
