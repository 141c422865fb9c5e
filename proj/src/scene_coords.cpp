#include "scr/scene_coords.hpp"

#include <cmath>
#include <string>

#include "raw_format.hpp"
#include "scr/parallel.hpp"

namespace scr {

SceneCoordMap::SceneCoordMap(int width, int height) : width(width), height(height) {
  if (width < 1 || height < 1) throw Error(ErrorCode::InvalidArgument, "map size must be positive");
  const Eigen::Index n = size();
  entry = Points::Zero(3, n);
  exit = Points::Zero(3, n);
  entry_logvar = Eigen::VectorXf::Constant(n, kInvalidLogVar);
  exit_logvar = Eigen::VectorXf::Constant(n, kInvalidLogVar);
  valid.assign(static_cast<std::size_t>(n), 0);
}

void SceneCoordMap::set_invalid(Eigen::Index i) {
  entry.col(i).setZero();
  exit.col(i).setZero();
  entry_logvar[i] = kInvalidLogVar;
  exit_logvar[i] = kInvalidLogVar;
  valid[static_cast<std::size_t>(i)] = 0;
}

void SceneCoordMap::set(Eigen::Index i, const Eigen::Vector3d& entry_point, double entry_lv,
                        const Eigen::Vector3d& exit_point, double exit_lv) {
  entry.col(i) = entry_point.cast<float>();
  exit.col(i) = exit_point.cast<float>();
  entry_logvar[i] = static_cast<float>(entry_lv);
  exit_logvar[i] = static_cast<float>(exit_lv);
  valid[static_cast<std::size_t>(i)] = 1;
}

std::size_t SceneCoordMap::valid_count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

void SceneCoordMap::validate() const {
  const Eigen::Index n = size();
  if (entry.cols() != n || exit.cols() != n || entry_logvar.size() != n || exit_logvar.size() != n ||
      static_cast<Eigen::Index>(valid.size()) != n)
    throw Error(ErrorCode::DimensionMismatch, "scene-coordinate channels do not match width * height");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (valid[static_cast<std::size_t>(i)] && !(entry.col(i).allFinite() && exit.col(i).allFinite()))
      throw Error(ErrorCode::NonFiniteValue, "valid pixel with non-finite scene coordinate");
  }
}

bool operator==(const SceneCoordMap& a, const SceneCoordMap& b) {
  return a.width == b.width && a.height == b.height && a.entry == b.entry && a.exit == b.exit &&
         a.entry_logvar == b.entry_logvar && a.exit_logvar == b.exit_logvar && a.valid == b.valid;
}

void NoiseSpec::validate() const {
  if (!(sigma_mm >= 0)) throw Error(ErrorCode::InvalidArgument, "sigma_mm must be >= 0");
  if (!(sigma_jitter >= 0)) throw Error(ErrorCode::InvalidArgument, "sigma_jitter must be >= 0");
  if (!(outlier_rate >= 0 && outlier_rate <= 1))
    throw Error(ErrorCode::InvalidArgument, "outlier_rate must lie in [0, 1]");
}

SceneCoordMap generate_gt_map(const Volume& v, const IsoSurfaceSpec& iso, const CameraModeld& camera,
                              const RigidTransformd& pose) {
  camera.validate();
  SceneCoordMap map(camera.width, camera.height);
  parallel_for(camera.height, [&](int row) {
    for (int col = 0; col < camera.width; ++col) {
      const Rayd ray = pixel_ray(camera, pose, camera.pixel_center(col, row));
      if (const auto hit = intersect_isosurface(v, iso, ray))
        map.set(map.index(col, row), hit->entry, 0.0, hit->exit, 0.0);
    }
  });
  return map;
}

CorrespondenceSet filter_map(const SceneCoordMap& map, double logvar_threshold, bool entry_only) {
  CorrespondenceSet out;
  for (Eigen::Index i = 0; i < map.size(); ++i) {
    if (!map.valid[static_cast<std::size_t>(i)]) continue;
    const Eigen::Vector2d px(map.col_of(i) + 0.5, map.row_of(i) + 0.5);
    if (map.entry_logvar[i] <= logvar_threshold)
      out.push_back({px, map.entry.col(i).cast<double>(), map.entry_logvar[i], Channel::Entry});
    if (!entry_only && map.exit_logvar[i] <= logvar_threshold)
      out.push_back({px, map.exit.col(i).cast<double>(), map.exit_logvar[i], Channel::Exit});
  }
  return out;
}

IntersectingLoss nll_loss_intersecting(const Eigen::Vector3d& pred_mean, double pred_sigma,
                                       const Eigen::Vector3d& target) {
  if (!(pred_sigma > 0)) throw Error(ErrorCode::NonPositiveSigma, "sigma must be positive");
  const Eigen::Vector3d r = target - pred_mean;
  const double r2 = r.squaredNorm();
  const double s2 = pred_sigma * pred_sigma;
  IntersectingLoss out;
  out.loss = r2 / s2 + 2.0 * std::log(pred_sigma);
  out.grad_mean = -2.0 * r / s2;
  out.grad_sigma = -2.0 * r2 / (s2 * pred_sigma) + 2.0 / pred_sigma;
  return out;
}

NonexistentLoss nll_loss_nonexistent(double pred_sigma) {
  if (!(pred_sigma > 0)) throw Error(ErrorCode::NonPositiveSigma, "sigma must be positive");
  return {1.0 / pred_sigma, -1.0 / (pred_sigma * pred_sigma)};
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

void save_map(const SceneCoordMap& map, const std::filesystem::path& path) {
  map.validate();
  std::string out = "WIDTH=" + std::to_string(map.width) + "\nHEIGHT=" + std::to_string(map.height) +
                    "\nCHANNELS=8\nTYPE=float32\nDATA=raw\n";
  const Eigen::Index n = map.size();
  out.reserve(out.size() + static_cast<std::size_t>(n) * 8 * 4);
  auto plane = [&](auto&& value_of) {
    for (Eigen::Index i = 0; i < n; ++i) detail::store_le<float>(value_of(i), out);
  };
  for (int a = 0; a < 3; ++a) plane([&](Eigen::Index i) { return map.entry(a, i); });
  plane([&](Eigen::Index i) { return map.entry_logvar[i]; });
  for (int a = 0; a < 3; ++a) plane([&](Eigen::Index i) { return map.exit(a, i); });
  plane([&](Eigen::Index i) { return map.exit_logvar[i]; });
  detail::write_file(path, out);
}

SceneCoordMap load_map(const std::filesystem::path& path) {
  const detail::RawFile f = detail::parse_raw_file(detail::read_file(path), path);
  const long long w = detail::parse_integer(detail::require_key(f, "WIDTH", path), "WIDTH", path);
  const long long h = detail::parse_integer(detail::require_key(f, "HEIGHT", path), "HEIGHT", path);
  const long long channels = detail::parse_integer(detail::require_key(f, "CHANNELS", path), "CHANNELS", path);
  if (channels != 8) throw Error(ErrorCode::ParseError, path.string() + ": expected CHANNELS=8");
  if (detail::require_key(f, "TYPE", path) != "float32")
    throw Error(ErrorCode::ParseError, path.string() + ": expected TYPE=float32");
  if (w < 1 || h < 1 || w > 1 << 16 || h > 1 << 16)
    throw Error(ErrorCode::ParseError, path.string() + ": bad map size");

  SceneCoordMap map(static_cast<int>(w), static_cast<int>(h));
  const Eigen::Index n = map.size();
  const std::size_t expected = static_cast<std::size_t>(n) * 8 * 4;
  if (f.payload.size() != expected)
    throw Error(ErrorCode::DimensionMismatch, path.string() + ": payload has " + std::to_string(f.payload.size()) +
                                                  " bytes, header declares " + std::to_string(expected));
  const char* p = f.payload.data();
  auto plane = [&](int c, Eigen::Index i) { return detail::load_le<float>(p + 4 * (static_cast<std::size_t>(c) * n + i)); };
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      map.entry(a, i) = plane(a, i);
      map.exit(a, i) = plane(4 + a, i);
    }
    map.entry_logvar[i] = plane(3, i);
    map.exit_logvar[i] = plane(7, i);
    // Validity is implied by the channels: finite coordinates and a log
    // variance below the sentinel in both channels.
    const bool ok = map.entry.col(i).allFinite() && map.exit.col(i).allFinite() &&
                    map.entry_logvar[i] < kInvalidLogVar && map.exit_logvar[i] < kInvalidLogVar;
    if (ok) map.valid[static_cast<std::size_t>(i)] = 1;
    else map.set_invalid(i);
  }
  return map;
}

}  // namespace scr
