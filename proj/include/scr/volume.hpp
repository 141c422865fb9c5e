#pragma once

// CT volumes, trilinear sampling, ray/isosurface intersection and the
// monochromatic X-ray transform (DRR).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "scr/geometry.hpp"

namespace scr {

/// Row-major height x width image; (row, col) indexing.
using Image = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class VoxelType { Int16, Float32 };

/// Scalar CT grid in Hounsfield units. Voxel (i, j, k) has its centre at
/// origin + (i, j, k) .* spacing; storage is x-fastest.
struct Volume {
  Eigen::Vector3i dims = Eigen::Vector3i::Constant(2);
  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  std::vector<float> data;
  /// Element type used on disk; preserved so load/save round trips are exact.
  VoxelType storage = VoxelType::Float32;

  Volume() = default;
  Volume(const Eigen::Vector3i& dims, const Eigen::Vector3d& spacing, const Eigen::Vector3d& origin,
         float fill = 0.0f);

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims.x()) * dims.y() * dims.z();
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(dims.x()) * (j + static_cast<std::size_t>(dims.y()) * k);
  }
  float& at(int i, int j, int k) { return data[index(i, j, k)]; }
  float at(int i, int j, int k) const { return data[index(i, j, k)]; }

  Eigen::Vector3d voxel_center(int i, int j, int k) const {
    return origin + Eigen::Vector3d(i, j, k).cwiseProduct(spacing);
  }
  /// Axis-aligned hull of the voxel centres (the domain of trilinear sampling).
  Eigen::AlignedBox3d bounds() const;
  Eigen::Vector3d center() const { return bounds().center(); }

  /// Throws InvalidArgument / DimensionMismatch when the invariants fail.
  void validate() const;
};

struct IsoSurfaceSpec {
  double threshold = 300.0;       // HU
  double refine_tolerance = 1e-3;  // mm, bisection bracket width
  double step = 0.5;              // mm, march step used to detect crossings
};

enum class DrrOutput { LineIntegral, Attenuated, NegLog };

struct DrrConfig {
  double step = 0.5;             // mm
  double mu_water = 0.02;        // 1/mm
  double hu_air_cutoff = -900.0;  // HU
  DrrOutput output = DrrOutput::NegLog;

  void validate() const;
};

DrrOutput parse_drr_output(std::string_view name);
std::string_view to_string(DrrOutput output);

/// Volume file: text header (DIMS, SPACING, ORIGIN, TYPE, DATA=raw) followed
/// by the little-endian raw block.
Volume load_volume(const std::filesystem::path& path);
void save_volume(const Volume& v, const std::filesystem::path& path);

/// Trilinear interpolation; 0 HU (air) outside the voxel-centre hull.
double sample_trilinear(const Volume& v, const Eigen::Vector3d& point_world);

/// Ray parameter interval [t0, t1] (t0 >= 0) inside the box, if any.
std::optional<std::pair<double, double>> clip_ray(const Eigen::AlignedBox3d& box, const Rayd& ray);

struct Intersection {
  Eigen::Vector3d entry;
  Eigen::Vector3d exit;
  double entry_t = 0;  // distance along the ray, mm
  double exit_t = 0;
};

/// First and last crossing of the HU threshold along the ray, or nullopt
/// when the ray never crosses it.
std::optional<Intersection> intersect_isosurface(const Volume& v, const IsoSurfaceSpec& iso, const Rayd& ray);

double attenuation(double hu, const DrrConfig& cfg);

/// Line integral of attenuation along one ray, composite trapezoid.
double integrate_ray(const Volume& v, const Rayd& ray, const DrrConfig& cfg);

Image render_drr(const Volume& v, const CameraModeld& camera, const RigidTransformd& pose, const DrrConfig& cfg);

enum class ImageFormat { Pgm16, Csv };

void save_image(const Image& img, const std::filesystem::path& path, ImageFormat format);
/// Reads a binary 16-bit (or 8-bit) PGM into raw integer grey levels.
Image load_pgm(const std::filesystem::path& path);

/// Writes a binary PPM: grey base image, marked pixels in red.
void save_overlay_ppm(const Image& base, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& mask,
                      const std::filesystem::path& path);

}  // namespace scr
