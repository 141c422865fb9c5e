#pragma once

// Rigid transforms, pinhole projection and the C-arm pose parameterization.
//
// Conventions used throughout the library:
//   * A RigidTransform maps world points into the camera frame: Xc = R * Xw + t.
//   * Camera frame: +z is the principal (viewing) axis, +x follows image
//     columns, +y follows image rows.
//   * Integer pixel (i, j) (column, row) is the continuous coordinate
//     (i + 0.5, j + 0.5); the continuous image domain is [0, W) x [0, H).

#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "scr/error.hpp"

namespace scr {

template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Matrix4 = Eigen::Matrix<Scalar, 4, 4>;

template <typename Scalar>
constexpr Scalar deg2rad(Scalar deg) {
  return deg * std::numbers::pi_v<Scalar> / Scalar(180);
}

/// Project a nearly orthonormal matrix onto SO(3).
template <typename Derived>
Matrix3<typename Derived::Scalar> nearest_rotation(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Eigen::JacobiSVD<Matrix3<Scalar>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3<Scalar> d = Matrix3<Scalar>::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? Scalar(-1) : Scalar(1);
  return svd.matrixU() * d * svd.matrixV().transpose();
}

/// Max-abs deviation of R^T R from identity.
template <typename Derived>
typename Derived::Scalar orthonormality_error(const Eigen::MatrixBase<Derived>& r) {
  using Scalar = typename Derived::Scalar;
  return (r.transpose() * r - Matrix3<Scalar>::Identity()).cwiseAbs().maxCoeff();
}

/// World-to-camera rigid motion [R | t].
template <typename Scalar>
class RigidTransform {
 public:
  using Rotation = Matrix3<Scalar>;
  using Translation = Vector3<Scalar>;

  RigidTransform() : rotation_(Rotation::Identity()), translation_(Translation::Zero()) {}
  RigidTransform(const Rotation& rotation, const Translation& translation)
      : rotation_(rotation), translation_(translation) {}

  static RigidTransform Identity() { return RigidTransform(); }
  static RigidTransform FromTranslation(const Translation& t) { return {Rotation::Identity(), t}; }

  const Rotation& rotation() const { return rotation_; }
  const Translation& translation() const { return translation_; }

  Translation operator*(const Translation& x) const { return rotation_ * x + translation_; }

  RigidTransform inverse() const {
    const Rotation rt = rotation_.transpose();
    return {rt, -(rt * translation_)};
  }

  Matrix4<Scalar> matrix() const {
    Matrix4<Scalar> m = Matrix4<Scalar>::Identity();
    m.template topLeftCorner<3, 3>() = rotation_;
    m.template topRightCorner<3, 1>() = translation_;
    return m;
  }

  /// Camera (source) position in world coordinates: -R^T t.
  Translation center() const { return -(rotation_.transpose() * translation_); }

  bool is_valid(Scalar tol = Scalar(1e-9)) const {
    return orthonormality_error(rotation_) <= tol &&
           std::abs(rotation_.determinant() - Scalar(1)) <= tol && translation_.allFinite();
  }

  template <typename Other>
  RigidTransform<Other> cast() const {
    return {rotation_.template cast<Other>(), translation_.template cast<Other>()};
  }

 private:
  Rotation rotation_;
  Translation translation_;
};

using RigidTransformd = RigidTransform<double>;

/// (a o b)(x) = a(b(x)). Re-orthonormalizes when round-off drift exceeds 1e-12.
template <typename Scalar>
RigidTransform<Scalar> compose(const RigidTransform<Scalar>& a, const RigidTransform<Scalar>& b) {
  Matrix3<Scalar> r = a.rotation() * b.rotation();
  if (orthonormality_error(r) > Scalar(1e-12)) r = nearest_rotation(r);
  return {r, a.rotation() * b.translation() + a.translation()};
}

template <typename Scalar>
RigidTransform<Scalar> invert(const RigidTransform<Scalar>& t) {
  return t.inverse();
}

/// Pinhole camera with a flat detector. Pixel units for the intrinsics,
/// millimetres for the detector geometry.
template <typename Scalar>
struct CameraModel {
  Scalar fx = 1;
  Scalar fy = 1;
  Scalar cx = 0;
  Scalar cy = 0;
  int width = 1;
  int height = 1;
  Scalar pixel_pitch = 1;
  Scalar source_detector_distance = 1;

  /// Square-pixel detector centred on the principal ray.
  static CameraModel from_detector(int width, int height, Scalar pixel_pitch,
                                   Scalar source_detector_distance) {
    CameraModel c;
    c.fx = c.fy = source_detector_distance / pixel_pitch;
    c.cx = Scalar(width) / 2;
    c.cy = Scalar(height) / 2;
    c.width = width;
    c.height = height;
    c.pixel_pitch = pixel_pitch;
    c.source_detector_distance = source_detector_distance;
    return c;
  }

  Matrix3<Scalar> intrinsics() const {
    Matrix3<Scalar> k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  bool contains(const Vector2<Scalar>& px) const {
    return px.x() >= 0 && px.y() >= 0 && px.x() < Scalar(width) && px.y() < Scalar(height);
  }

  Vector2<Scalar> pixel_center(int col, int row) const {
    return {Scalar(col) + Scalar(0.5), Scalar(row) + Scalar(0.5)};
  }

  /// Throws InvalidArgument when the model is not physically consistent.
  void validate() const {
    if (!(fx > 0 && fy > 0 && pixel_pitch > 0 && source_detector_distance > 0))
      throw Error(ErrorCode::InvalidArgument, "camera focal lengths and detector geometry must be positive");
    if (width < 1 || height < 1) throw Error(ErrorCode::InvalidArgument, "camera image size must be positive");
    if (std::abs(fx * pixel_pitch - source_detector_distance) > Scalar(1e-6) * source_detector_distance)
      throw Error(ErrorCode::InvalidArgument, "fx * pixel_pitch must equal source_detector_distance");
  }
};

using CameraModeld = CameraModel<double>;

template <typename Scalar>
struct Ray {
  Vector3<Scalar> origin;
  Vector3<Scalar> direction;  // unit length

  Vector3<Scalar> at(Scalar s) const { return origin + s * direction; }
};

using Rayd = Ray<double>;

namespace detail {
template <typename Scalar>
void check_in_bounds(const CameraModel<Scalar>& camera, const Vector2<Scalar>& pixel) {
  if (!camera.contains(pixel)) throw Error(ErrorCode::PixelOutOfBounds, "pixel outside the image domain");
}
}  // namespace detail

template <typename Scalar>
Vector2<Scalar> project_camera_point(const CameraModel<Scalar>& camera, const Vector3<Scalar>& xc) {
  if (xc.z() <= Scalar(1e-9)) throw Error(ErrorCode::NonPositiveDepth, "point at or behind the source");
  return {camera.fx * xc.x() / xc.z() + camera.cx, camera.fy * xc.y() / xc.z() + camera.cy};
}

template <typename Scalar>
Vector2<Scalar> project(const CameraModel<Scalar>& camera, const RigidTransform<Scalar>& pose,
                        const Vector3<Scalar>& point_world) {
  return project_camera_point(camera, Vector3<Scalar>(pose * point_world));
}

/// K^-1 [u v 1]^T: the camera-frame direction through a pixel, with z = 1.
template <typename Scalar>
Vector3<Scalar> normalized_ray(const CameraModel<Scalar>& camera, const Vector2<Scalar>& pixel) {
  return {(pixel.x() - camera.cx) / camera.fx, (pixel.y() - camera.cy) / camera.fy, Scalar(1)};
}

/// World point seen at `pixel` with camera-frame depth `depth`: R^T (d K^-1 x - t).
template <typename Scalar>
Vector3<Scalar> backproject(const CameraModel<Scalar>& camera, const RigidTransform<Scalar>& pose,
                            const Vector2<Scalar>& pixel, Scalar depth) {
  if (!(depth > 0)) throw Error(ErrorCode::NonPositiveDepth, "backprojection depth must be positive");
  detail::check_in_bounds(camera, pixel);
  const Vector3<Scalar> xc = depth * normalized_ray(camera, pixel);
  return pose.rotation().transpose() * (xc - pose.translation());
}

template <typename Scalar>
Ray<Scalar> pixel_ray(const CameraModel<Scalar>& camera, const RigidTransform<Scalar>& pose,
                      const Vector2<Scalar>& pixel) {
  detail::check_in_bounds(camera, pixel);
  return {pose.center(), (pose.rotation().transpose() * normalized_ray(camera, pixel)).normalized()};
}

/// C-arm pose in the world (patient / volume) frame.
///
/// World axes: x lateral, y longitudinal, z anterior-posterior. At
/// alpha = beta = 0 the source sits at isocenter - sid * z looking along +z.
/// alpha (LAO/RAO) rotates the gantry about the longitudinal y axis, then
/// beta (cranial/caudal) about the lateral x axis, both about the isocenter
/// after it has been shifted by `offset`.
template <typename Scalar>
struct CArmPose {
  Scalar alpha_deg = 0;
  Scalar beta_deg = 0;
  Vector3<Scalar> offset = Vector3<Scalar>::Zero();
  Vector3<Scalar> isocenter = Vector3<Scalar>::Zero();
  Scalar source_isocenter_distance = 765;  // mm

  void validate() const {
    if (!(std::abs(alpha_deg) <= 90 && std::abs(beta_deg) <= 90))
      throw Error(ErrorCode::InvalidArgument, "C-arm angles must lie in [-90, 90] degrees");
    if (!(source_isocenter_distance > 0))
      throw Error(ErrorCode::InvalidArgument, "source_isocenter_distance must be positive");
  }
};

using CArmPosed = CArmPose<double>;

/// Camera-to-world rotation of the gantry: Rx(beta) * Ry(alpha).
template <typename Scalar>
Matrix3<Scalar> carm_rotation(Scalar alpha_deg, Scalar beta_deg) {
  using AA = Eigen::AngleAxis<Scalar>;
  return (AA(deg2rad(beta_deg), Vector3<Scalar>::UnitX()) * AA(deg2rad(alpha_deg), Vector3<Scalar>::UnitY()))
      .toRotationMatrix();
}

template <typename Scalar>
RigidTransform<Scalar> carm_to_extrinsic(const CArmPose<Scalar>& pose) {
  pose.validate();
  const Matrix3<Scalar> cam_to_world = carm_rotation(pose.alpha_deg, pose.beta_deg);
  const Vector3<Scalar> center =
      pose.isocenter + pose.offset - pose.source_isocenter_distance * cam_to_world.col(2);
  const Matrix3<Scalar> r = cam_to_world.transpose();
  return {r, -(r * center)};
}

}  // namespace scr
