#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <vector>

#include "scr/geometry.hpp"
#include "support.hpp"

using namespace scr;
using scr::test::random_pose;

namespace {

CameraModeld square_camera(double f, double c, int size) {
  CameraModeld cam;
  cam.fx = cam.fy = f;
  cam.cx = cam.cy = c;
  cam.width = cam.height = size;
  cam.pixel_pitch = 1.0;
  cam.source_detector_distance = f;
  return cam;
}

}  // namespace

TEST_CASE("point on the optical axis projects to the principal point") {
  const auto cam = square_camera(1000, 256, 512);
  const Eigen::Vector2d px = project(cam, RigidTransformd::Identity(), Eigen::Vector3d(0, 0, 1000));
  CHECK(px.x() == doctest::Approx(256));
  CHECK(px.y() == doctest::Approx(256));
}

TEST_CASE("lateral point projects by similar triangles") {
  const auto cam = square_camera(1000, 256, 512);
  const Eigen::Vector2d px = project(cam, RigidTransformd::Identity(), Eigen::Vector3d(100, 0, 1000));
  CHECK(px.x() == doctest::Approx(356));
  CHECK(px.y() == doctest::Approx(256));
}

TEST_CASE("projection rejects points at or behind the source") {
  const auto cam = square_camera(1000, 256, 512);
  for (double z : {0.0, 1e-12, -5.0}) {
    try {
      project(cam, RigidTransformd::Identity(), Eigen::Vector3d(0, 0, z));
      FAIL("expected NonPositiveDepth");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonPositiveDepth);
    }
  }
}

TEST_CASE("project then backproject at the same depth recovers the point") {
  std::mt19937_64 rng(1);
  const auto cam = CameraModeld::from_detector(512, 384, 0.5, 1000.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  for (int n = 0; n < 1000; ++n) {
    const RigidTransformd pose = random_pose(rng);
    // Sample a pixel and depth, then build the world point through the inverse pose.
    const Eigen::Vector2d px(u(rng) * cam.width, u(rng) * cam.height);
    const double depth = 200.0 + 1500.0 * u(rng);
    const Eigen::Vector3d xc = depth * normalized_ray(cam, px);
    const Eigen::Vector3d xw = pose.inverse() * xc;

    const Eigen::Vector2d p = project(cam, pose, xw);
    const double d = (pose * xw).z();
    CHECK((backproject(cam, pose, p, d) - xw).norm() <= 1e-6);
    CHECK((project(cam, pose, backproject(cam, pose, px, depth)) - px).norm() <= 1e-6);
    ++checked;
  }
  CHECK(checked == 1000);
}

TEST_CASE("backproject along the principal ray") {
  const auto cam = square_camera(1000, 256, 512);
  const Eigen::Vector3d x = backproject(cam, RigidTransformd::Identity(), Eigen::Vector2d(256, 256), 500.0);
  CHECK((x - Eigen::Vector3d(0, 0, 500)).norm() < 1e-12);
}

TEST_CASE("backproject from a source 800 mm behind the origin lands on the origin") {
  // Source centre at world (0, 0, -800): Xc = Xw + (0, 0, 800).
  const auto cam = square_camera(1000, 256, 512);
  const auto pose = RigidTransformd::FromTranslation(Eigen::Vector3d(0, 0, 800));
  CHECK((pose.center() - Eigen::Vector3d(0, 0, -800)).norm() < 1e-12);
  const Eigen::Vector3d x = backproject(cam, pose, Eigen::Vector2d(256, 256), 800.0);
  CHECK(x.norm() < 1e-12);
}

TEST_CASE("backproject validates depth and pixel") {
  const auto cam = square_camera(1000, 256, 512);
  const auto pose = RigidTransformd::Identity();
  auto code_of = [&](const Eigen::Vector2d& px, double d) {
    try {
      backproject(cam, pose, px, d);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(code_of({10, 10}, 0.0) == ErrorCode::NonPositiveDepth);
  CHECK(code_of({10, 10}, -1.0) == ErrorCode::NonPositiveDepth);
  CHECK(code_of({512, 10}, 10.0) == ErrorCode::PixelOutOfBounds);
  CHECK(code_of({-0.01, 10}, 10.0) == ErrorCode::PixelOutOfBounds);
  CHECK(code_of({10, 600}, 10.0) == ErrorCode::PixelOutOfBounds);
}

TEST_CASE("pixel_ray at the principal point of the identity pose") {
  const auto cam = square_camera(1000, 256, 512);
  const Rayd r = pixel_ray(cam, RigidTransformd::Identity(), Eigen::Vector2d(256, 256));
  CHECK(r.origin.norm() < 1e-15);
  CHECK((r.direction - Eigen::Vector3d(0, 0, 1)).norm() < 1e-15);
}

TEST_CASE("pixel_ray geometry under random poses") {
  std::mt19937_64 rng(2);
  const auto cam = CameraModeld::from_detector(256, 256, 1.0, 900.0);
  std::uniform_real_distribution<double> u(0.0, 256.0);
  for (int n = 0; n < 200; ++n) {
    const RigidTransformd pose = random_pose(rng);
    const Eigen::Vector2d px(u(rng), u(rng));
    const Rayd r = pixel_ray(cam, pose, px);
    CHECK(std::abs(r.direction.norm() - 1.0) <= 1e-12);
    CHECK((r.origin - pose.inverse() * Eigen::Vector3d::Zero()).norm() <= 1e-9);
    for (double d : {10.0, 100.0, 1000.0}) {
      const Eigen::Vector3d v = backproject(cam, pose, px, d) - r.origin;
      CHECK(v.cross(r.direction).norm() <= 1e-9 * v.norm());
      CHECK(v.dot(r.direction) > 0);
    }
    // The origin does not depend on the pixel.
    const Rayd other = pixel_ray(cam, pose, Eigen::Vector2d(u(rng), u(rng)));
    CHECK((other.origin - r.origin).norm() <= 1e-12);
  }
  CHECK_THROWS_AS(pixel_ray(cam, RigidTransformd::Identity(), Eigen::Vector2d(256, 0)), Error);
}

TEST_CASE("compose and invert") {
  std::mt19937_64 rng(3);
  const RigidTransformd t = random_pose(rng);
  const RigidTransformd ti = compose(t, RigidTransformd::Identity());
  CHECK((ti.matrix() - t.matrix()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((compose(RigidTransformd::Identity(), t).matrix() - t.matrix()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((compose(t, invert(t)).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((invert(invert(t)).matrix() - t.matrix()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((invert(RigidTransformd::Identity()).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() == 0);

  const auto shift = invert(RigidTransformd::FromTranslation(Eigen::Vector3d(0, 0, 5)));
  CHECK((shift.translation() - Eigen::Vector3d(0, 0, -5)).norm() == 0);
}

TEST_CASE("compose matches a hand-multiplied product of two quarter turns") {
  // a: 90 deg about z then shift (1, 0, 0); b: 90 deg about x then shift (0, 2, 0).
  Eigen::Matrix3d rz;
  rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  Eigen::Matrix3d rx;
  rx << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  const RigidTransformd a(rz, Eigen::Vector3d(1, 0, 0));
  const RigidTransformd b(rx, Eigen::Vector3d(0, 2, 0));
  Eigen::Matrix4d expected;
  expected << 0, 0, 1, -1,  //
      1, 0, 0, 0,           //
      0, 1, 0, 0,           //
      0, 0, 0, 1;
  CHECK((compose(a, b).matrix() - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("compose is associative and keeps rotations orthonormal") {
  std::mt19937_64 rng(4);
  for (int n = 0; n < 500; ++n) {
    const auto a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    const auto left = compose(compose(a, b), c);
    const auto right = compose(a, compose(b, c));
    CHECK((left.matrix() - right.matrix()).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(left.is_valid());
  }
}

TEST_CASE("compose re-orthonormalizes drifted rotations") {
  Eigen::Matrix3d drifted = Eigen::Matrix3d::Identity();
  drifted(0, 1) = 1e-7;
  const RigidTransformd a(drifted, Eigen::Vector3d::Zero());
  const auto c = compose(a, RigidTransformd::Identity());
  CHECK(orthonormality_error(c.rotation()) <= 1e-12);
  CHECK(c.is_valid());
}

TEST_CASE("C-arm reference orientation") {
  CArmPosed p;
  p.source_isocenter_distance = 765;
  const RigidTransformd e = carm_to_extrinsic(p);
  CHECK((e.center() - Eigen::Vector3d(0, 0, -765)).norm() < 1e-12);
  // Principal axis (camera +z) expressed in the world.
  CHECK((e.rotation().transpose() * Eigen::Vector3d::UnitZ() - Eigen::Vector3d::UnitZ()).norm() < 1e-15);
  CHECK((e * Eigen::Vector3d::Zero() - Eigen::Vector3d(0, 0, 765)).norm() < 1e-12);
}

TEST_CASE("alpha = 90 swings the source about the longitudinal axis") {
  CArmPosed p;
  p.alpha_deg = 90;
  p.source_isocenter_distance = 500;
  const RigidTransformd e = carm_to_extrinsic(p);
  // Hand-built rotation about y by +90 deg: z -> x, x -> -z.
  Eigen::Matrix3d ry;
  ry << 0, 0, 1, 0, 1, 0, -1, 0, 0;
  CHECK((e.rotation() - ry.transpose()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((e.center() - Eigen::Vector3d(-500, 0, 0)).norm() < 1e-12);
}

TEST_CASE("offset and isocenter translate the source rigidly") {
  CArmPosed p;
  p.alpha_deg = 30;
  p.beta_deg = -20;
  p.isocenter = Eigen::Vector3d(10, 20, 30);
  p.offset = Eigen::Vector3d(-5, 7, 1);
  CArmPosed q = p;
  q.isocenter.setZero();
  q.offset.setZero();
  const auto a = carm_to_extrinsic(p), b = carm_to_extrinsic(q);
  CHECK((a.rotation() - b.rotation()).norm() < 1e-15);
  CHECK((a.center() - b.center() - Eigen::Vector3d(5, 27, 31)).norm() < 1e-12);
  // The shifted isocenter stays on the principal ray, SID in front of the source.
  CHECK((a * Eigen::Vector3d(5, 27, 31) - Eigen::Vector3d(0, 0, 765)).norm() < 1e-9);
}

TEST_CASE("random C-arm poses give valid rigid transforms") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ang(-90, 90), off(-300, 300), sid(100, 2000);
  for (int n = 0; n < 10000; ++n) {
    CArmPosed p;
    p.alpha_deg = ang(rng);
    p.beta_deg = ang(rng);
    p.offset = Eigen::Vector3d(off(rng), off(rng), off(rng));
    p.isocenter = Eigen::Vector3d(off(rng), off(rng), off(rng));
    p.source_isocenter_distance = sid(rng);
    const auto e = carm_to_extrinsic(p);
    REQUIRE(e.is_valid(1e-9));
  }
}

TEST_CASE("C-arm angles map injectively onto rotations") {
  std::vector<Eigen::Matrix3d> rs;
  for (int a = -45; a < 45; ++a)
    for (int b = -45; b < 45; ++b) rs.push_back(carm_rotation<double>(a, b));
  double closest = 1e9;
  for (std::size_t i = 0; i < rs.size(); ++i)
    for (std::size_t j = i + 1; j < rs.size(); ++j) closest = std::min(closest, (rs[i] - rs[j]).norm());
  CHECK(closest >= 1e-6);
}

TEST_CASE("C-arm pose validation") {
  CArmPosed p;
  p.alpha_deg = 91;
  CHECK_THROWS_AS(carm_to_extrinsic(p), Error);
  p.alpha_deg = 0;
  p.source_isocenter_distance = 0;
  CHECK_THROWS_AS(carm_to_extrinsic(p), Error);
}

TEST_CASE("camera model consistency") {
  auto cam = CameraModeld::from_detector(100, 80, 0.3, 1200.0);
  CHECK_NOTHROW(cam.validate());
  CHECK(cam.cx == 50);
  CHECK(cam.cy == 40);
  CHECK(cam.fx * cam.pixel_pitch == doctest::Approx(1200));
  cam.fx *= 1.001;
  CHECK_THROWS_AS(cam.validate(), Error);
  cam = CameraModeld::from_detector(100, 80, 0.3, 1200.0);
  cam.pixel_pitch = -1;
  CHECK_THROWS_AS(cam.validate(), Error);
  CHECK(cam.pixel_center(0, 0) == Eigen::Vector2d(0.5, 0.5));
}

TEST_CASE("rigid transforms invariants") {
  std::mt19937_64 rng(6);
  const auto t = random_pose(rng);
  CHECK(t.is_valid());
  Eigen::Matrix3d reflect = Eigen::Matrix3d::Identity();
  reflect(2, 2) = -1;
  CHECK_FALSE(RigidTransformd(reflect, Eigen::Vector3d::Zero()).is_valid());
  CHECK_FALSE(RigidTransformd(2.0 * Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()).is_valid());
  CHECK(nearest_rotation(reflect * 1.0 + 1e-3 * Eigen::Matrix3d::Ones()).determinant() == doctest::Approx(1.0));
}

TEST_CASE("single precision instantiation") {
  const RigidTransform<float> t = RigidTransformd::FromTranslation(Eigen::Vector3d(1, 2, 3)).cast<float>();
  const auto cam = CameraModel<float>::from_detector(64, 64, 1.0f, 500.0f);
  const Eigen::Vector2f px = project(cam, t, Eigen::Vector3f(-1, -2, 497));
  CHECK(px.x() == doctest::Approx(32.0f));
  CHECK(px.y() == doctest::Approx(32.0f));
}
