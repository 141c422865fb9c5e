#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "scr/phantom.hpp"
#include "scr/volume.hpp"
#include "support.hpp"

using namespace scr;
using scr::test::scratch_dir;
using scr::test::slurp;
using scr::test::spit;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an scr::Error");
  return ErrorCode::InvalidArgument;
}

Volume random_volume(std::mt19937_64& rng, Eigen::Vector3i dims, VoxelType type) {
  Volume v(dims, Eigen::Vector3d(0.7, 1.1, 2.3), Eigen::Vector3d(-10.5, 3.25, 0.125));
  v.storage = type;
  std::uniform_real_distribution<float> u(-1000.0f, 3000.0f);
  for (auto& x : v.data) x = type == VoxelType::Int16 ? std::round(u(rng)) : u(rng);
  return v;
}

// Little-endian header + payload written by hand, independent of save_volume.
std::string volume_bytes(const std::string& header, const std::vector<std::int16_t>& values) {
  std::string out = header;
  for (std::int16_t x : values) {
    const auto u = static_cast<std::uint16_t>(x);
    out += static_cast<char>(u & 0xff);
    out += static_cast<char>(u >> 8);
  }
  return out;
}

Volume hard_sphere(double radius) {
  const Ball ball{Eigen::Vector3d::Zero(), radius};
  return make_ball_phantom({128, 1.0}, std::span(&ball, 1), 1000.0f, 0.0f, 0.0);
}

Rayd ray_x(double y, double z) { return {Eigen::Vector3d(-200, y, z), Eigen::Vector3d::UnitX()}; }

}  // namespace

TEST_CASE("volume round trips are bit exact") {
  const auto dir = scratch_dir("volume_roundtrip");
  std::mt19937_64 rng(7);
  for (VoxelType type : {VoxelType::Float32, VoxelType::Int16}) {
    const Volume v = random_volume(rng, {5, 4, 3}, type);
    save_volume(v, dir / "v.vol");
    const Volume w = load_volume(dir / "v.vol");
    CHECK(w.dims == v.dims);
    CHECK(w.spacing == v.spacing);
    CHECK(w.origin == v.origin);
    CHECK(w.storage == type);
    CHECK(std::memcmp(w.data.data(), v.data.data(), v.data.size() * sizeof(float)) == 0);
    // Saving again reproduces the file byte for byte.
    save_volume(w, dir / "w.vol");
    CHECK(slurp(dir / "v.vol") == slurp(dir / "w.vol"));
  }
}

TEST_CASE("hand-written volume file") {
  const auto dir = scratch_dir("volume_fixture");
  std::vector<std::int16_t> values(2 * 2 * 3);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<std::int16_t>(100 * i - 500);
  spit(dir / "a.vol",
       volume_bytes("DIMS=2 2 3\nSPACING=0.5 0.5 2\nORIGIN=1 2 3\nTYPE=int16\nDATA=raw\n", values));
  const Volume v = load_volume(dir / "a.vol");
  CHECK(v.dims == Eigen::Vector3i(2, 2, 3));
  CHECK(v.spacing == Eigen::Vector3d(0.5, 0.5, 2));
  CHECK(v.origin == Eigen::Vector3d(1, 2, 3));
  // x fastest, then y, then z.
  CHECK(v.at(1, 0, 0) == -400);
  CHECK(v.at(0, 1, 0) == -300);
  CHECK(v.at(0, 0, 1) == -100);
  CHECK(v.at(1, 1, 2) == 600);
  CHECK(v.voxel_center(1, 1, 2) == Eigen::Vector3d(1.5, 2.5, 7));
}

TEST_CASE("volume file errors") {
  const auto dir = scratch_dir("volume_errors");
  const std::vector<std::int16_t> eight(8, 0);
  const std::string good = "DIMS=2 2 2\nSPACING=1 1 1\nORIGIN=0 0 0\nTYPE=int16\nDATA=raw\n";

  CHECK(code_of([&] { load_volume(dir / "missing.vol"); }) == ErrorCode::IoError);

  spit(dir / "short.vol", volume_bytes(good, std::vector<std::int16_t>(7, 0)));
  CHECK(code_of([&] { load_volume(dir / "short.vol"); }) == ErrorCode::DimensionMismatch);

  spit(dir / "long.vol", volume_bytes(good, std::vector<std::int16_t>(9, 0)));
  CHECK(code_of([&] { load_volume(dir / "long.vol"); }) == ErrorCode::DimensionMismatch);

  spit(dir / "nodata.vol", "DIMS=2 2 2\nSPACING=1 1 1\nORIGIN=0 0 0\nTYPE=int16\n");
  CHECK(code_of([&] { load_volume(dir / "nodata.vol"); }) == ErrorCode::ParseError);

  spit(dir / "type.vol", volume_bytes("DIMS=2 2 2\nSPACING=1 1 1\nORIGIN=0 0 0\nTYPE=uint8\nDATA=raw\n", eight));
  CHECK(code_of([&] { load_volume(dir / "type.vol"); }) == ErrorCode::ParseError);

  spit(dir / "dims.vol", volume_bytes("DIMS=1 2 2\nSPACING=1 1 1\nORIGIN=0 0 0\nTYPE=int16\nDATA=raw\n", eight));
  CHECK(code_of([&] { load_volume(dir / "dims.vol"); }) == ErrorCode::ParseError);

  spit(dir / "spacing.vol", volume_bytes("DIMS=2 2 2\nSPACING=1 0 1\nORIGIN=0 0 0\nTYPE=int16\nDATA=raw\n", eight));
  CHECK(code_of([&] { load_volume(dir / "spacing.vol"); }) == ErrorCode::InvalidArgument);

  spit(dir / "garbage.vol", volume_bytes("DIMS=2 x 2\nSPACING=1 1 1\nORIGIN=0 0 0\nTYPE=int16\nDATA=raw\n", eight));
  CHECK(code_of([&] { load_volume(dir / "garbage.vol"); }) == ErrorCode::ParseError);

  Volume v({2, 2, 2}, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero());
  v.data.pop_back();
  CHECK(code_of([&] { v.validate(); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("trilinear sampling") {
  Volume v({3, 3, 3}, Eigen::Vector3d(1, 2, 0.5), Eigen::Vector3d(-1, 0, 4));
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(-100, 100);
  for (auto& x : v.data) x = u(rng);

  SUBCASE("voxel centres reproduce voxel values") {
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) CHECK(sample_trilinear(v, v.voxel_center(i, j, k)) == doctest::Approx(v.at(i, j, k)));
  }

  SUBCASE("midpoint between 0 and 100") {
    Volume w({2, 2, 2}, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero());
    for (int k = 0; k < 2; ++k)
      for (int j = 0; j < 2; ++j) w.at(1, j, k) = 100;
    CHECK(sample_trilinear(w, Eigen::Vector3d(0.5, 0.3, 0.9)) == doctest::Approx(50));
  }

  SUBCASE("affine fields are reproduced exactly") {
    const Eigen::Vector3d g(3, -2, 7);
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) v.at(i, j, k) = static_cast<float>(5 + g.dot(v.voxel_center(i, j, k)));
    const auto box = v.bounds();
    for (int n = 0; n < 200; ++n) {
      const Eigen::Vector3d p = box.sample();
      CHECK(sample_trilinear(v, p) == doctest::Approx(5 + g.dot(p)).epsilon(1e-9));
    }
  }

  SUBCASE("outside the hull is 0 HU") {
    CHECK(sample_trilinear(v, Eigen::Vector3d(-1.001, 1, 4.5)) == 0);
    CHECK(sample_trilinear(v, Eigen::Vector3d(0, 4.01, 4.5)) == 0);
    CHECK(sample_trilinear(v, Eigen::Vector3d(0, 1, 100)) == 0);
  }

  SUBCASE("Lipschitz in the interior") {
    double max_diff = 0;
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 2; ++i) max_diff = std::max(max_diff, double(std::abs(v.at(i + 1, j, k) - v.at(i, j, k))));
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 3; ++i) max_diff = std::max(max_diff, double(std::abs(v.at(i, j + 1, k) - v.at(i, j, k))));
    for (int k = 0; k < 2; ++k)
      for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) max_diff = std::max(max_diff, double(std::abs(v.at(i, j, k + 1) - v.at(i, j, k))));
    const double lip = max_diff / v.spacing.minCoeff() * std::sqrt(3.0);
    const auto box = v.bounds();
    for (int n = 0; n < 500; ++n) {
      const Eigen::Vector3d p = box.sample();
      const Eigen::Vector3d q = p + 0.01 * Eigen::Vector3d::Random();
      if (!box.contains(q)) continue;
      CHECK(std::abs(sample_trilinear(v, p) - sample_trilinear(v, q)) <= lip * (p - q).norm() + 1e-9);
    }
  }
}

TEST_CASE("clip_ray") {
  const Eigen::AlignedBox3d box(Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones());
  const auto hit = clip_ray(box, {Eigen::Vector3d(-1, 0.5, 0.5), Eigen::Vector3d::UnitX()});
  REQUIRE(hit);
  CHECK(hit->first == doctest::Approx(1));
  CHECK(hit->second == doctest::Approx(2));
  CHECK_FALSE(clip_ray(box, {Eigen::Vector3d(-1, 2, 0.5), Eigen::Vector3d::UnitX()}));
  CHECK_FALSE(clip_ray(box, {Eigen::Vector3d(2, 0.5, 0.5), Eigen::Vector3d::UnitX()}));
  const auto inside = clip_ray(box, {Eigen::Vector3d(0.5, 0.5, 0.5), Eigen::Vector3d(0, 0, -1)});
  REQUIRE(inside);
  CHECK(inside->first == 0);
  CHECK(inside->second == doctest::Approx(0.5));
}

TEST_CASE("ray through a hard sphere") {
  const Volume v = hard_sphere(50);
  const IsoSurfaceSpec iso{500.0, 1e-3, 0.5};

  SUBCASE("central chord") {
    const auto hit = intersect_isosurface(v, iso, ray_x(0.2, -0.3));
    REQUIRE(hit);
    CHECK(hit->entry.x() == doctest::Approx(-50).epsilon(0.01));
    CHECK(hit->exit.x() == doctest::Approx(50).epsilon(0.01));
    CHECK(hit->entry_t == doctest::Approx(150).epsilon(0.005));
    CHECK(hit->exit_t - hit->entry_t == doctest::Approx(100).epsilon(0.01));
  }

  SUBCASE("off-centre chord matches the analytic length") {
    for (double y : {10.0, 25.0, 40.0}) {
      const auto hit = intersect_isosurface(v, iso, ray_x(y, 0.3));
      REQUIRE(hit);
      CHECK(hit->exit_t - hit->entry_t == doctest::Approx(2 * std::sqrt(2500 - y * y)).epsilon(0.03));
    }
  }

  SUBCASE("near-tangent ray still hits, far ray misses") {
    CHECK(intersect_isosurface(v, iso, ray_x(48.5, 0.3)));
    CHECK_FALSE(intersect_isosurface(v, iso, ray_x(52, 0.3)));
    CHECK_FALSE(intersect_isosurface(v, iso, {Eigen::Vector3d(-200, 0, 0), Eigen::Vector3d::UnitY()}));
  }

  SUBCASE("entry precedes exit and both sit on the threshold") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0, 1);
    int hits = 0;
    for (int k = 0; k < 300; ++k) {
      const Eigen::Vector3d origin = 150.0 * Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
      const Eigen::Vector3d target = 45.0 * Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
      const Rayd ray{origin, (target - origin).normalized()};
      const auto hit = intersect_isosurface(v, iso, ray);
      if (!hit) continue;
      ++hits;
      CHECK(hit->entry_t <= hit->exit_t);
      CHECK((hit->entry - ray.at(hit->entry_t)).norm() < 1e-9);
      // The crossing is bracketed within the refinement tolerance.
      CHECK(sample_trilinear(v, ray.at(hit->entry_t - iso.refine_tolerance)) < iso.threshold);
      CHECK(sample_trilinear(v, ray.at(hit->entry_t + iso.refine_tolerance)) >= iso.threshold);
      CHECK(std::abs(hit->entry.norm() - 50) < 1.0);
      CHECK(std::abs(hit->exit.norm() - 50) < 1.0);
    }
    CHECK(hits > 250);
  }

  SUBCASE("bad spec") {
    IsoSurfaceSpec bad = iso;
    bad.step = 0;
    CHECK(code_of([&] { intersect_isosurface(v, bad, ray_x(0, 0)); }) == ErrorCode::InvalidArgument);
  }
}

TEST_CASE("isosurface crossing onto the hull face") {
  // Everything bone: the first crossing is the hull face itself.
  Volume v({4, 4, 4}, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), 1000.0f);
  const auto hit = intersect_isosurface(v, {500.0, 1e-4, 0.25}, {Eigen::Vector3d(-5, 1.5, 1.5), Eigen::Vector3d::UnitX()});
  REQUIRE(hit);
  CHECK(hit->entry.x() == doctest::Approx(0));
  CHECK(hit->exit.x() == doctest::Approx(3));
}

TEST_CASE("line integrals") {
  DrrConfig cfg;
  cfg.output = DrrOutput::LineIntegral;

  SUBCASE("air volume integrates to zero") {
    Volume v({8, 8, 8}, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), -1000.0f);
    CHECK(integrate_ray(v, {Eigen::Vector3d(-3, 3, 3), Eigen::Vector3d::UnitX()}, cfg) == 0);
    const auto cam = CameraModeld::from_detector(8, 8, 1.0, 100);
    const Image img = render_drr(v, cam, RigidTransformd::FromTranslation(Eigen::Vector3d(-3.5, -3.5, 50)), cfg);
    CHECK(img.cwiseAbs().maxCoeff() == 0);
  }

  SUBCASE("water slab along an axis") {
    Volume v({11, 6, 6}, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), 0.0f);
    CHECK(integrate_ray(v, {Eigen::Vector3d(-3, 2, 2), Eigen::Vector3d::UnitX()}, cfg) ==
          doctest::Approx(cfg.mu_water * 10).epsilon(1e-12));
    CHECK(integrate_ray(v, {Eigen::Vector3d(-3, 20, 2), Eigen::Vector3d::UnitX()}, cfg) == 0);
  }

  SUBCASE("central chord of a bone sphere") {
    const Volume v = make_sphere_phantom({128, 1.0}, 40.0);
    const double mu_bone = cfg.mu_water * 2.0;
    const double i = integrate_ray(v, ray_x(0, 0), cfg);
    CHECK(i == doctest::Approx(mu_bone * 80).epsilon(0.01));
  }

  SUBCASE("additive in attenuation") {
    std::mt19937_64 rng(10);
    DrrConfig linear = cfg;
    linear.hu_air_cutoff = -1e9;
    Volume a({12, 12, 12}, Eigen::Vector3d::Ones(), Eigen::Vector3d(-5.5, -5.5, -5.5));
    Volume b = a, c = a;
    std::uniform_real_distribution<float> u(-1000, 1000);
    for (std::size_t k = 0; k < a.data.size(); ++k) {
      a.data[k] = u(rng);
      b.data[k] = u(rng);
      c.data[k] = a.data[k] + b.data[k] + 1000.0f;
    }
    std::normal_distribution<double> n(0, 1);
    for (int k = 0; k < 50; ++k) {
      const Rayd ray{Eigen::Vector3d(n(rng), n(rng), -30), Eigen::Vector3d(0.1 * n(rng), 0.1 * n(rng), 1).normalized()};
      CHECK(integrate_ray(c, ray, linear) ==
            doctest::Approx(integrate_ray(a, ray, linear) + integrate_ray(b, ray, linear)).epsilon(1e-6));
    }
  }

  SUBCASE("translation covariance") {
    const Volume v = make_sphere_phantom({48, 1.0}, 15.0);
    Volume moved = v;
    const Eigen::Vector3d d(7.25, -3.5, 11.0);
    moved.origin += d;
    const auto cam = CameraModeld::from_detector(24, 24, 2.0, 400);
    const auto pose = RigidTransformd::FromTranslation(Eigen::Vector3d(0, 0, 300));
    const auto pose_moved = compose(pose, RigidTransformd::FromTranslation(-d));
    const Image a = render_drr(v, cam, pose, cfg);
    const Image b = render_drr(moved, cam, pose_moved, cfg);
    CHECK(a.maxCoeff() > 1);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-9 * a.maxCoeff());
  }

  SUBCASE("output modes") {
    const Volume v = make_sphere_phantom({48, 1.0}, 15.0);
    const auto cam = CameraModeld::from_detector(16, 16, 2.0, 400);
    const auto pose = RigidTransformd::FromTranslation(Eigen::Vector3d(0, 0, 300));
    DrrConfig att = cfg, neg = cfg;
    att.output = DrrOutput::Attenuated;
    neg.output = DrrOutput::NegLog;
    const Image li = render_drr(v, cam, pose, cfg);
    const Image at = render_drr(v, cam, pose, att);
    const Image nl = render_drr(v, cam, pose, neg);
    CHECK((at - (-li).array().exp().matrix()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((nl - li).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(parse_drr_output(to_string(DrrOutput::Attenuated)) == DrrOutput::Attenuated);
    CHECK(code_of([] { parse_drr_output("bogus"); }) == ErrorCode::InvalidArgument);
  }

  SUBCASE("config validation") {
    DrrConfig bad = cfg;
    bad.step = 0;
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
    bad = cfg;
    bad.mu_water = -1;
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
  }
}

TEST_CASE("attenuation model") {
  DrrConfig cfg;
  CHECK(attenuation(0, cfg) == doctest::Approx(cfg.mu_water));
  CHECK(attenuation(1000, cfg) == doctest::Approx(2 * cfg.mu_water));
  CHECK(attenuation(-950, cfg) == 0);
  CHECK(attenuation(-899, cfg) > 0);
}

TEST_CASE("image output") {
  const auto dir = scratch_dir("images");
  Image img(2, 3);
  img << 0, 1.5, -2, 3, 4, 1e-3;

  SUBCASE("csv rows") {
    save_image(img, dir / "a.csv", ImageFormat::Csv);
    CHECK(slurp(dir / "a.csv") == "0,1.5,-2\n3,4,0.001\n");
  }

  SUBCASE("pgm scaling and ordering") {
    save_image(img, dir / "a.pgm", ImageFormat::Pgm16);
    const std::string bytes = slurp(dir / "a.pgm");
    const std::string header = "P5\n3 2\n65535\n";
    REQUIRE(bytes.size() == header.size() + 12);
    CHECK(bytes.substr(0, header.size()) == header);
    const Image g = load_pgm(dir / "a.pgm");
    REQUIRE(g.rows() == 2);
    REQUIRE(g.cols() == 3);
    CHECK(g(0, 2) == 0);
    CHECK(g(1, 1) == 65535);
    // Big-endian samples, row-major.
    CHECK(static_cast<unsigned char>(bytes[header.size() + 4]) == 0);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 8]) == 0xff);
    for (Eigen::Index r = 0; r < 2; ++r)
      for (Eigen::Index c = 0; c < 3; ++c)
        CHECK(g(r, c) == std::lround((img(r, c) + 2) / 6 * 65535));
  }

  SUBCASE("constant image") {
    save_image(Image::Constant(4, 5, 7.0), dir / "c.pgm", ImageFormat::Pgm16);
    CHECK(load_pgm(dir / "c.pgm").cwiseAbs().maxCoeff() == 0);
  }

  SUBCASE("non-finite pixels") {
    Image bad = img;
    bad(1, 2) = std::nan("");
    CHECK(code_of([&] { save_image(bad, dir / "b.csv", ImageFormat::Csv); }) == ErrorCode::NonFiniteValue);
    CHECK_FALSE(std::filesystem::exists(dir / "b.csv"));
  }

  SUBCASE("bad pgm") {
    spit(dir / "x.pgm", "P2\n1 1\n255\n0");
    CHECK(code_of([&] { load_pgm(dir / "x.pgm"); }) == ErrorCode::ParseError);
    spit(dir / "y.pgm", "P5\n2 2\n255\n\x01\x02");
    CHECK(code_of([&] { load_pgm(dir / "y.pgm"); }) == ErrorCode::DimensionMismatch);
  }

  SUBCASE("overlay ppm") {
    Mask m = Mask::Constant(2, 3, false);
    m(0, 1) = true;
    save_overlay_ppm(img, m, dir / "o.ppm");
    const std::string bytes = slurp(dir / "o.ppm");
    CHECK(bytes.rfind("P6", 0) == 0);
    CHECK(code_of([&] { save_overlay_ppm(img, Mask::Constant(3, 3, false), dir / "p.ppm"); }) ==
          ErrorCode::DimensionMismatch);
  }
}
