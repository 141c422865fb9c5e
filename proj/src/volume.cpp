#include "scr/volume.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <string>

#include "raw_format.hpp"
#include "scr/parallel.hpp"

namespace scr {

Volume::Volume(const Eigen::Vector3i& dims, const Eigen::Vector3d& spacing, const Eigen::Vector3d& origin, float fill)
    : dims(dims), spacing(spacing), origin(origin) {
  if ((dims.array() < 2).any()) throw Error(ErrorCode::InvalidArgument, "volume dims must be >= 2");
  data.assign(voxel_count(), fill);
  validate();
}

Eigen::AlignedBox3d Volume::bounds() const {
  return {origin, origin + (dims.cast<double>() - Eigen::Vector3d::Ones()).cwiseProduct(spacing)};
}

void Volume::validate() const {
  if ((dims.array() < 2).any()) throw Error(ErrorCode::InvalidArgument, "volume dims must be >= 2");
  if (!((spacing.array() > 0).all() && spacing.allFinite()))
    throw Error(ErrorCode::InvalidArgument, "volume spacing must be positive");
  if (!origin.allFinite()) throw Error(ErrorCode::InvalidArgument, "volume origin must be finite");
  if (data.size() != voxel_count())
    throw Error(ErrorCode::DimensionMismatch, "volume data length does not match dims");
}

void DrrConfig::validate() const {
  if (!(step > 0)) throw Error(ErrorCode::InvalidArgument, "DRR step must be positive");
  if (!(mu_water > 0)) throw Error(ErrorCode::InvalidArgument, "mu_water must be positive");
}

DrrOutput parse_drr_output(std::string_view name) {
  if (name == "line_integral") return DrrOutput::LineIntegral;
  if (name == "attenuated") return DrrOutput::Attenuated;
  if (name == "neglog") return DrrOutput::NegLog;
  throw Error(ErrorCode::InvalidArgument, "unknown DRR output mode: " + std::string(name));
}

std::string_view to_string(DrrOutput output) {
  switch (output) {
    case DrrOutput::LineIntegral: return "line_integral";
    case DrrOutput::Attenuated: return "attenuated";
    case DrrOutput::NegLog: return "neglog";
  }
  return "neglog";
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

Volume load_volume(const std::filesystem::path& path) {
  const detail::RawFile f = detail::parse_raw_file(detail::read_file(path), path);

  const auto d = detail::parse_numbers(detail::require_key(f, "DIMS", path), 3, "DIMS", path);
  const auto s = detail::parse_numbers(detail::require_key(f, "SPACING", path), 3, "SPACING", path);
  const auto o = detail::parse_numbers(detail::require_key(f, "ORIGIN", path), 3, "ORIGIN", path);
  const std::string& type = detail::require_key(f, "TYPE", path);

  Volume v;
  for (int a = 0; a < 3; ++a) {
    if (d[a] != std::floor(d[a]) || d[a] < 2 || d[a] > 1 << 20)
      throw Error(ErrorCode::ParseError, path.string() + ": DIMS must be integers >= 2");
    v.dims[a] = static_cast<int>(d[a]);
    v.spacing[a] = s[a];
    v.origin[a] = o[a];
  }
  std::size_t elem = 0;
  if (type == "int16") {
    v.storage = VoxelType::Int16;
    elem = 2;
  } else if (type == "float32") {
    v.storage = VoxelType::Float32;
    elem = 4;
  } else {
    throw Error(ErrorCode::ParseError, path.string() + ": unsupported TYPE=" + type);
  }

  const std::size_t n = v.voxel_count();
  if (f.payload.size() != n * elem)
    throw Error(ErrorCode::DimensionMismatch, path.string() + ": payload has " + std::to_string(f.payload.size()) +
                                                  " bytes, header declares " + std::to_string(n * elem));
  v.data.resize(n);
  const char* p = f.payload.data();
  if (v.storage == VoxelType::Int16) {
    for (std::size_t i = 0; i < n; ++i) v.data[i] = detail::load_le<std::int16_t>(p + 2 * i);
  } else {
    for (std::size_t i = 0; i < n; ++i) v.data[i] = detail::load_le<float>(p + 4 * i);
  }
  v.validate();
  return v;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  v.validate();
  using detail::format_number;
  std::string out;
  out += "DIMS=" + std::to_string(v.dims.x()) + " " + std::to_string(v.dims.y()) + " " + std::to_string(v.dims.z()) + "\n";
  out += "SPACING=" + format_number(v.spacing.x()) + " " + format_number(v.spacing.y()) + " " +
         format_number(v.spacing.z()) + "\n";
  out += "ORIGIN=" + format_number(v.origin.x()) + " " + format_number(v.origin.y()) + " " +
         format_number(v.origin.z()) + "\n";
  out += v.storage == VoxelType::Int16 ? "TYPE=int16\n" : "TYPE=float32\n";
  out += "DATA=raw\n";
  if (v.storage == VoxelType::Int16) {
    out.reserve(out.size() + 2 * v.data.size());
    for (float x : v.data) {
      const float r = std::nearbyint(std::clamp(x, -32768.0f, 32767.0f));
      detail::store_le(static_cast<std::int16_t>(r), out);
    }
  } else {
    out.reserve(out.size() + 4 * v.data.size());
    for (float x : v.data) detail::store_le(x, out);
  }
  detail::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Sampling and ray casting
// ---------------------------------------------------------------------------

double sample_trilinear(const Volume& v, const Eigen::Vector3d& point_world) {
  const Eigen::Vector3d p = (point_world - v.origin).cwiseQuotient(v.spacing);
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    // Round-off slack so samples on a hull face stay inside.
    const double hi = v.dims[a] - 1;
    if (!(p[a] >= -1e-9 && p[a] <= hi + 1e-9)) return 0.0;
    const double q = std::clamp(p[a], 0.0, hi);
    const int base = std::min(static_cast<int>(q), v.dims[a] - 2);
    i0[a] = base;
    f[a] = q - base;
  }
  const std::size_t sx = 1;
  const std::size_t sy = static_cast<std::size_t>(v.dims.x());
  const std::size_t sz = sy * static_cast<std::size_t>(v.dims.y());
  const float* c = v.data.data() + v.index(i0[0], i0[1], i0[2]);

  const double c00 = c[0] + f[0] * (c[sx] - c[0]);
  const double c10 = c[sy] + f[0] * (c[sy + sx] - c[sy]);
  const double c01 = c[sz] + f[0] * (c[sz + sx] - c[sz]);
  const double c11 = c[sz + sy] + f[0] * (c[sz + sy + sx] - c[sz + sy]);
  const double c0 = c00 + f[1] * (c10 - c00);
  const double c1 = c01 + f[1] * (c11 - c01);
  return c0 + f[2] * (c1 - c0);
}

std::optional<std::pair<double, double>> clip_ray(const Eigen::AlignedBox3d& box, const Rayd& ray) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a];
    const double d = ray.direction[a];
    if (std::abs(d) < 1e-300) {
      if (o < box.min()[a] || o > box.max()[a]) return std::nullopt;
      continue;
    }
    double ta = (box.min()[a] - o) / d;
    double tb = (box.max()[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

std::optional<Intersection> intersect_isosurface(const Volume& v, const IsoSurfaceSpec& iso, const Rayd& ray) {
  if (!(iso.refine_tolerance > 0) || !(iso.step > 0))
    throw Error(ErrorCode::InvalidArgument, "isosurface step and refine_tolerance must be positive");
  const auto span = clip_ray(v.bounds(), ray);
  if (!span) return std::nullopt;
  const auto [t0, t1] = *span;

  auto inside = [&](double t) { return sample_trilinear(v, ray.at(t)) >= iso.threshold; };
  auto refine = [&](double a, double b, bool inside_a) {
    while (b - a > iso.refine_tolerance) {
      const double m = 0.5 * (a + b);
      if (inside(m) == inside_a) a = m;
      else b = m;
    }
    return 0.5 * (a + b);
  };

  // Beyond the hull the field reads 0 HU; a crossing onto the hull face is
  // located exactly at the face.
  const bool outside_state = 0.0 >= iso.threshold;
  std::optional<double> first;
  double last = 0.0;
  auto record = [&](double t) {
    if (!first) first = t;
    last = t;
  };

  const double length = t1 - t0;
  const int n = std::max(1, static_cast<int>(std::ceil(length / iso.step)));
  const double h = length / n;
  bool prev = inside(t0);
  if (prev != outside_state) record(t0);
  double prev_t = t0;
  for (int i = 1; i <= n; ++i) {
    const double t = (i == n) ? t1 : t0 + i * h;
    const bool cur = inside(t);
    if (cur != prev) record(refine(prev_t, t, prev));
    prev = cur;
    prev_t = t;
  }
  if (prev != outside_state) record(t1);
  if (!first) return std::nullopt;
  return Intersection{ray.at(*first), ray.at(last), *first, last};
}

double attenuation(double hu, const DrrConfig& cfg) {
  if (hu < cfg.hu_air_cutoff) return 0.0;
  return std::max(0.0, cfg.mu_water * (1.0 + hu / 1000.0));
}

double integrate_ray(const Volume& v, const Rayd& ray, const DrrConfig& cfg) {
  const auto span = clip_ray(v.bounds(), ray);
  if (!span) return 0.0;
  const auto [t0, t1] = *span;
  const double length = t1 - t0;
  if (length <= 0.0) return 0.0;
  const int n = std::max(1, static_cast<int>(std::ceil(length / cfg.step)));
  const double h = length / n;
  const double cutoff = cfg.hu_air_cutoff;
  // Attenuation just above the air cutoff: the integrand jumps there, so
  // intervals straddling it are split at the crossing instead of averaged.
  const double mu_cut = std::max(0.0, cfg.mu_water * (1.0 + cutoff / 1000.0));

  double sum = 0.0;
  double s_prev = t0;
  double hu_prev = sample_trilinear(v, ray.at(t0));
  for (int i = 1; i <= n; ++i) {
    const double s = i == n ? t1 : t0 + i * h;
    const double hu = sample_trilinear(v, ray.at(s));
    const bool in_prev = hu_prev >= cutoff;
    const bool in_now = hu >= cutoff;
    if (in_prev && in_now) {
      sum += 0.5 * (s - s_prev) * (attenuation(hu_prev, cfg) + attenuation(hu, cfg));
    } else if (in_prev != in_now) {
      double lo = s_prev, hi = s;  // lo keeps the side of the first sample
      for (int k = 0; k < 30 && hi - lo > 1e-6; ++k) {
        const double mid = 0.5 * (lo + hi);
        ((sample_trilinear(v, ray.at(mid)) >= cutoff) == in_prev ? lo : hi) = mid;
      }
      const double cross = 0.5 * (lo + hi);
      if (in_prev)
        sum += 0.5 * (cross - s_prev) * (attenuation(hu_prev, cfg) + mu_cut);
      else
        sum += 0.5 * (s - cross) * (mu_cut + attenuation(hu, cfg));
    }
    s_prev = s;
    hu_prev = hu;
  }
  return sum;
}

Image render_drr(const Volume& v, const CameraModeld& camera, const RigidTransformd& pose, const DrrConfig& cfg) {
  cfg.validate();
  camera.validate();
  Image img(camera.height, camera.width);
  parallel_for(camera.height, [&](int row) {
    for (int col = 0; col < camera.width; ++col) {
      const double integral = integrate_ray(v, pixel_ray(camera, pose, camera.pixel_center(col, row)), cfg);
      switch (cfg.output) {
        case DrrOutput::LineIntegral: img(row, col) = integral; break;
        case DrrOutput::Attenuated: img(row, col) = std::exp(-integral); break;
        case DrrOutput::NegLog: img(row, col) = -std::log(std::exp(-integral)); break;
      }
    }
  });
  return img;
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

void save_image(const Image& img, const std::filesystem::path& path, ImageFormat format) {
  if (!img.allFinite()) throw Error(ErrorCode::NonFiniteValue, "image contains non-finite pixels");
  std::string out;
  if (format == ImageFormat::Csv) {
    for (Eigen::Index r = 0; r < img.rows(); ++r) {
      for (Eigen::Index c = 0; c < img.cols(); ++c) {
        if (c) out += ',';
        out += detail::format_number(img(r, c));
      }
      out += '\n';
    }
  } else {
    out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n65535\n";
    const double lo = img.size() ? img.minCoeff() : 0.0;
    const double hi = img.size() ? img.maxCoeff() : 0.0;
    const double scale = hi > lo ? 65535.0 / (hi - lo) : 0.0;
    out.reserve(out.size() + 2 * static_cast<std::size_t>(img.size()));
    for (Eigen::Index r = 0; r < img.rows(); ++r) {
      for (Eigen::Index c = 0; c < img.cols(); ++c) {
        const auto g = static_cast<std::uint16_t>(std::lround(std::clamp((img(r, c) - lo) * scale, 0.0, 65535.0)));
        out += static_cast<char>(g >> 8);
        out += static_cast<char>(g & 0xff);
      }
    }
  }
  detail::write_file(path, out);
}

Image load_pgm(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw Error(ErrorCode::ParseError, path.string() + ": truncated PGM header");
    return bytes.substr(start, pos - start);
  };
  if (next_token() != "P5") throw Error(ErrorCode::ParseError, path.string() + ": not a binary PGM");
  const long long w = detail::parse_integer(next_token(), "width", path);
  const long long h = detail::parse_integer(next_token(), "height", path);
  const long long maxval = detail::parse_integer(next_token(), "maxval", path);
  ++pos;  // single whitespace before the raster
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
    throw Error(ErrorCode::ParseError, path.string() + ": bad PGM header values");
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  if (bytes.size() < pos || bytes.size() - pos != static_cast<std::size_t>(w * h) * bpp)
    throw Error(ErrorCode::DimensionMismatch, path.string() + ": PGM raster size mismatch");
  Image img(h, w);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (long long i = 0; i < w * h; ++i)
    img.data()[i] = bpp == 2 ? (p[2 * i] << 8) | p[2 * i + 1] : p[i];
  return img;
}

void save_overlay_ppm(const Image& base, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& mask,
                      const std::filesystem::path& path) {
  if (mask.rows() != base.rows() || mask.cols() != base.cols())
    throw Error(ErrorCode::DimensionMismatch, "overlay mask and base image differ in size");
  if (!base.allFinite()) throw Error(ErrorCode::NonFiniteValue, "image contains non-finite pixels");
  std::string out = "P6\n" + std::to_string(base.cols()) + " " + std::to_string(base.rows()) + "\n255\n";
  const double lo = base.size() ? base.minCoeff() : 0.0;
  const double hi = base.size() ? base.maxCoeff() : 0.0;
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  for (Eigen::Index r = 0; r < base.rows(); ++r) {
    for (Eigen::Index c = 0; c < base.cols(); ++c) {
      if (mask(r, c)) {
        out += static_cast<char>(255);
        out += static_cast<char>(0);
        out += static_cast<char>(0);
      } else {
        const auto g = static_cast<char>(std::lround((base(r, c) - lo) * scale));
        out.append(3, g);
      }
    }
  }
  detail::write_file(path, out);
}

}  // namespace scr
