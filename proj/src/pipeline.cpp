#include "scr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "raw_format.hpp"
#include "scr/parallel.hpp"

namespace scr {

using ojson = nlohmann::ordered_json;

std::vector<double> AngleRange::values() const {
  if (!(step > 0) || !(max > min)) throw Error(ErrorCode::InvalidArgument, "angle range needs min < max and step > 0");
  const auto n = static_cast<int>(std::ceil((max - min) / step - 1e-9));
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = min + i * step;
  return out;
}

SplitCounts SplitCounts::proportional(int total_views) {
  SplitCounts s;
  s.train = static_cast<int>(std::lround(0.64 * total_views));
  s.val = static_cast<int>(std::lround(0.16 * total_views));
  s.test = total_views - s.train - s.val;
  return s;
}

void ProtocolSpec::validate() const {
  const auto a = alpha.values();
  const auto b = beta.values();
  for (double x : a)
    if (std::abs(x) > 90) throw Error(ErrorCode::InvalidArgument, "alpha grid leaves [-90, 90]");
  for (double x : b)
    if (std::abs(x) > 90) throw Error(ErrorCode::InvalidArgument, "beta grid leaves [-90, 90]");
  if (static_cast<long long>(a.size()) * static_cast<long long>(b.size()) != total_views)
    throw Error(ErrorCode::InvalidArgument, "angle grid has " + std::to_string(a.size() * b.size()) +
                                                " points but total_views is " + std::to_string(total_views));
  if (split.train < 0 || split.val < 0 || split.test < 0 || split.total() != total_views)
    throw Error(ErrorCode::InvalidArgument, "split counts must sum to total_views");
  if (!((offset_sigma_mm.array() >= 0).all())) throw Error(ErrorCode::InvalidArgument, "offset sigmas must be >= 0");
  if (!(source_isocenter_distance > 0))
    throw Error(ErrorCode::InvalidArgument, "source_isocenter_distance must be positive");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error(ErrorCode::ParseError, "unknown split tag: " + std::string(s));
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  std::set<std::string> paths;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw Error(ErrorCode::InvalidArgument, "duplicate view id " + r.id);
    if (!paths.insert(r.image_path).second || !paths.insert(r.map_path).second)
      throw Error(ErrorCode::InvalidArgument, "duplicate path in manifest for view " + r.id);
  }
}

const ManifestRecord* DatasetManifest::find(std::string_view id) const {
  auto it = std::find_if(records.begin(), records.end(), [&](const ManifestRecord& r) { return r.id == id; });
  return it == records.end() ? nullptr : &*it;
}

std::vector<CArmPosed> sample_poses(const ProtocolSpec& spec, const CameraModeld& camera,
                                    const Eigen::Vector3d& isocenter) {
  spec.validate();
  camera.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<CArmPosed> poses;
  poses.reserve(static_cast<std::size_t>(spec.total_views));
  for (double alpha : spec.alpha.values()) {
    for (double beta : spec.beta.values()) {
      CArmPosed p;
      p.alpha_deg = alpha;
      p.beta_deg = beta;
      p.isocenter = isocenter;
      p.source_isocenter_distance = spec.source_isocenter_distance;
      for (int a = 0; a < 3; ++a) {
        const double g = normal(rng);
        p.offset[a] = spec.offset_sigma_mm[a] > 0 ? spec.offset_sigma_mm[a] * g : 0.0;
      }
      poses.push_back(p);
    }
  }
  return poses;
}

namespace {

std::string view_id(std::size_t index) {
  std::string s = std::to_string(index);
  return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

ojson vec_json(const Eigen::Vector3d& v) { return ojson::array({v.x(), v.y(), v.z()}); }

ojson rotation_json(const Eigen::Matrix3d& r) {
  ojson a = ojson::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a.push_back(r(i, j));
  return a;
}

Eigen::Vector3d vec_from(const ojson& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw Error(ErrorCode::ParseError, "expected a 3-vector");
  return {v[0], v[1], v[2]};
}

Eigen::Matrix3d rotation_from(const ojson& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 9) throw Error(ErrorCode::ParseError, "rotation needs 9 row-major values");
  Eigen::Matrix3d r;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r(i, k) = v[static_cast<std::size_t>(3 * i + k)];
  return r;
}

ojson pose_record(const ManifestRecord& r) {
  ojson j;
  j["id"] = r.id;
  j["alpha_deg"] = r.carm.alpha_deg;
  j["beta_deg"] = r.carm.beta_deg;
  j["offset_mm"] = vec_json(r.carm.offset);
  j["rotation"] = rotation_json(r.pose.rotation());
  j["translation_mm"] = vec_json(r.pose.translation());
  return j;
}

}  // namespace

DatasetManifest plan_dataset(const ProtocolSpec& spec, const CameraModeld& camera, const Eigen::Vector3d& isocenter) {
  const auto poses = sample_poses(spec, camera, isocenter);

  std::vector<int> order(poses.size());
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq split_seed{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), 0x5911u};
  std::mt19937_64 rng(split_seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> split(poses.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int rank = static_cast<int>(k);
    split[static_cast<std::size_t>(order[k])] =
        rank < spec.split.train ? Split::Train : rank < spec.split.train + spec.split.val ? Split::Val : Split::Test;
  }

  DatasetManifest m;
  m.records.reserve(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    ManifestRecord r;
    r.id = view_id(i);
    r.split = split[i];
    r.carm = poses[i];
    r.pose = carm_to_extrinsic(poses[i]);
    r.image_path = "images/" + r.id + ".pgm";
    r.map_path = "maps/" + r.id + ".scm";
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

std::string manifest_jsonl(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& r : manifest.records) {
    ojson j = pose_record(r);
    j["split"] = std::string(to_string(r.split));
    j["isocenter_mm"] = vec_json(r.carm.isocenter);
    j["source_isocenter_distance_mm"] = r.carm.source_isocenter_distance;
    j["image"] = r.image_path;
    j["map"] = r.map_path;
    out += j.dump() + "\n";
  }
  return out;
}

std::string poses_jsonl(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& r : manifest.records) out += pose_record(r).dump() + "\n";
  return out;
}

DatasetManifest parse_manifest(std::string_view jsonl, const std::filesystem::path& source) {
  DatasetManifest m;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < jsonl.size()) {
    std::size_t eol = jsonl.find('\n', pos);
    if (eol == std::string_view::npos) eol = jsonl.size();
    const std::string_view line = jsonl.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const ojson j = ojson::parse(line);
      ManifestRecord r;
      r.id = j.at("id").get<std::string>();
      r.split = parse_split(j.at("split").get<std::string>());
      r.carm.alpha_deg = j.at("alpha_deg").get<double>();
      r.carm.beta_deg = j.at("beta_deg").get<double>();
      r.carm.offset = vec_from(j.at("offset_mm"));
      r.carm.isocenter = vec_from(j.at("isocenter_mm"));
      r.carm.source_isocenter_distance = j.at("source_isocenter_distance_mm").get<double>();
      r.pose = RigidTransformd(rotation_from(j.at("rotation")), vec_from(j.at("translation_mm")));
      r.image_path = j.at("image").get<std::string>();
      r.map_path = j.at("map").get<std::string>();
      if (!r.pose.is_valid(1e-6)) throw Error(ErrorCode::ParseError, "rotation is not orthonormal");
      m.records.push_back(std::move(r));
    } catch (const ojson::exception& e) {
      throw Error(ErrorCode::ParseError, source.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, source.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dataset_dir) {
  const auto path = dataset_dir / "manifest.jsonl";
  return parse_manifest(detail::read_file(path), path);
}

void write_dataset_info(const DatasetInfo& info, const std::filesystem::path& dataset_dir) {
  const auto& c = info.camera;
  const auto& p = info.protocol;
  ojson j;
  j["camera"] = {{"fx", c.fx},
                 {"fy", c.fy},
                 {"cx", c.cx},
                 {"cy", c.cy},
                 {"width", c.width},
                 {"height", c.height},
                 {"pixel_pitch_mm", c.pixel_pitch},
                 {"source_detector_distance_mm", c.source_detector_distance}};
  j["iso"] = {{"threshold_hu", info.iso.threshold},
              {"refine_tolerance_mm", info.iso.refine_tolerance},
              {"step_mm", info.iso.step}};
  j["drr"] = {{"step_mm", info.drr.step},
              {"mu_water", info.drr.mu_water},
              {"hu_air_cutoff", info.drr.hu_air_cutoff},
              {"output", std::string(to_string(info.drr.output))}};
  ojson proto;
  proto["alpha"] = {p.alpha.min, p.alpha.max, p.alpha.step};
  proto["beta"] = {p.beta.min, p.beta.max, p.beta.step};
  proto["offset_sigma_mm"] = vec_json(p.offset_sigma_mm);
  proto["total_views"] = p.total_views;
  proto["split"] = {{"train", p.split.train}, {"val", p.split.val}, {"test", p.split.test}};
  proto["seed"] = p.seed;
  proto["source_isocenter_distance_mm"] = p.source_isocenter_distance;
  if (p.isocenter) proto["isocenter_mm"] = vec_json(*p.isocenter);
  j["protocol"] = proto;
  j["volume"] = info.volume_file;
  detail::write_file(dataset_dir / "dataset.json", j.dump(2) + "\n");
}

DatasetInfo read_dataset_info(const std::filesystem::path& dataset_dir) {
  const auto path = dataset_dir / "dataset.json";
  DatasetInfo info;
  try {
    const ojson j = ojson::parse(detail::read_file(path));
    const auto& c = j.at("camera");
    info.camera.fx = c.at("fx");
    info.camera.fy = c.at("fy");
    info.camera.cx = c.at("cx");
    info.camera.cy = c.at("cy");
    info.camera.width = c.at("width");
    info.camera.height = c.at("height");
    info.camera.pixel_pitch = c.at("pixel_pitch_mm");
    info.camera.source_detector_distance = c.at("source_detector_distance_mm");
    const auto& iso = j.at("iso");
    info.iso.threshold = iso.at("threshold_hu");
    info.iso.refine_tolerance = iso.at("refine_tolerance_mm");
    info.iso.step = iso.at("step_mm");
    const auto& drr = j.at("drr");
    info.drr.step = drr.at("step_mm");
    info.drr.mu_water = drr.at("mu_water");
    info.drr.hu_air_cutoff = drr.at("hu_air_cutoff");
    info.drr.output = parse_drr_output(drr.at("output").get<std::string>());
    const auto& p = j.at("protocol");
    auto range = [](const ojson& a) { return AngleRange{a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()}; };
    info.protocol.alpha = range(p.at("alpha"));
    info.protocol.beta = range(p.at("beta"));
    info.protocol.offset_sigma_mm = vec_from(p.at("offset_sigma_mm"));
    info.protocol.total_views = p.at("total_views");
    info.protocol.split = {p.at("split").at("train"), p.at("split").at("val"), p.at("split").at("test")};
    info.protocol.seed = p.at("seed");
    info.protocol.source_isocenter_distance = p.at("source_isocenter_distance_mm");
    if (p.contains("isocenter_mm")) info.protocol.isocenter = vec_from(p.at("isocenter_mm"));
    info.volume_file = j.at("volume").get<std::string>();
  } catch (const ojson::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  info.camera.validate();
  return info;
}

DatasetManifest generate_dataset(const Volume& v, const IsoSurfaceSpec& iso, const CameraModeld& camera,
                                 const ProtocolSpec& spec, const DrrConfig& cfg,
                                 const std::filesystem::path& out_dir) {
  cfg.validate();
  camera.validate();
  v.validate();
  const Eigen::Vector3d isocenter = spec.isocenter.value_or(v.center());
  DatasetManifest manifest = plan_dataset(spec, camera, isocenter);

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "maps", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string() + ": " + ec.message());

  DatasetInfo info{camera, iso, cfg, spec, "volume.vol"};
  info.protocol.isocenter = isocenter;
  save_volume(v, out_dir / info.volume_file);

  parallel_for(static_cast<int>(manifest.records.size()), [&](int i) {
    const ManifestRecord& r = manifest.records[static_cast<std::size_t>(i)];
    try {
      save_image(render_drr(v, camera, r.pose, cfg), out_dir / r.image_path, ImageFormat::Pgm16);
      save_map(generate_gt_map(v, iso, camera, r.pose), out_dir / r.map_path);
    } catch (const Error& e) {
      throw Error(e.code(), "view " + r.id + ": " + e.what());
    }
  });

  detail::write_file(out_dir / "manifest.jsonl", manifest_jsonl(manifest));
  detail::write_file(out_dir / "poses.jsonl", poses_jsonl(manifest));
  write_dataset_info(info, out_dir);
  return manifest;
}

SceneCoordMap oracle_exact(const ManifestRecord& record, const std::filesystem::path& dataset_dir) {
  return load_map(dataset_dir / record.map_path);
}

SceneCoordMap oracle_noisy(const SceneCoordMap& map, const NoiseSpec& noise, const Eigen::AlignedBox3d& outlier_box) {
  noise.validate();
  map.validate();
  SceneCoordMap out = map;
  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Eigen::Vector3d lo = outlier_box.min();
  const Eigen::Vector3d extent = outlier_box.sizes();

  // Every valid pixel consumes the same number of draws whatever the branch,
  // so maps generated with one seed and different rates share their noise.
  for (Eigen::Index i = 0; i < map.size(); ++i) {
    if (!map.valid[static_cast<std::size_t>(i)]) continue;
    const double g = normal(rng);
    const double sigma = noise.sigma_mm * std::exp(noise.sigma_jitter * g);
    const double logvar = sigma > 0 ? std::max(2.0 * std::log(sigma), kLogVarFloor) : kLogVarFloor;

    auto corrupt = [&](Eigen::Ref<Eigen::Vector3f> point, float& point_logvar) {
      const double u = unit(rng);
      const Eigen::Vector3d n(normal(rng), normal(rng), normal(rng));
      const Eigen::Vector3d uniform(unit(rng), unit(rng), unit(rng));
      if (u < noise.outlier_rate) {
        point = (lo + uniform.cwiseProduct(extent)).cast<float>();
        point_logvar = static_cast<float>(noise.honest_outliers ? kHonestOutlierLogVar : logvar);
      } else {
        point = (point.cast<double>() + sigma * n).cast<float>();
        point_logvar = static_cast<float>(logvar);
      }
    };
    corrupt(out.entry.col(i), out.entry_logvar[i]);
    corrupt(out.exit.col(i), out.exit_logvar[i]);
  }
  return out;
}

SceneCoordMap load_external_map(const std::filesystem::path& path) {
  SceneCoordMap map = load_map(path);
  map.validate();
  return map;
}

}  // namespace scr
