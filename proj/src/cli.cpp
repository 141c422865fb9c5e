#include "scr/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "raw_format.hpp"
#include "scr/config.hpp"
#include "scr/evaluation.hpp"
#include "scr/parallel.hpp"
#include "scr/phantom.hpp"
#include "scr/pipeline.hpp"
#include "scr/solver.hpp"

namespace scr::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Options shared by every dataset-facing subcommand.
struct Common {
  std::string config_path;
  std::vector<std::string> assignments;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "config file (JSON object or key = value lines)");
  cmd->add_option("--set", c.assignments, "override a config key, key=value (repeatable)");
}

// defaults < file < --set < named flags
Config layered(const Common& c, const std::vector<std::pair<CLI::Option*, std::string>>& flags) {
  Config cfg = c.config_path.empty() ? Config{} : Config::load(c.config_path);
  for (const auto& a : c.assignments) cfg.set_assignment(a);
  for (const auto& [opt, key] : flags)
    if (opt->count() > 0) cfg.set(key, opt->as<std::string>());
  return cfg;
}

void echo(const Config& cfg, std::ostream& err) { err << "# resolved configuration\n" << describe(cfg.resolved()); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ojson vec_json(const Eigen::Vector3d& v) { return ojson::array({v.x(), v.y(), v.z()}); }

struct ResultRecord {
  std::string id;
  bool converged = false;
  std::optional<RigidTransformd> pose;
};

std::vector<ResultRecord> read_results(const fs::path& path) {
  const std::string text = detail::read_file(path);
  std::vector<ResultRecord> out;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const ojson j = ojson::parse(line);
      ResultRecord r;
      r.id = j.at("id").get<std::string>();
      r.converged = j.at("converged").get<bool>();
      if (r.converged) {
        const auto rot = j.at("rotation").get<std::vector<double>>();
        const auto t = j.at("translation_mm").get<std::vector<double>>();
        if (rot.size() != 9 || t.size() != 3) throw Error(ErrorCode::ParseError, "bad pose arrays");
        Eigen::Matrix3d R;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) R(a, b) = rot[static_cast<std::size_t>(3 * a + b)];
        r.pose = RigidTransformd(R, Eigen::Vector3d(t[0], t[1], t[2]));
      }
      out.push_back(std::move(r));
    } catch (const ojson::exception& e) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.empty()) throw Error(ErrorCode::EmptyInput, path.string() + " holds no registration results");
  return out;
}

double elapsed_s(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
  std::string kind = "two-lobe";
  int size = 128;
  double spacing = 1.0;
  double radius = 40.0;
  std::string out;
  std::string landmarks;
};

int cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  const PhantomGrid grid{a.size, a.spacing};
  Volume v;
  LandmarkSet landmarks;
  if (a.kind == "two-lobe") {
    v = make_two_lobe_phantom(grid);
    landmarks = two_lobe_landmarks();
  } else if (a.kind == "sphere") {
    const Ball ball{Eigen::Vector3d::Zero(), a.radius};
    v = make_sphere_phantom(grid, a.radius);
    landmarks = ball_landmarks(std::span<const Ball>(&ball, 1));
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown phantom kind '" + a.kind + "' (sphere | two-lobe)");
  }
  v.storage = VoxelType::Int16;
  for (float& x : v.data) x = std::round(x);
  save_volume(v, a.out);
  if (!a.landmarks.empty()) save_landmarks(landmarks, a.landmarks);
  out << "wrote " << a.kind << " phantom (" << a.size << "^3 voxels) to " << a.out << "\n";
  return 0;
}

int cmd_simulate(const Config& cfg, std::ostream& out, std::ostream& err) {
  const std::string volume_path = cfg.get_string("volume", "");
  const std::string out_dir = cfg.get_string("out", "");
  const std::string landmarks_path = cfg.get_string("landmarks", "");
  const CameraModeld camera = camera_from(cfg);
  const IsoSurfaceSpec iso = iso_from(cfg);
  const DrrConfig drr = drr_from(cfg);
  const ProtocolSpec protocol = protocol_from(cfg);
  cfg.check_all_used();
  if (volume_path.empty()) throw Error(ErrorCode::InvalidArgument, "no volume given (--volume)");
  if (out_dir.empty()) throw Error(ErrorCode::InvalidArgument, "no output directory given (--out)");
  echo(cfg, err);

  const auto start = std::chrono::steady_clock::now();
  const Volume v = load_volume(volume_path);
  const DatasetManifest m = generate_dataset(v, iso, camera, protocol, drr, out_dir);
  if (!landmarks_path.empty()) save_landmarks(load_landmarks(landmarks_path), fs::path(out_dir) / "landmarks.json");
  err << "simulate: " << m.records.size() << " views in " << elapsed_s(start) << " s\n";
  out << "wrote " << m.records.size() << " views to " << out_dir << "\n";
  return 0;
}

int cmd_register(const Config& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dataset = cfg.get_string("dataset", "");
  const std::string source = cfg.get_string("source", "gt");
  const fs::path out_path = cfg.get_string("out", "");
  const std::string split_filter = cfg.get_string("split", "all");
  const double logvar_threshold = cfg.get_double("logvar_threshold", 0.0);
  const bool entry_only = cfg.get_bool("entry_only", false);
  const RansacConfig ransac = ransac_from(cfg);
  const NoiseSpec noise = noise_from(cfg);
  cfg.check_all_used();
  if (dataset.empty()) throw Error(ErrorCode::InvalidArgument, "no dataset given (--dataset)");
  if (out_path.empty()) throw Error(ErrorCode::InvalidArgument, "no output file given (--out)");

  enum class Source { Gt, Noisy, External } kind;
  fs::path external_dir;
  if (source == "gt") {
    kind = Source::Gt;
  } else if (source == "noisy") {
    kind = Source::Noisy;
  } else if (source.rfind("external:", 0) == 0 && source.size() > 9) {
    kind = Source::External;
    external_dir = source.substr(9);
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown map source '" + source + "' (gt | noisy | external:DIR)");
  }
  std::optional<Split> only;
  if (split_filter != "all") only = parse_split(split_filter);
  echo(cfg, err);

  const DatasetManifest manifest = read_manifest(dataset);
  const DatasetInfo info = read_dataset_info(dataset);
  Eigen::AlignedBox3d box;
  if (kind == Source::Noisy) box = load_volume(dataset / info.volume_file).bounds();

  std::vector<const ManifestRecord*> views;
  std::vector<std::size_t> view_index;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (only && manifest.records[i].split != *only) continue;
    views.push_back(&manifest.records[i]);
    view_index.push_back(i);
  }

  const auto start = std::chrono::steady_clock::now();
  std::vector<std::string> lines(views.size());
  std::vector<char> ok(views.size(), 0);
  std::vector<double> wall_ms(views.size(), 0.0);
  parallel_for(static_cast<int>(views.size()), [&](int k) {
    const auto view_start = std::chrono::steady_clock::now();
    const ManifestRecord& r = *views[static_cast<std::size_t>(k)];
    const std::uint64_t stream = view_index[static_cast<std::size_t>(k)];
    SceneCoordMap map;
    switch (kind) {
      case Source::Gt: map = oracle_exact(r, dataset); break;
      case Source::Noisy: {
        NoiseSpec n = noise;
        n.seed = mix_seed(noise.seed ^ 0x6e6f697379ULL, stream);
        map = oracle_noisy(oracle_exact(r, dataset), n, box);
        break;
      }
      case Source::External: map = load_external_map(external_dir / (r.id + ".scm")); break;
    }
    if (map.width != info.camera.width || map.height != info.camera.height)
      throw Error(ErrorCode::DimensionMismatch, "map for view " + r.id + " does not match the camera size");

    ojson j;
    j["id"] = r.id;
    j["split"] = std::string(to_string(r.split));
    j["source"] = source;
    RansacConfig rc = ransac;
    rc.seed = mix_seed(ransac.seed, stream);
    try {
      const PoseEstimate est = register_pose(filter_map(map, logvar_threshold, entry_only), info.camera, rc);
      j["converged"] = est.converged;
      ojson rot = ojson::array();
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) rot.push_back(est.pose.rotation()(a, b));
      j["rotation"] = rot;
      j["translation_mm"] = vec_json(est.pose.translation());
      j["inlier_count"] = est.inlier_count;
      j["inlier_ratio"] = est.inlier_ratio;
      j["mean_reproj_error_px"] = est.mean_reproj_error_px;
      j["iterations_used"] = est.iterations_used;
      j["correspondences"] = est.used_correspondences;
      ok[static_cast<std::size_t>(k)] = est.converged ? 1 : 0;
    } catch (const Error& e) {
      j["converged"] = false;
      j["rotation"] = nullptr;
      j["translation_mm"] = nullptr;
      j["error"] = e.what();
    }
    lines[static_cast<std::size_t>(k)] = j.dump() + "\n";
    wall_ms[static_cast<std::size_t>(k)] = 1000.0 * elapsed_s(view_start);
  });

  std::string body;
  for (const auto& l : lines) body += l;
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  detail::write_file(out_path, body);
  const auto converged = std::count(ok.begin(), ok.end(), 1);
  // Timing stays in the log so result files are reproducible byte for byte.
  for (std::size_t k = 0; k < views.size(); ++k) err << "view " << views[k]->id << " wall_time_ms " << wall_ms[k] << "\n";
  err << "register: " << views.size() << " views in " << elapsed_s(start) << " s\n";
  out << "registered " << converged << "/" << views.size() << " views, results in " << out_path.string() << "\n";
  return 0;
}

int cmd_evaluate(const Config& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dataset = cfg.get_string("dataset", "");
  const fs::path results_path = cfg.get_string("results", "");
  const std::string landmarks_arg = cfg.get_string("landmarks", "");
  const fs::path out_path = cfg.get_string("out", "");
  const fs::path csv_path = cfg.get_string("csv", "");
  const double threshold = cfg.get_double("failure_threshold_mm", kDefaultFailureThresholdMm);
  cfg.check_all_used();
  if (dataset.empty()) throw Error(ErrorCode::InvalidArgument, "no dataset given (--dataset)");
  if (results_path.empty()) throw Error(ErrorCode::InvalidArgument, "no results file given (--results)");
  echo(cfg, err);

  const fs::path landmarks_path = landmarks_arg.empty() ? dataset / "landmarks.json" : fs::path(landmarks_arg);
  const LandmarkSet landmarks = load_landmarks(landmarks_path);
  const DatasetManifest manifest = read_manifest(dataset);
  const DatasetInfo info = read_dataset_info(dataset);
  const auto results = read_results(results_path);

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> m(results.size(), inf);
  std::vector<double> pm(results.size(), inf);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const ManifestRecord* rec = manifest.find(results[i].id);
    if (!rec) throw Error(ErrorCode::ParseError, "result for unknown view id " + results[i].id);
    if (!results[i].converged) continue;
    m[i] = mtre(landmarks, rec->pose, *results[i].pose);
    try {
      pm[i] = proj_mtre(landmarks, info.camera, rec->pose, *results[i].pose);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::LandmarkBehindCamera) throw;
    }
  }

  const MetricReport rep = report(m, threshold);
  const MetricReport proj = report(pm, threshold);
  if (!out_path.empty()) {
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    detail::write_file(out_path, rep.to_json());
  }
  if (!csv_path.empty()) {
    std::string csv = "id,converged,mtre_mm,proj_mtre_mm\n";
    auto cell = [](double v) { return std::isfinite(v) ? detail::format_number(v) : std::string("inf"); };
    for (std::size_t i = 0; i < results.size(); ++i)
      csv += results[i].id + "," + (results[i].converged ? "1" : "0") + "," + cell(m[i]) + "," + cell(pm[i]) + "\n";
    detail::write_file(csv_path, csv);
  }
  out << rep.to_text("mTRE[mm]") << proj.to_text("proj.mTRE") << "unregistered views: " << rep.n_failures_unregistered
      << "\n";
  return 0;
}

int cmd_overlay(const Config& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dataset = cfg.get_string("dataset", "");
  const fs::path results_path = cfg.get_string("results", "");
  const std::string view = cfg.get_string("view", "");
  const fs::path out_path = cfg.get_string("out", "");
  cfg.check_all_used();
  if (dataset.empty() || results_path.empty() || view.empty() || out_path.empty())
    throw Error(ErrorCode::InvalidArgument, "overlay needs --dataset, --results, --view and --out");
  echo(cfg, err);

  const DatasetManifest manifest = read_manifest(dataset);
  const ManifestRecord* rec = manifest.find(view);
  if (!rec) throw Error(ErrorCode::InvalidArgument, "unknown view id " + view);
  const auto results = read_results(results_path);
  const auto it = std::find_if(results.begin(), results.end(), [&](const ResultRecord& r) { return r.id == view; });
  if (it == results.end()) throw Error(ErrorCode::InvalidArgument, "no registration result for view " + view);
  if (!it->converged) throw Error(ErrorCode::InvalidArgument, "view " + view + " was not registered");

  const DatasetInfo info = read_dataset_info(dataset);
  const Volume v = load_volume(dataset / info.volume_file);
  const Image base = load_pgm(dataset / rec->image_path);
  Mask edges;
  const Image overlay = render_overlay(v, info.iso, info.camera, *it->pose, base, &edges);

  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  const std::string ext = out_path.extension().string();
  if (ext == ".ppm")
    save_overlay_ppm(base, edges, out_path);
  else
    save_image(overlay, out_path, ext == ".csv" ? ImageFormat::Csv : ImageFormat::Pgm16);
  out << "wrote overlay of view " << view << " (" << edges.count() << " edge pixels) to " << out_path.string() << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scene-coordinate 2D/3D registration toolkit"};
  app.name("scregistrar");
  app.require_subcommand(1);

  PhantomArgs ph;
  auto* phantom = app.add_subcommand("phantom", "write an analytic phantom volume and its landmarks");
  phantom->add_option("--kind", ph.kind, "sphere | two-lobe")->capture_default_str();
  phantom->add_option("--size", ph.size, "voxels per axis")->capture_default_str();
  phantom->add_option("--spacing", ph.spacing, "voxel spacing, mm")->capture_default_str();
  phantom->add_option("--radius", ph.radius, "sphere radius, mm")->capture_default_str();
  phantom->add_option("--out", ph.out, "volume file")->required();
  phantom->add_option("--landmarks", ph.landmarks, "landmark JSON file");

  Common sim_c;
  auto* simulate = app.add_subcommand("simulate", "render a simulated C-arm dataset");
  add_common(simulate, sim_c);
  const std::vector<std::pair<CLI::Option*, std::string>> sim_flags = {
      {simulate->add_option("--volume", "CT volume file"), "volume"},
      {simulate->add_option("--out", "dataset directory"), "out"},
      {simulate->add_option("--seed", "protocol seed"), "seed"},
      {simulate->add_option("--total-views", "number of views"), "total_views"},
      {simulate->add_option("--iso-threshold", "isosurface threshold, HU"), "iso_threshold"},
      {simulate->add_option("--landmarks", "landmark file copied into the dataset"), "landmarks"},
  };

  Common reg_c;
  auto* reg = app.add_subcommand("register", "estimate a pose per view with PnP + RANSAC");
  add_common(reg, reg_c);
  const std::vector<std::pair<CLI::Option*, std::string>> reg_flags = {
      {reg->add_option("--dataset", "dataset directory"), "dataset"},
      {reg->add_option("--source", "gt | noisy | external:DIR"), "source"},
      {reg->add_option("--ransac-iters", "RANSAC iterations (1000)"), "ransac_iters"},
      {reg->add_option("--reproj-px", "inlier reprojection threshold, px (10)"), "reproj_px"},
      {reg->add_option("--logvar-threshold", "keep points with logvar <= this (0)"), "logvar_threshold"},
      {reg->add_option("--outlier-rate", "noisy source outlier probability"), "outlier_rate"},
      {reg->add_option("--noise-sigma", "noisy source sigma, mm"), "noise_sigma_mm"},
      {reg->add_option("--split", "all | train | val | test"), "split"},
      {reg->add_option("--seed", "RANSAC and noise seed"), "seed"},
      {reg->add_option("--out", "results file (JSON lines)"), "out"},
  };

  Common eval_c;
  auto* evaluate = app.add_subcommand("evaluate", "mTRE percentiles and gross failure rate");
  add_common(evaluate, eval_c);
  const std::vector<std::pair<CLI::Option*, std::string>> eval_flags = {
      {evaluate->add_option("--dataset", "dataset directory"), "dataset"},
      {evaluate->add_option("--results", "results file from register"), "results"},
      {evaluate->add_option("--landmarks", "landmark file (default DATASET/landmarks.json)"), "landmarks"},
      {evaluate->add_option("--out", "report JSON"), "out"},
      {evaluate->add_option("--csv", "per-view CSV"), "csv"},
      {evaluate->add_option("--threshold", "failure threshold, mm (10)"), "failure_threshold_mm"},
  };

  Common ov_c;
  auto* overlay = app.add_subcommand("overlay", "draw the isosurface outline under the estimated pose");
  add_common(overlay, ov_c);
  const std::vector<std::pair<CLI::Option*, std::string>> ov_flags = {
      {overlay->add_option("--dataset", "dataset directory"), "dataset"},
      {overlay->add_option("--results", "results file from register"), "results"},
      {overlay->add_option("--view", "view id"), "view"},
      {overlay->add_option("--out", "image file (.pgm, .ppm or .csv)"), "out"},
  };

  std::vector<const char*> argv{"scregistrar"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (phantom->parsed()) return cmd_phantom(ph, out);
    if (simulate->parsed()) return cmd_simulate(layered(sim_c, sim_flags), out, err);
    if (reg->parsed()) return cmd_register(layered(reg_c, reg_flags), out, err);
    if (evaluate->parsed()) return cmd_evaluate(layered(eval_c, eval_flags), out, err);
    if (overlay->parsed()) return cmd_overlay(layered(ov_c, ov_flags), out, err);
  } catch (const Error& e) {
    err << "scregistrar: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "scregistrar: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace scr::cli
