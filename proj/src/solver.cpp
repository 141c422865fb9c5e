#include "scr/solver.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace scr {

void RansacConfig::validate() const {
  if (max_iterations < 1) throw Error(ErrorCode::InvalidArgument, "max_iterations must be >= 1");
  if (!(reproj_threshold_px > 0)) throw Error(ErrorCode::InvalidArgument, "reproj_threshold_px must be positive");
  if (min_sample < 4) throw Error(ErrorCode::InvalidArgument, "min_sample must be >= 4");
  if (!(confidence > 0 && confidence < 1)) throw Error(ErrorCode::InvalidArgument, "confidence must lie in (0, 1)");
  if (max_correspondences < min_sample)
    throw Error(ErrorCode::InvalidArgument, "max_correspondences must be >= min_sample");
}

double reprojection_error(const CameraModeld& camera, const RigidTransformd& pose, const Correspondence& c) {
  const Eigen::Vector3d xc = pose * c.point;
  if (xc.z() <= 1e-9) return std::numeric_limits<double>::infinity();
  return (project_camera_point(camera, xc) - c.pixel).norm();
}

double mean_reprojection_error(const CameraModeld& camera, const RigidTransformd& pose,
                               std::span<const Correspondence> correspondences) {
  if (correspondences.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : correspondences) sum += reprojection_error(camera, pose, c);
  return sum / static_cast<double>(correspondences.size());
}

namespace {

// Coefficients are stored lowest degree first.
using Poly = std::vector<double>;

Poly poly_mul(const Poly& a, const Poly& b) {
  Poly r(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
  return r;
}

Poly poly_add(Poly a, const Poly& b, double scale = 1.0) {
  if (a.size() < b.size()) a.resize(b.size(), 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) a[i] += scale * b[i];
  return a;
}

double poly_eval(const Poly& p, double x) {
  double r = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) r = r * x + *it;
  return r;
}

double poly_deriv_eval(const Poly& p, double x) {
  double r = 0.0;
  for (std::size_t i = p.size() - 1; i >= 1; --i) r = r * x + static_cast<double>(i) * p[i];
  return r;
}

/// Real roots via companion-matrix eigenvalues, polished with Newton steps.
std::vector<double> real_roots(Poly p) {
  const double scale = std::accumulate(p.begin(), p.end(), 0.0, [](double m, double c) { return std::max(m, std::abs(c)); });
  if (scale == 0.0) return {};
  for (double& c : p) c /= scale;
  while (p.size() > 1 && std::abs(p.back()) < 1e-12) p.pop_back();
  const int degree = static_cast<int>(p.size()) - 1;
  if (degree < 1) return {};

  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 0; i < degree; ++i) companion(0, i) = -p[degree - 1 - i] / p[degree];
  for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(companion, false);

  std::vector<double> roots;
  for (int i = 0; i < degree; ++i) {
    const std::complex<double> z = es.eigenvalues()[i];
    // Double roots (symmetric configurations) come back as a complex pair
    // with a small imaginary part; keep them when the real part is a root.
    if (std::abs(z.imag()) > 1e-3 * (1.0 + std::abs(z.real()))) continue;
    double x = z.real();
    // Newton polish; a step that raises |p| (flat derivative near a double
    // root) is rejected.
    for (int k = 0; k < 8; ++k) {
      const double d = poly_deriv_eval(p, x);
      if (d == 0.0) break;
      const double step = poly_eval(p, x) / d;
      if (std::abs(poly_eval(p, x - step)) >= std::abs(poly_eval(p, x))) break;
      x -= step;
      if (std::abs(step) < 1e-15 * (1.0 + std::abs(x))) break;
    }
    if (std::abs(z.imag()) > 1e-6 * (1.0 + std::abs(z.real())) && std::abs(poly_eval(p, x)) > 1e-10) continue;
    if (std::any_of(roots.begin(), roots.end(), [&](double r) { return std::abs(r - x) <= 1e-9 * (1.0 + std::abs(x)); }))
      continue;
    roots.push_back(x);
  }
  return roots;
}

bool all_in_front(const RigidTransformd& pose, std::span<const Correspondence> pts) {
  return std::all_of(pts.begin(), pts.end(), [&](const Correspondence& c) { return (pose * c.point).z() > 1e-9; });
}

/// Grunert's P3P: depths s2 = u s1, s3 = v s1 along the three bearings; the
/// law of cosines gives u as a rational function of v and a quartic in v.
std::vector<RigidTransformd> solve_p3p(const std::array<Eigen::Vector3d, 3>& world,
                                       const std::array<Eigen::Vector3d, 3>& bearing) {
  const double a2 = (world[1] - world[2]).squaredNorm();
  const double b2 = (world[0] - world[2]).squaredNorm();
  const double c2 = (world[0] - world[1]).squaredNorm();
  const double cos_alpha = bearing[1].dot(bearing[2]);
  const double cos_beta = bearing[0].dot(bearing[2]);
  const double cos_gamma = bearing[0].dot(bearing[1]);
  const double k1 = c2 / b2;
  const double k2 = a2 / b2;

  const Poly b_poly{1.0, -2.0 * cos_beta, 1.0};  // 1 + v^2 - 2 v cos(beta)
  const Poly n_poly = poly_add(Poly{-1.0, 0.0, 1.0}, b_poly, k1 - k2);
  const Poly d_poly{-2.0 * cos_gamma, 2.0 * cos_alpha};
  const Poly one_minus_k1b = poly_add(Poly{1.0}, b_poly, -k1);
  Poly quartic = poly_mul(n_poly, n_poly);
  quartic = poly_add(quartic, poly_mul(n_poly, d_poly), -2.0 * cos_gamma);
  quartic = poly_add(quartic, poly_mul(one_minus_k1b, poly_mul(d_poly, d_poly)));

  Eigen::Matrix3d src;
  for (int i = 0; i < 3; ++i) src.col(i) = world[i];

  // u from the c-side equation 1 + u^2 - 2 u cos(gamma) = c^2 / s1^2; of its
  // two roots keep those that also satisfy the a-side. The rational form of u
  // is 0 / 0 on symmetric triples, so it is not used here.
  auto u_candidates = [&](double v, double s1_sq) {
    std::vector<double> us;
    const double disc = cos_gamma * cos_gamma - 1.0 + c2 / s1_sq;
    if (disc < -1e-9) return us;
    const double root = std::sqrt(std::max(0.0, disc));
    const double a_rhs = a2 / s1_sq;
    double best = std::numeric_limits<double>::infinity();
    std::array<double, 2> res{};
    const std::array<double, 2> cand{cos_gamma + root, cos_gamma - root};
    for (int i = 0; i < 2; ++i) {
      const double u = cand[i];
      res[i] = std::abs(u * u + v * v - 2.0 * u * v * cos_alpha - a_rhs) / std::max(a_rhs, 1e-12);
      best = std::min(best, res[i]);
    }
    for (int i = 0; i < 2; ++i)
      if (cand[i] > 0 && res[i] <= std::max(1e-6, 10.0 * best) && (i == 0 || root > 1e-12)) us.push_back(cand[i]);
    return us;
  };

  std::vector<RigidTransformd> out;
  for (double v : real_roots(quartic)) {
    if (!(v > 0)) continue;
    const double bv = poly_eval(b_poly, v);
    if (!(bv > 0)) continue;
    const double s1 = std::sqrt(b2 / bv);
    for (double u : u_candidates(v, s1 * s1)) {
      Eigen::Matrix3d dst;
      dst.col(0) = s1 * bearing[0];
      dst.col(1) = u * s1 * bearing[1];
      dst.col(2) = v * s1 * bearing[2];
      const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
      const Eigen::Matrix3d r = t.topLeftCorner<3, 3>();
      if (!r.allFinite()) continue;
      out.emplace_back(nearest_rotation(r), t.topRightCorner<3, 1>());
    }
  }
  return out;
}

}  // namespace

std::vector<RigidTransformd> pnp_minimal(std::span<const Correspondence> sample, const CameraModeld& camera) {
  if (sample.size() < 4)
    throw Error(ErrorCode::InsufficientCorrespondences, "minimal solver needs at least 4 correspondences");

  Eigen::Matrix3Xd pts(3, static_cast<Eigen::Index>(sample.size()));
  for (std::size_t i = 0; i < sample.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = sample[i].point;
  const Eigen::Matrix3Xd centered = pts.colwise() - pts.rowwise().mean();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3Xd>(centered).singularValues();
  if (!(sv[0] > 0) || sv[1] <= 1e-9 * sv[0])
    throw Error(ErrorCode::DegenerateConfiguration, "sample points are collinear or coincident");

  // Best-conditioned triple among the first four points: largest triangle.
  const std::size_t m = std::min<std::size_t>(sample.size(), 4);
  std::array<std::size_t, 3> best{0, 1, 2};
  double best_area = -1.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      for (std::size_t k = j + 1; k < m; ++k) {
        const double area = (sample[j].point - sample[i].point).cross(sample[k].point - sample[i].point).norm();
        if (area > best_area) {
          best_area = area;
          best = {i, j, k};
        }
      }
  if (best_area <= 1e-9 * sv[0] * sv[0])
    throw Error(ErrorCode::DegenerateConfiguration, "no non-collinear triple in the sample");

  std::array<Eigen::Vector3d, 3> world;
  std::array<Eigen::Vector3d, 3> bearing;
  for (int i = 0; i < 3; ++i) {
    world[i] = sample[best[i]].point;
    bearing[i] = normalized_ray(camera, sample[best[i]].pixel).normalized();
  }

  std::vector<std::pair<double, RigidTransformd>> scored;
  for (const auto& pose : solve_p3p(world, bearing)) {
    if (!all_in_front(pose, sample)) continue;
    double err = 0.0;
    for (const auto& c : sample) err += reprojection_error(camera, pose, c);
    scored.emplace_back(err, pose);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<RigidTransformd> out;
  out.reserve(scored.size());
  for (auto& s : scored) out.push_back(s.second);
  return out;
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt
// ---------------------------------------------------------------------------

namespace {

RigidTransformd apply_increment(const RigidTransformd& pose, const Eigen::Matrix<double, 6, 1>& delta) {
  const Eigen::Vector3d w = delta.head<3>();
  const double angle = w.norm();
  const Eigen::Matrix3d dr =
      angle > 0 ? Eigen::AngleAxisd(angle, w / angle).toRotationMatrix() : Eigen::Matrix3d::Identity();
  Eigen::Matrix3d r = dr * pose.rotation();
  if (orthonormality_error(r) > 1e-12) r = nearest_rotation(r);
  return {r, dr * pose.translation() + delta.tail<3>()};
}

double sum_squared_error(const CameraModeld& camera, const RigidTransformd& pose,
                         std::span<const Correspondence> pts) {
  double sum = 0.0;
  for (const auto& c : pts) {
    const Eigen::Vector3d xc = pose * c.point;
    if (xc.z() <= 1e-9) return std::numeric_limits<double>::infinity();
    sum += (project_camera_point(camera, xc) - c.pixel).squaredNorm();
  }
  return sum;
}

}  // namespace

RefineResult refine_lm(const RigidTransformd& initial, std::span<const Correspondence> correspondences,
                       const CameraModeld& camera, int max_iters, double tol) {
  std::vector<Correspondence> active;
  active.reserve(correspondences.size());
  for (const auto& c : correspondences)
    if ((initial * c.point).z() > 1e-9) active.push_back(c);
  if (active.size() < 3)
    throw Error(ErrorCode::AllPointsBehindCamera, "fewer than three correspondences in front of the camera");

  using Mat6 = Eigen::Matrix<double, 6, 6>;
  using Vec6 = Eigen::Matrix<double, 6, 1>;

  RigidTransformd pose = initial;
  double cost = sum_squared_error(camera, pose, active);
  double lambda = 1e-4;
  int iter = 0;
  for (; iter < max_iters; ++iter) {
    Mat6 h = Mat6::Zero();
    Vec6 g = Vec6::Zero();
    for (const auto& c : active) {
      const Eigen::Vector3d xc = pose * c.point;
      const double iz = 1.0 / xc.z();
      const Eigen::Vector2d r(camera.fx * xc.x() * iz + camera.cx - c.pixel.x(),
                              camera.fy * xc.y() * iz + camera.cy - c.pixel.y());
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << camera.fx * iz, 0, -camera.fx * xc.x() * iz * iz, 0, camera.fy * iz, -camera.fy * xc.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dxc;
      dxc.leftCols<3>() << 0, xc.z(), -xc.y(), -xc.z(), 0, xc.x(), xc.y(), -xc.x(), 0;
      dxc.rightCols<3>().setIdentity();
      const Eigen::Matrix<double, 2, 6> j = dproj * dxc;
      h.noalias() += j.transpose() * j;
      g.noalias() += j.transpose() * r;
    }

    bool accepted = false;
    bool small_step = false;
    while (!accepted) {
      Mat6 damped = h;
      damped.diagonal() += lambda * h.diagonal().cwiseMax(1e-12);
      const Vec6 delta = damped.ldlt().solve(-g);
      if (!delta.allFinite() || delta.norm() < tol) {
        small_step = true;
        break;
      }
      const RigidTransformd candidate = apply_increment(pose, delta);
      const double candidate_cost = sum_squared_error(camera, candidate, active);
      if (candidate_cost < cost) {
        pose = candidate;
        const double decrease = cost - candidate_cost;
        cost = candidate_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (decrease <= 1e-15 * std::max(cost, 1e-300)) small_step = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e12) {
          small_step = true;
          break;
        }
      }
    }
    if (small_step) break;
  }

  const double initial_error = mean_reprojection_error(camera, initial, active);
  const double final_error = mean_reprojection_error(camera, pose, active);
  if (!(final_error <= initial_error)) return {initial, initial_error, iter};
  return {pose, final_error, iter};
}

// ---------------------------------------------------------------------------
// RANSAC
// ---------------------------------------------------------------------------

namespace {

struct Score {
  int count = 0;
  double mean_error = std::numeric_limits<double>::infinity();
};

class InlierScorer {
 public:
  InlierScorer(std::span<const Correspondence> pts, const CameraModeld& camera, double threshold)
      : camera_(camera), threshold_(threshold), world_(3, static_cast<Eigen::Index>(pts.size())),
        pixels_(2, static_cast<Eigen::Index>(pts.size())) {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      world_.col(static_cast<Eigen::Index>(i)) = pts[i].point;
      pixels_.col(static_cast<Eigen::Index>(i)) = pts[i].pixel;
    }
  }

  Score score(const RigidTransformd& pose, std::vector<int>* inliers = nullptr) const {
    const Eigen::Matrix3Xd xc = (pose.rotation() * world_).colwise() + pose.translation();
    Score s;
    double sum = 0.0;
    if (inliers) inliers->clear();
    for (Eigen::Index i = 0; i < xc.cols(); ++i) {
      const double z = xc(2, i);
      if (z <= 1e-9) continue;
      const double du = camera_.fx * xc(0, i) / z + camera_.cx - pixels_(0, i);
      const double dv = camera_.fy * xc(1, i) / z + camera_.cy - pixels_(1, i);
      const double e = std::sqrt(du * du + dv * dv);
      if (e < threshold_) {
        ++s.count;
        sum += e;
        if (inliers) inliers->push_back(static_cast<int>(i));
      }
    }
    if (s.count) s.mean_error = sum / s.count;
    return s;
  }

 private:
  const CameraModeld& camera_;
  double threshold_;
  Eigen::Matrix3Xd world_;
  Eigen::Matrix2Xd pixels_;
};

bool better(const Score& a, const Score& b) {
  return a.count > b.count || (a.count == b.count && a.mean_error < b.mean_error);
}

}  // namespace

PoseEstimate register_pose(const CorrespondenceSet& correspondences, const CameraModeld& camera,
                           const RansacConfig& cfg) {
  cfg.validate();
  const int total = static_cast<int>(correspondences.size());
  if (total < cfg.min_sample)
    throw Error(ErrorCode::InsufficientCorrespondences,
                std::to_string(total) + " correspondences, need " + std::to_string(cfg.min_sample));

  std::mt19937_64 rng(cfg.seed);

  std::vector<Correspondence> pts;
  if (total > cfg.max_correspondences) {
    std::vector<int> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < cfg.max_correspondences; ++i) {
      std::uniform_int_distribution<int> pick(i, total - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(cfg.max_correspondences);
    std::sort(idx.begin(), idx.end());
    pts.reserve(idx.size());
    for (int i : idx) pts.push_back(correspondences[static_cast<std::size_t>(i)]);
  } else {
    pts = correspondences;
  }
  const int m = static_cast<int>(pts.size());
  const InlierScorer scorer(pts, camera, cfg.reproj_threshold_px);

  Score best;
  RigidTransformd best_pose;
  int iterations = 0;
  std::vector<Correspondence> sample(static_cast<std::size_t>(cfg.min_sample));
  std::vector<int> chosen;
  std::uniform_int_distribution<int> pick(0, m - 1);
  for (int it = 0; it < cfg.max_iterations; ++it) {
    iterations = it + 1;
    chosen.clear();
    while (static_cast<int>(chosen.size()) < cfg.min_sample) {
      const int k = pick(rng);
      if (std::find(chosen.begin(), chosen.end(), k) == chosen.end()) chosen.push_back(k);
    }
    for (int s = 0; s < cfg.min_sample; ++s) sample[static_cast<std::size_t>(s)] = pts[static_cast<std::size_t>(chosen[s])];

    std::vector<RigidTransformd> candidates;
    try {
      candidates = pnp_minimal(sample, camera);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateConfiguration) throw;
      continue;
    }
    for (const auto& pose : candidates) {
      const Score s = scorer.score(pose);
      if (better(s, best)) {
        best = s;
        best_pose = pose;
      }
    }

    if (cfg.early_exit && best.count > 0) {
      const double w = static_cast<double>(best.count) / m;
      const double p_good = std::pow(w, cfg.min_sample);
      if (p_good >= 1.0) break;
      const double bound = std::log(1.0 - cfg.confidence) / std::log(1.0 - p_good);
      if (iterations >= bound) break;
    }
  }

  if (best.count < cfg.min_sample)
    throw Error(ErrorCode::NoConsensus, "best consensus has " + std::to_string(best.count) + " inliers");

  // Refine on the consensus set; re-collect inliers and repeat while the set grows.
  std::vector<int> inliers;
  scorer.score(best_pose, &inliers);
  RigidTransformd pose = best_pose;
  for (int round = 0; round < 3; ++round) {
    std::vector<Correspondence> subset;
    subset.reserve(inliers.size());
    for (int i : inliers) subset.push_back(pts[static_cast<std::size_t>(i)]);
    pose = refine_lm(pose, subset, camera, cfg.lm_max_iterations, cfg.lm_tolerance).pose;
    std::vector<int> next;
    scorer.score(pose, &next);
    const bool grew = next.size() > inliers.size();
    inliers = std::move(next);
    if (!grew) break;
  }

  // Outliers that happen to fall inside the threshold bias the fit (mostly
  // in depth); refit on the core of the residual distribution.
  for (int round = 0; round < 3; ++round) {
    std::vector<double> err;
    err.reserve(inliers.size());
    for (int i : inliers) err.push_back(reprojection_error(camera, pose, pts[static_cast<std::size_t>(i)]));
    std::vector<double> sorted = err;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double cutoff = std::min(cfg.reproj_threshold_px, 2.5 * sorted[sorted.size() / 2]);
    std::vector<Correspondence> core;
    for (std::size_t k = 0; k < inliers.size(); ++k)
      if (err[k] <= cutoff) core.push_back(pts[static_cast<std::size_t>(inliers[k])]);
    if (core.size() < 6 || core.size() == inliers.size()) break;
    pose = refine_lm(pose, core, camera, cfg.lm_max_iterations, cfg.lm_tolerance).pose;
  }

  const Score final_score = scorer.score(pose, &inliers);
  if (final_score.count < cfg.min_sample)
    throw Error(ErrorCode::NoConsensus, "refined pose keeps " + std::to_string(final_score.count) + " inliers");

  PoseEstimate est;
  est.pose = pose;
  est.inlier_count = final_score.count;
  est.inlier_ratio = static_cast<double>(final_score.count) / m;
  est.mean_reproj_error_px = final_score.mean_error;
  est.iterations_used = iterations;
  est.converged = true;
  est.inliers = std::move(inliers);
  est.used_correspondences = m;
  return est;
}

}  // namespace scr
