#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "liloc/errors.hpp"
#include "liloc/geometry.hpp"
#include "liloc/map_store.hpp"
#include "liloc/point_cloud.hpp"

namespace liloc {

struct RegistrationConfig {
  int max_iterations = 50;
  double error_tolerance = 0.05;              // m, mean residual that counts as converged
  double correspondence_max_distance = 2.0;   // m
  int min_region_points = 100;
  double r_min = 20.0;                        // m
  double r_max = 200.0;                       // m
  double radius_growth = 2.0;
  double convergence_delta = 1e-4;            // m, stall threshold on the change of E
  double scan_voxel_leaf = 0.4;               // m, 0 disables scan downsampling

  // Relocalization hypothesis search. Candidate seeds lie on a grid of
  // `reloc_grid_step` within `reloc_search_fraction * r` of the GNSS seed.
  double reloc_search_fraction = 0.25;
  double reloc_grid_step = 2.0;               // m
  int reloc_coarse_points = 400;
  int reloc_coarse_iterations = 8;
  double reloc_score_gate = 0.3;              // m
  int reloc_refine_candidates = 3;
  double min_inlier_fraction = 0.3;

  void validate() const {
    if (max_iterations <= 0 || !(error_tolerance > 0) || !(correspondence_max_distance > 0) ||
        min_region_points <= 0 || !(r_min > 0) || !(r_max > 0) || !(convergence_delta > 0))
      throw Error(Errc::ConfigError, "registration parameters must be positive");
    if (r_min > r_max) throw Error(Errc::ConfigError, "r_min must not exceed r_max");
    if (!(radius_growth > 1.0)) throw Error(Errc::ConfigError, "radius_growth must exceed 1");
    if (scan_voxel_leaf < 0.0) throw Error(Errc::ConfigError, "scan_voxel_leaf must be >= 0");
    if (!(reloc_search_fraction >= 0) || !(reloc_grid_step > 0) || reloc_coarse_points <= 0 ||
        reloc_coarse_iterations < 0 || !(reloc_score_gate > 0) || reloc_refine_candidates <= 0)
      throw Error(Errc::ConfigError, "relocalization search parameters out of range");
    if (min_inlier_fraction < 0.0 || min_inlier_fraction > 1.0)
      throw Error(Errc::ConfigError, "min_inlier_fraction must lie in [0, 1]");
  }
};

/// T_k maps scan-frame points into the map frame; p_k is the same transform
/// read as the platform pose.
struct RegistrationResult {
  Pose T_k;
  Pose p_k;
  double fitness = 0.0;          // m, mean gated correspondence residual
  double initial_fitness = 0.0;  // m, residual at the initial guess
  int iterations = 0;
  bool converged = false;
  double inlier_fraction = 0.0;
  double radius = 0.0;           // region radius used
  int attempts = 1;              // relocalization attempts (1 for a plain registration)
  std::vector<double> fitness_history;
};

class RelocalizationFailed : public Error {
 public:
  RelocalizationFailed(std::optional<RegistrationResult> best, int attempts)
      : Error(Errc::RelocalizationFailed,
              "no converged registration up to r_max after " + std::to_string(attempts) + " attempts"),
        best_(std::move(best)),
        attempts_(attempts) {}

  const std::optional<RegistrationResult>& best_attempt() const { return best_; }
  int attempts() const { return attempts_; }

 private:
  std::optional<RegistrationResult> best_;
  int attempts_;
};

/// Closed-form least-squares rigid transform minimizing
/// sum |target_i - (t + R source_i)|^2 (centroid alignment + SVD of the
/// cross-covariance).
inline Pose best_rigid_transform(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) throw Error(Errc::InvalidArgument, "source/target size mismatch");
  if (source.size() < 3) throw Error(Errc::DegenerateConfiguration, "need at least 3 correspondences");
  const double n = static_cast<double>(source.size());
  Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    cs += source[i];
    ct += target[i];
  }
  cs /= n;
  ct /= n;
  Mat3 H = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) H += (source[i] - cs) * (target[i] - ct).transpose();

  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv[0] > 0.0) || sv[1] <= 1e-10 * sv[0])
    throw Error(Errc::DegenerateConfiguration, "correspondences are collinear or coincident");
  const Mat3& U = svd.matrixU();
  const Mat3& V = svd.matrixV();
  Mat3 D = Mat3::Identity();
  D(2, 2) = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 R = V * D * U.transpose();
  return {R, ct - R * cs};
}

/// SCANRANGE: three standard deviations of the GNSS position uncertainty,
/// clamped to [r_min, r_max].
inline double initial_radius(const Mat3& gnss_position_covariance, const RegistrationConfig& cfg) {
  const double tr = std::max(0.0, gnss_position_covariance.trace());
  return std::clamp(3.0 * std::sqrt(tr), cfg.r_min, cfg.r_max);
}

struct FitnessResult {
  double fitness = 0.0;
  double inlier_fraction = 0.0;
};

/// Mean nearest-neighbor residual over pairs within `gate`, and the fraction
/// of scan points that found such a pair.
inline FitnessResult evaluate_fitness(const PointCloud& scan, const GlobalMap& map, const Pose& T, double gate) {
  if (scan.empty()) throw Error(Errc::InvalidArgument, "empty scan");
  const Mat3 R = T.rotation.matrix();
  double sum = 0.0;
  std::size_t pairs = 0;
  for (const auto& s : scan.points) {
    const Neighbor nn = map.index().nearest(R * s + T.translation);
    if (nn.distance <= gate) {
      sum += nn.distance;
      ++pairs;
    }
  }
  if (pairs == 0) throw Error(Errc::NoCorrespondences, "no scan point within the correspondence gate");
  return {sum / static_cast<double>(pairs), static_cast<double>(pairs) / static_cast<double>(scan.size())};
}

namespace detail {

struct LocalRegion {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
  KdTree tree;
};

inline LocalRegion make_region(const GlobalMap& map, const Vec3& center, double radius, int min_points) {
  LocalRegion region;
  region.center = center;
  region.radius = radius;
  PointCloud pts = extract_local_region(map, center, radius);
  if (static_cast<int>(pts.size()) < min_points)
    throw Error(Errc::RegionEmpty, "local region holds " + std::to_string(pts.size()) + " points, need " +
                                       std::to_string(min_points));
  region.tree = KdTree(pts.points);
  return region;
}

struct Correspondences {
  std::vector<Vec3> source;
  std::vector<Vec3> target;
  std::size_t considered = 0;
  double mean_residual = 0.0;
};

/// Pairs each scan point lying inside the region (under T) with its nearest
/// region point, keeping pairs within `gate`.
inline Correspondences associate(std::span<const Vec3> scan, const LocalRegion& region, const Pose& T,
                                 double gate) {
  Correspondences c;
  c.source.reserve(scan.size());
  c.target.reserve(scan.size());
  const Mat3 R = T.rotation.matrix();
  const double r2 = region.radius * region.radius;
  double sum = 0.0;
  for (const auto& s : scan) {
    const Vec3 q = R * s + T.translation;
    if (squared_distance(q, region.center) >= r2) continue;
    ++c.considered;
    const Neighbor nn = region.tree.nearest(q);
    if (nn.distance <= gate) {
      c.source.push_back(s);
      c.target.push_back(nn.point);
      sum += nn.distance;
    }
  }
  if (!c.source.empty()) c.mean_residual = sum / static_cast<double>(c.source.size());
  return c;
}

inline double mean_residual(const Correspondences& c, const Pose& T) {
  const Mat3 R = T.rotation.matrix();
  double sum = 0.0;
  for (std::size_t i = 0; i < c.source.size(); ++i) sum += (c.target[i] - (R * c.source[i] + T.translation)).norm();
  return sum / static_cast<double>(c.source.size());
}

inline std::vector<Vec3> prepare_scan(const PointCloud& scan, const RegistrationConfig& cfg) {
  if (cfg.scan_voxel_leaf > 0.0) return voxel_subsample(scan, cfg.scan_voxel_leaf).points;
  return scan.points;
}

inline RegistrationResult run_icp(std::span<const Vec3> src, const GlobalMap& map, const Pose& guess,
                                  double r_k, const RegistrationConfig& cfg) {
  LocalRegion region = make_region(map, guess.translation, r_k, cfg.min_region_points);
  RegistrationResult res;
  res.radius = r_k;
  Pose T = guess;
  double e_prev = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= cfg.max_iterations; ++i) {
    const Correspondences c = associate(src, region, T, cfg.correspondence_max_distance);
    if (c.source.empty()) throw Error(Errc::NoCorrespondences, "no correspondences within the gate");
    if (i == 1) res.initial_fitness = c.mean_residual;
    T = best_rigid_transform(c.source, c.target);
    const double e = mean_residual(c, T);
    res.iterations = i;
    res.fitness = e;
    res.inlier_fraction = static_cast<double>(c.source.size()) / static_cast<double>(std::max<std::size_t>(1, c.considered));
    res.fitness_history.push_back(e);
    if (e < cfg.error_tolerance) {
      res.converged = true;
      break;
    }
    if (std::abs(e - e_prev) < cfg.convergence_delta) break;
    e_prev = e;
    if ((T.translation - region.center).norm() > r_k / 4.0)
      region = make_region(map, T.translation, r_k, cfg.min_region_points);
  }
  res.T_k = T;
  res.p_k = T;
  return res;
}

}  // namespace detail

/// Registers `scan` against the map region of radius `r_k` around the guess.
/// Iterates nearest-neighbor association and closed-form alignment until the
/// mean residual drops below the error tolerance (converged), stops changing
/// (stalled), or the iteration budget runs out. The region is re-extracted
/// when the estimate drifts more than r_k / 4 from its center.
inline RegistrationResult register_scan(const PointCloud& scan, const GlobalMap& map, const Pose& initial_guess,
                                        double r_k, const RegistrationConfig& cfg) {
  if (scan.empty()) throw Error(Errc::InvalidArgument, "empty scan");
  if (!initial_guess.is_finite()) throw Error(Errc::InvalidArgument, "non-finite initial guess");
  const std::vector<Vec3> src = detail::prepare_scan(scan, cfg);
  return detail::run_icp(src, map, initial_guess, r_k, cfg);
}

inline bool registration_accepted(const RegistrationResult& r, const RegistrationConfig& cfg) {
  return r.converged && r.inlier_fraction >= cfg.min_inlier_fraction;
}

namespace detail {

struct Candidate {
  Pose pose;
  std::size_t inliers = 0;
  double residual = 0.0;
  std::size_t order = 0;
};

/// A few gated ICP iterations on a sparse scan subset, then an inlier count
/// under a tight gate. Used only to rank relocalization hypotheses.
inline Candidate score_candidate(std::span<const Vec3> coarse, const LocalRegion& region, Pose T,
                                 const RegistrationConfig& cfg, std::size_t order) {
  for (int i = 0; i < cfg.reloc_coarse_iterations; ++i) {
    const Correspondences c = associate(coarse, region, T, cfg.correspondence_max_distance);
    if (c.source.size() < 3) break;
    try {
      T = best_rigid_transform(c.source, c.target);
    } catch (const Error&) {
      break;
    }
  }
  const Correspondences c = associate(coarse, region, T, cfg.reloc_score_gate);
  return {T, c.source.size(), c.mean_residual, order};
}

}  // namespace detail

/// Adaptive-radius relocalization from a coarse GNSS seed. The first attempt is
/// a plain registration from the seed at the initial radius. Each grown radius
/// registers from the seed and then ranks seed hypotheses on a grid within a
/// fraction of that radius and refines the best few. The radius grows
/// geometrically up to r_max.
inline RegistrationResult relocalize(const PointCloud& scan, const GlobalMap& map, const Pose& gnss_seed,
                                     const Mat3& gnss_cov, const RegistrationConfig& cfg) {
  if (scan.empty()) throw Error(Errc::InvalidArgument, "empty scan");
  const std::vector<Vec3> src = detail::prepare_scan(scan, cfg);
  std::vector<Vec3> coarse;
  {
    const std::size_t stride = std::max<std::size_t>(1, src.size() / static_cast<std::size_t>(cfg.reloc_coarse_points));
    for (std::size_t i = 0; i < src.size(); i += stride) coarse.push_back(src[i]);
  }

  std::optional<RegistrationResult> best;
  auto keep_best = [&](const RegistrationResult& r) {
    if (!best || (r.converged && !best->converged) ||
        (r.converged == best->converged && r.fitness < best->fitness))
      best = r;
  };

  double r = initial_radius(gnss_cov, cfg);
  int attempts = 0;
  while (true) {
    ++attempts;
    try {
      RegistrationResult res = detail::run_icp(src, map, gnss_seed, r, cfg);
      res.attempts = attempts;
      if (registration_accepted(res, cfg)) return res;
      keep_best(res);
    } catch (const Error& e) {
      if (e.code() != Errc::RegionEmpty && e.code() != Errc::NoCorrespondences &&
          e.code() != Errc::DegenerateConfiguration)
        throw;
    }

    const double rho = cfg.reloc_search_fraction * r;
    std::optional<detail::LocalRegion> region;
    if (attempts > 1 && rho > 0.0) {
      try {
        region = detail::make_region(map, gnss_seed.translation, r, cfg.min_region_points);
      } catch (const Error& e) {
        if (e.code() != Errc::RegionEmpty) throw;
      }
    }
    if (region) {
      std::vector<detail::Candidate> cands;
      const double step = cfg.reloc_grid_step;
      const int n = static_cast<int>(std::ceil(rho / step));
      const double reach = rho + 0.5 * step;
      std::size_t order = 0;
      for (int ix = -n; ix <= n; ++ix) {
        for (int iy = -n; iy <= n; ++iy) {
          const Vec3 off(ix * step, iy * step, 0.0);
          if (off.norm() > reach || (ix == 0 && iy == 0)) continue;
          const Pose seed{gnss_seed.rotation, gnss_seed.translation + off};
          cands.push_back(detail::score_candidate(coarse, *region, seed, cfg, order++));
        }
      }
      std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
        if (a.inliers != b.inliers) return a.inliers > b.inliers;
        return a.order < b.order;
      });
      const std::size_t k = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(cfg.reloc_refine_candidates));
      for (std::size_t i = 0; i < k; ++i) {
        try {
          RegistrationResult res = detail::run_icp(src, map, cands[i].pose, r, cfg);
          res.attempts = attempts;
          if (registration_accepted(res, cfg)) return res;
          keep_best(res);
        } catch (const Error& e) {
          if (e.code() != Errc::RegionEmpty && e.code() != Errc::NoCorrespondences &&
              e.code() != Errc::DegenerateConfiguration)
            throw;
        }
      }
    }

    if (r >= cfg.r_max) break;
    r = std::min(r * cfg.radius_growth, cfg.r_max);
  }
  if (best) best->attempts = attempts;
  throw RelocalizationFailed(best, attempts);
}

}  // namespace liloc
