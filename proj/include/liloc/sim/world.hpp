#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "liloc/errors.hpp"
#include "liloc/geometry.hpp"
#include "liloc/point_cloud.hpp"

namespace liloc::sim {

/// World occupies [-ex/2, ex/2] x [-ey/2, ey/2] x [0, ez].
struct WorldSpec {
  Vec3 extent{200.0, 200.0, 20.0};
  double density = 1.0;        // structures per 100 m^2 of ground area
  double point_spacing = 0.5;  // m
  double ground_spacing = 0.0; // m, 0 leaves out the ground plane
  std::uint64_t seed = 1;
  std::vector<Vec3> keep_clear;  // polyline (z ignored) that structures must not touch
  double clearance = 0.0;        // m

  void validate() const {
    if (!(extent.minCoeff() > 0.0)) throw Error(Errc::ConfigError, "world extents must be positive");
    if (!(point_spacing > 0.0)) throw Error(Errc::ConfigError, "point spacing must be positive");
    if (density < 0.0 || ground_spacing < 0.0 || clearance < 0.0)
      throw Error(Errc::ConfigError, "density, ground spacing and clearance must be nonnegative");
  }
};

enum class StructureKind { Wall, Pillar, Box };

/// Upright structure standing on z = 0. Walls and boxes are oriented boxes;
/// pillars are cylinders (size.x is the radius).
struct Structure {
  StructureKind kind = StructureKind::Box;
  Vec3 center = Vec3::Zero();  // footprint center, z = 0
  Vec3 size = Vec3::Ones();    // length, width, height
  double yaw = 0.0;

  double footprint_radius() const {
    return kind == StructureKind::Pillar ? size.x() : 0.5 * std::hypot(size.x(), size.y());
  }
};

namespace detail {

inline double distance_to_segment_2d(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Eigen::Vector2d ab = (b - a).head<2>(), ap = (p - a).head<2>();
  const double len2 = ab.squaredNorm();
  const double u = len2 > 0.0 ? std::clamp(ap.dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (ap - u * ab).norm();
}

inline bool blocks_path(const Structure& s, const WorldSpec& spec) {
  if (spec.keep_clear.empty()) return false;
  const double reach = s.footprint_radius() + spec.clearance;
  if (spec.keep_clear.size() == 1) return (s.center - spec.keep_clear[0]).head<2>().norm() < reach;
  for (std::size_t i = 0; i + 1 < spec.keep_clear.size(); ++i)
    if (distance_to_segment_2d(s.center, spec.keep_clear[i], spec.keep_clear[i + 1]) < reach) return true;
  return false;
}

/// Jittered stratified samples of the parallelogram origin + u*[0,1] + v*[0,1].
inline void sample_face(const Vec3& origin, const Vec3& u, const Vec3& v, double spacing, std::mt19937_64& rng,
                        std::vector<Vec3>& out) {
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  const int nu = std::max(1, static_cast<int>(std::ceil(u.norm() / spacing)));
  const int nv = std::max(1, static_cast<int>(std::ceil(v.norm() / spacing)));
  for (int i = 0; i < nu; ++i)
    for (int j = 0; j < nv; ++j) {
      const double a = (i + jitter(rng)) / nu;
      const double b = (j + jitter(rng)) / nv;
      out.push_back(origin + a * u + b * v);
    }
}

inline void sample_structure(const Structure& s, double spacing, std::mt19937_64& rng, std::vector<Vec3>& out) {
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  if (s.kind == StructureKind::Pillar) {
    const double r = s.size.x(), h = s.size.z();
    const int na = std::max(3, static_cast<int>(std::ceil(2.0 * kPi * r / spacing)));
    const int nh = std::max(1, static_cast<int>(std::ceil(h / spacing)));
    for (int i = 0; i < na; ++i)
      for (int j = 0; j < nh; ++j) {
        const double a = 2.0 * kPi * (i + jitter(rng)) / na;
        const double z = h * (j + jitter(rng)) / nh;
        out.emplace_back(s.center.x() + r * std::cos(a), s.center.y() + r * std::sin(a), z);
      }
    return;
  }
  const Mat3 R = rot_z(s.yaw);
  const Vec3 ex = R.col(0) * s.size.x(), ey = R.col(1) * s.size.y(), ez = Vec3(0, 0, s.size.z());
  const Vec3 o = s.center - 0.5 * ex - 0.5 * ey;
  sample_face(o, ex, ez, spacing, rng, out);
  sample_face(o + ey, ex, ez, spacing, rng, out);
  sample_face(o, ey, ez, spacing, rng, out);
  sample_face(o + ex, ey, ez, spacing, rng, out);
  sample_face(o + ez, ex, ey, spacing, rng, out);
}

inline bool inside(const Vec3& p, const Vec3& extent) {
  return std::abs(p.x()) <= 0.5 * extent.x() && std::abs(p.y()) <= 0.5 * extent.y() && p.z() >= 0.0 &&
         p.z() <= extent.z();
}

}  // namespace detail

/// Structure placement: the count is Poisson with mean density * area / 100,
/// centers are uniform over the footprint, kinds are equiprobable. Structures
/// touching the keep-clear corridor are dropped after the draw, so the raw
/// count stays Poisson.
struct StructureDraw {
  std::size_t drawn = 0;
  std::vector<Structure> kept;
};

inline StructureDraw draw_structures(const WorldSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const double area = spec.extent.x() * spec.extent.y();
  std::poisson_distribution<std::size_t> count(std::max(spec.density * area / 100.0, 1e-300));
  StructureDraw d;
  d.drawn = spec.density > 0.0 ? count(rng) : 0;
  std::uniform_real_distribution<double> ux(-0.5 * spec.extent.x(), 0.5 * spec.extent.x());
  std::uniform_real_distribution<double> uy(-0.5 * spec.extent.y(), 0.5 * spec.extent.y());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> kind(0, 2);
  const double hmax = spec.extent.z();
  for (std::size_t i = 0; i < d.drawn; ++i) {
    Structure s;
    s.kind = static_cast<StructureKind>(kind(rng));
    s.center = Vec3(ux(rng), uy(rng), 0.0);
    s.yaw = kPi * u01(rng);
    switch (s.kind) {
      case StructureKind::Wall:
        s.size = Vec3(4.0 + 11.0 * u01(rng), 0.3, std::min(hmax, 3.0 + 5.0 * u01(rng)));
        break;
      case StructureKind::Pillar:
        s.size = Vec3(0.3 + 0.5 * u01(rng), 0.0, std::min(hmax, 3.0 + 7.0 * u01(rng)));
        break;
      case StructureKind::Box:
        s.size = Vec3(1.0 + 4.0 * u01(rng), 1.0 + 4.0 * u01(rng), std::min(hmax, 1.0 + 3.0 * u01(rng)));
        break;
    }
    if (!detail::blocks_path(s, spec)) d.kept.push_back(s);
  }
  return d;
}

struct WorldResult {
  PointCloud cloud;
  std::vector<Structure> structures;
  std::vector<std::string> warnings;
};

/// Point-sampled surfaces of randomly placed structures plus an optional
/// ground plane, clipped to the extent. Deterministic in the seed.
inline WorldResult generate_world_detailed(const WorldSpec& spec) {
  WorldResult w;
  w.structures = draw_structures(spec).kept;
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Vec3> pts;
  for (const auto& s : w.structures) detail::sample_structure(s, spec.point_spacing, rng, pts);
  if (spec.ground_spacing > 0.0) {
    const Vec3 o(-0.5 * spec.extent.x(), -0.5 * spec.extent.y(), 0.0);
    detail::sample_face(o, Vec3(spec.extent.x(), 0, 0), Vec3(0, spec.extent.y(), 0), spec.ground_spacing, rng, pts);
  }
  for (const auto& p : pts)
    if (detail::inside(p, spec.extent)) w.cloud.points.push_back(p);
  if (w.cloud.empty()) w.warnings.push_back("generated world is empty (zero feature density and no ground plane)");
  return w;
}

inline PointCloud generate_world(const WorldSpec& spec) { return generate_world_detailed(spec).cloud; }

}  // namespace liloc::sim
