#pragma once

#include <memory>
#include <random>

#include "liloc/map_store.hpp"
#include "liloc/sim/sensors.hpp"
#include "liloc/sim/world.hpp"

namespace liloc::testing {

/// Structured synthetic world shared by the registration tests.
struct Scene {
  PointCloud cloud;
  std::unique_ptr<GlobalMap> map;
  sim::LidarModel lidar;
};

inline sim::WorldSpec scene_spec(std::uint64_t seed, double half_extent = 80.0) {
  sim::WorldSpec w;
  w.extent = Vec3(2 * half_extent, 2 * half_extent, 15.0);
  w.density = 1.0;
  w.point_spacing = 0.25;
  w.ground_spacing = 1.0;
  w.seed = seed;
  return w;
}

inline Scene make_scene(const sim::WorldSpec& spec) {
  Scene s;
  s.cloud = sim::generate_world(spec);
  s.map = std::make_unique<GlobalMap>(s.cloud);
  return s;
}

/// Level sensor pose at 1.8 m whose position is at least `min_gap` away from
/// any map point above the ground (so it is not inside a structure).
inline Pose free_pose(const Scene& s, std::mt19937_64& rng, double half_range, double min_gap = 1.5) {
  std::uniform_real_distribution<double> u(-half_range, half_range), yaw(-kPi, kPi);
  for (;;) {
    const Vec3 p(u(rng), u(rng), 1.8);
    if (s.map->index().nearest(p).distance < min_gap) continue;
    return {UnitQuaternion::from_axis_angle(Vec3::UnitZ(), yaw(rng)), p};
  }
}

inline PointCloud scan_at(const Scene& s, const Pose& pose, double sigma, std::mt19937_64& rng) {
  return sim::simulate_scan(s.cloud, pose, s.lidar, sigma, rng);
}

inline Pose yaw_offset(const Pose& p, const Vec3& dp, double dyaw) {
  return {quat_multiply(UnitQuaternion::from_axis_angle(Vec3::UnitZ(), dyaw), p.rotation), p.translation + dp};
}

}  // namespace liloc::testing
