#pragma once

#include <optional>
#include <string>
#include <vector>

#include "liloc/config.hpp"
#include "liloc/sim/sensors.hpp"
#include "liloc/sim/trajectory.hpp"
#include "liloc/sim/world.hpp"

namespace liloc::sim {

struct LoopSpec {
  double perimeter = 500.0;
  double aspect = 1.5;
  double corner_radius = 15.0;
  double speed = 5.0;
  double height = 1.8;
  double spacing = 5.0;
};

/// World, path and sensor rates. The path is either explicit waypoints or a
/// generated loop; structures keep `clearance` meters away from it.
struct ScenarioSpec {
  WorldSpec world;
  std::vector<Waypoint> waypoints;
  std::optional<LoopSpec> loop;
  SensorRates rates;
  LidarModel lidar;

  TrajectorySpec trajectory() const {
    if (!waypoints.empty()) {
      TrajectorySpec t{waypoints};
      t.validate();
      return t;
    }
    const LoopSpec l = loop.value_or(LoopSpec{});
    return make_loop(l.perimeter, l.aspect, l.corner_radius, l.speed, l.height, l.spacing);
  }

  /// World spec with the keep-clear corridor filled in from the path.
  WorldSpec world_with_corridor() const {
    WorldSpec w = world;
    if (w.clearance > 0.0) w.keep_clear = Trajectory(trajectory()).polyline(0.5);
    return w;
  }
};

inline ScenarioSpec default_scenario() {
  ScenarioSpec s;
  s.world.extent = Vec3(240.0, 200.0, 20.0);
  s.world.density = 0.8;
  s.world.point_spacing = 0.25;
  s.world.ground_spacing = 1.0;
  s.world.clearance = 4.0;
  s.loop = LoopSpec{};
  return s;
}

inline ScenarioSpec parse_scenario(const std::vector<KeyValueEntry>& entries) {
  ScenarioSpec s;
  LoopSpec loop;
  bool any_loop = false;
  double world_seed = 1.0;
  KeyValueBinder b;
  auto loop_key = [&](const char* key, double& target) {
    b.on(key, [&target, &any_loop](const KeyValueEntry& e) {
      target = KeyValueBinder::as_number(e);
      any_loop = true;
    });
  };
  b.on("extent", [&](const KeyValueEntry& e) {
     const auto v = KeyValueBinder::as_numbers(e, 3);
     s.world.extent = Vec3(v[0], v[1], v[2]);
   })
      .number("density", s.world.density)
      .number("point_spacing", s.world.point_spacing)
      .number("ground_spacing", s.world.ground_spacing)
      .number("clearance", s.world.clearance)
      .number("world_seed", world_seed)
      .on("waypoint",
          [&](const KeyValueEntry& e) {
            const auto v = KeyValueBinder::as_numbers(e, 5);
            s.waypoints.push_back({v[0], Vec3(v[1], v[2], v[3]), v[4]});
          })
      .number("imu_rate", s.rates.imu)
      .number("lidar_rate", s.rates.lidar)
      .number("gnss_rate", s.rates.gnss)
      .flag("magnetometer", s.rates.magnetometer)
      .number("lidar_range", s.lidar.range)
      .number("lidar_points", s.lidar.target_points);
  loop_key("loop_perimeter", loop.perimeter);
  loop_key("loop_aspect", loop.aspect);
  loop_key("loop_corner_radius", loop.corner_radius);
  loop_key("loop_speed", loop.speed);
  loop_key("loop_height", loop.height);
  loop_key("loop_waypoint_spacing", loop.spacing);
  b.apply(entries);
  if (any_loop && !s.waypoints.empty()) throw Error(Errc::ConfigError, "give either waypoints or loop_* keys, not both");
  if (world_seed < 0 || world_seed != static_cast<double>(static_cast<std::uint64_t>(world_seed)))
    throw Error(Errc::ConfigError, "world_seed must be a nonnegative integer");
  s.world.seed = static_cast<std::uint64_t>(world_seed);
  if (s.waypoints.empty()) s.loop = loop;
  s.world.validate();
  s.rates.validate();
  return s;
}

inline ScenarioSpec load_scenario(const std::string& path) { return parse_scenario(read_key_value_file(path)); }

inline NoiseModel parse_noise(const std::vector<KeyValueEntry>& entries) {
  NoiseModel n;
  double seed = static_cast<double>(n.seed);
  auto vec3 = [](Vec3& target) {
    return [&target](const KeyValueEntry& e) {
      const auto v = KeyValueBinder::as_numbers(e, 3);
      target = Vec3(v[0], v[1], v[2]);
    };
  };
  KeyValueBinder b;
  b.number("gyro_density", n.gyro_density)
      .on("gyro_bias", vec3(n.gyro_bias))
      .number("accel_density", n.accel_density)
      .on("accel_bias", vec3(n.accel_bias))
      .number("lidar_sigma", n.lidar_sigma)
      .on("gnss_position_sigma", vec3(n.gnss_position_sigma))
      .number("gnss_velocity_sigma", n.gnss_velocity_sigma)
      .number("mag_sigma", n.mag_sigma)
      .on("dropout",
          [&](const KeyValueEntry& e) {
            const auto v = KeyValueBinder::as_numbers(e, 2);
            n.dropouts.emplace_back(v[0], v[1]);
          })
      .number("seed", seed);
  b.apply(entries);
  if (seed < 0 || seed != static_cast<double>(static_cast<std::uint64_t>(seed)))
    throw Error(Errc::ConfigError, "seed must be a nonnegative integer");
  n.seed = static_cast<std::uint64_t>(seed);
  return n;
}

inline NoiseModel load_noise(const std::string& path) { return parse_noise(read_key_value_file(path)); }

}  // namespace liloc::sim
