#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include "liloc/errors.hpp"
#include "liloc/events.hpp"
#include "liloc/fusion.hpp"
#include "liloc/point_cloud.hpp"
#include "liloc/sim/trajectory.hpp"

namespace liloc::sim {

struct NoiseModel {
  double gyro_density = 0.0;   // rad/s/sqrt(Hz)
  Vec3 gyro_bias = Vec3::Zero();
  double accel_density = 0.0;  // m/s^2/sqrt(Hz)
  Vec3 accel_bias = Vec3::Zero();
  double lidar_sigma = 0.0;    // m, along the ray
  Vec3 gnss_position_sigma = Vec3::Zero();
  double gnss_velocity_sigma = 0.0;
  double mag_sigma = 0.0;      // rad
  std::vector<std::pair<double, double>> dropouts;
  std::uint64_t seed = 7;

  /// Floors for the covariance reported with each fix, so a noise-free fix
  /// still carries an invertible Xi.
  double reported_position_sigma_floor = 0.05;

  void validate(double duration) const {
    if (gyro_density < 0 || accel_density < 0 || lidar_sigma < 0 || gnss_velocity_sigma < 0 || mag_sigma < 0 ||
        gnss_position_sigma.minCoeff() < 0)
      throw Error(Errc::ConfigError, "noise standard deviations must be nonnegative");
    for (const auto& [a, b] : dropouts)
      if (!(a <= b) || a < 0.0 || b > duration + 1e-9)
        throw Error(Errc::ConfigError, "dropout windows must be ordered and lie within the trajectory duration");
  }

  static NoiseModel realistic() {
    NoiseModel n;
    n.gyro_density = 2e-4;
    n.gyro_bias = Vec3(5e-4, -3e-4, 4e-4);
    n.accel_density = 5e-3;
    n.accel_bias = Vec3(0.02, -0.015, 0.01);
    n.lidar_sigma = 0.02;
    n.gnss_position_sigma = Vec3(1.0, 1.0, 1.5);
    n.gnss_velocity_sigma = 0.05;
    n.mag_sigma = 0.02;
    return n;
  }
};

struct SensorRates {
  double imu = 200.0;
  double lidar = 10.0;
  double gnss = 1.0;
  bool magnetometer = true;  // one heading reading per GNSS epoch

  void validate() const {
    if (!(imu > 0.0) || !(lidar > 0.0) || !(gnss > 0.0)) throw Error(Errc::ConfigError, "sensor rates must be positive");
  }
};

struct LidarModel {
  double range = 80.0;          // m
  double target_points = 4000;  // expected points per scan
  double near_clamp = 2.0;      // m, inverse-square density is flat inside this range
};

struct SimulatedLog {
  std::vector<SensorEvent> events;     // time ordered
  std::vector<OdomSample> truth;       // at IMU rate
  std::size_t lidar_frames = 0;
};

namespace detail {

/// Samples on a fixed grid t0 + k/rate, computed from the index to avoid
/// accumulated round-off.
inline std::vector<double> sample_times(double t0, double t1, double rate) {
  std::vector<double> ts;
  const auto n = static_cast<long long>(std::floor((t1 - t0) * rate + 1e-9));
  for (long long k = 0; k <= n; ++k) ts.push_back(t0 + static_cast<double>(k) / rate);
  return ts;
}

inline bool in_dropout(double t, const NoiseModel& n) {
  for (const auto& [a, b] : n.dropouts)
    if (t >= a && t <= b) return true;
  return false;
}

inline bool near_dropout(double t, const NoiseModel& n) {
  for (const auto& [a, b] : n.dropouts)
    if ((t >= a - 1.0 && t < a) || (t > b && t <= b + 1.0)) return true;
  return false;
}

}  // namespace detail

/// Ideal IMU reading for a flat vehicle (roll = pitch = 0).
inline ImuSample ideal_imu(const TrajectoryState& s, double gravity = kStandardGravity) {
  const Mat3 R = s.pose.rotation.matrix();
  return {s.t, s.angular_rate, R.transpose() * (s.acceleration - enu_gravity(gravity))};
}

/// World points within range, kept with probability proportional to the
/// inverse square of their distance (approximating a spinning sensor's
/// falloff), expressed in the body frame with range noise.
inline PointCloud simulate_scan(const PointCloud& world, const Pose& pose, const LidarModel& model, double sigma,
                                std::mt19937_64& rng, const KdTree* index = nullptr) {
  std::vector<std::size_t> candidates;
  if (index) {
    candidates = index->radius_search(pose.translation, model.range);
  } else {
    const double r2 = model.range * model.range;
    for (std::size_t i = 0; i < world.size(); ++i)
      if (squared_distance(world.points[i], pose.translation) < r2) candidates.push_back(i);
  }
  const double c2 = model.near_clamp * model.near_clamp;
  double weight_sum = 0.0;
  std::vector<double> w(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    w[k] = 1.0 / std::max(squared_distance(world.points[candidates[k]], pose.translation), c2);
    weight_sum += w[k];
  }
  const double scale = weight_sum > 0.0 ? model.target_points / weight_sum : 0.0;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Pose inv = pose.inverse();
  PointCloud scan;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (u01(rng) >= w[k] * scale) continue;
    Vec3 p = inv.apply(world.points[candidates[k]]);
    const double r = p.norm();
    if (sigma > 0.0 && r > 0.0) p += (sigma * noise(rng) / r) * p;
    scan.points.push_back(p);
  }
  return scan;
}

/// Simulates IMU, LIDAR, GNSS and magnetometer streams along the trajectory.
/// GNSS fixes are suppressed inside dropout windows; fixes within 1 s of a
/// window have 10x noise and report 100x covariance.
inline SimulatedLog simulate_sensors(const PointCloud& world, const Trajectory& traj, const NoiseModel& noise,
                                     const SensorRates& rates = {}, const LidarModel& lidar = {},
                                     double gravity = kStandardGravity) {
  rates.validate();
  noise.validate(traj.t_end() - traj.t_begin());
  std::mt19937_64 rng_imu(noise.seed), rng_lidar(noise.seed + 1), rng_gnss(noise.seed + 2);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto gauss3 = [&](std::mt19937_64& rng) { return Vec3(n01(rng), n01(rng), n01(rng)); };

  SimulatedLog log;
  const double t0 = traj.t_begin(), t1 = traj.t_end();

  const double sg = noise.gyro_density * std::sqrt(rates.imu);
  const double sa = noise.accel_density * std::sqrt(rates.imu);
  for (double t : detail::sample_times(t0, t1, rates.imu)) {
    const TrajectoryState s = traj.at(t);
    ImuSample m = ideal_imu(s, gravity);
    m.gyro += noise.gyro_bias + sg * gauss3(rng_imu);
    m.accel += noise.accel_bias + sa * gauss3(rng_imu);
    log.events.push_back({t, TruthEvent{s.pose}});
    log.events.push_back({t, ImuEvent{m}});
    log.truth.push_back({t, s.pose, std::nullopt, OdomSource::Imu});
  }

  for (double t : detail::sample_times(t0, t1, rates.gnss)) {
    if (detail::in_dropout(t, noise)) continue;
    const TrajectoryState s = traj.at(t);
    const double k = detail::near_dropout(t, noise) ? 10.0 : 1.0;
    GnssEvent g;
    g.position = s.pose.translation + k * noise.gnss_position_sigma.cwiseProduct(gauss3(rng_gnss));
    g.velocity = s.velocity + k * noise.gnss_velocity_sigma * gauss3(rng_gnss);
    const Vec3 sig = noise.gnss_position_sigma.cwiseMax(noise.reported_position_sigma_floor);
    g.xi = Mat3(sig.cwiseAbs2().asDiagonal()) * (k * k);
    if (rates.magnetometer) {
      const double yaw = yaw_of(s.pose.rotation) + noise.mag_sigma * n01(rng_gnss);
      log.events.push_back({t, MagEvent{wrap_angle(yaw)}});
    }
    log.events.push_back({t, g});
  }

  const KdTree index(world.points);
  char name[64];
  for (double t : detail::sample_times(t0, t1, rates.lidar)) {
    const TrajectoryState s = traj.at(t);
    auto scan = std::make_shared<PointCloud>(simulate_scan(world, s.pose, lidar, noise.lidar_sigma, rng_lidar, &index));
    std::snprintf(name, sizeof(name), "scans/%06zu.txt", log.lidar_frames++);
    log.events.push_back({t, LidarEvent{name, std::move(scan)}});
  }

  std::stable_sort(log.events.begin(), log.events.end(), event_before);
  return log;
}

}  // namespace liloc::sim
