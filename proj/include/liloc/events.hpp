#pragma once

#include <memory>
#include <string>
#include <variant>

#include "liloc/geometry.hpp"
#include "liloc/point_cloud.hpp"
#include "liloc/sensor_types.hpp"

namespace liloc {

struct ImuEvent {
  ImuSample sample;
};

/// ENU position and velocity fix with its position covariance Xi.
struct GnssEvent {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Mat3 xi = Mat3::Identity();
};

struct MagEvent {
  double heading = 0.0;  // rad, ENU yaw
};

/// Scan in the sensor frame. `scan` may be null until the reference is resolved.
struct LidarEvent {
  std::string ref;
  std::shared_ptr<const PointCloud> scan;
};

struct TruthEvent {
  Pose pose;
};

using EventPayload = std::variant<TruthEvent, ImuEvent, MagEvent, GnssEvent, LidarEvent>;

/// Same-timestamp events are processed in payload index order: truth, IMU,
/// magnetometer, GNSS, LIDAR.
struct SensorEvent {
  double t = 0.0;
  EventPayload payload;

  int rank() const { return static_cast<int>(payload.index()); }
};

inline bool event_before(const SensorEvent& a, const SensorEvent& b) {
  if (a.t != b.t) return a.t < b.t;
  return a.rank() < b.rank();
}

}  // namespace liloc
