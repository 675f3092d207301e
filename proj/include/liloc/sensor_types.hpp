#pragma once

#include <cmath>

#include "liloc/geometry.hpp"

namespace liloc {

inline constexpr double kStandardGravity = 9.80665;

/// Raw or bias-corrected IMU reading. Angular rate in rad/s, specific force in m/s^2,
/// both in the body frame.
struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();

  bool is_finite() const { return std::isfinite(t) && gyro.allFinite() && accel.allFinite(); }
};

/// ENU gravity vector (pointing down).
inline Vec3 enu_gravity(double magnitude = kStandardGravity) { return {0.0, 0.0, -magnitude}; }

}  // namespace liloc
