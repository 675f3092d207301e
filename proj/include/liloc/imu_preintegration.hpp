#pragma once

#include <optional>

#include "liloc/errors.hpp"
#include "liloc/geometry.hpp"
#include "liloc/sensor_types.hpp"

namespace liloc {

struct ImuBias {
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();

  /// Finite and below plausibility caps.
  bool plausible(double gyro_cap = 0.1, double accel_cap = 1.0) const {
    return gyro.allFinite() && accel.allFinite() && gyro.norm() < gyro_cap && accel.norm() < accel_cap;
  }
};

/// Relative motion between two keyframes, expressed in the frame of the first:
///   dv = R_i^T (v_j - v_i - g dt)
///   dp = R_i^T (p_j - p_i - v_i dt - 1/2 g dt^2)
///   dR = R_i^T R_j
struct PreintegratedDelta {
  Rotation3 dR;
  Vec3 dv = Vec3::Zero();
  Vec3 dp = Vec3::Zero();
  double dt = 0.0;
  int sample_count = 0;
};

/// Extrinsic transform that, left-applied to an IMU odometry pose, yields the
/// LIDAR-frame pose: T_lidar = T_l2m * T_imu.
struct Extrinsics {
  Pose T_l2m;
};

/// Kinematic state used for pose prediction: attitude (body to world), world
/// velocity and world position.
struct KinematicState {
  Rotation3 R;
  Vec3 v = Vec3::Zero();
  Vec3 p = Vec3::Zero();
};

inline ImuSample correct_sample(const ImuSample& raw, const ImuBias& bias) {
  return {raw.t, raw.gyro - bias.gyro, raw.accel - bias.accel};
}

namespace detail {
inline Rotation3 reorthonormalize(const Mat3& m) { return Rotation3(UnitQuaternion::from_matrix(m)); }
}  // namespace detail

/// One step with the sample held constant over `dt`.
inline PreintegratedDelta integrate(const PreintegratedDelta& delta, const ImuSample& sample, double dt) {
  if (!(dt > 0.0)) throw Error(Errc::NonPositiveDt, "integration step must be positive");
  PreintegratedDelta out = delta;
  const Vec3 a_rot = delta.dR * sample.accel;
  out.dp = delta.dp + delta.dv * dt + 0.5 * a_rot * dt * dt;
  out.dv = delta.dv + a_rot * dt;
  out.dR = detail::reorthonormalize(delta.dR.matrix() * Rotation3::exp(sample.gyro * dt).matrix());
  out.dt = delta.dt + dt;
  out.sample_count = delta.sample_count + 1;
  return out;
}

/// Midpoint step between two consecutive (bias-corrected) samples.
inline PreintegratedDelta integrate_midpoint(const PreintegratedDelta& delta, const ImuSample& s0,
                                             const ImuSample& s1, double dt) {
  if (!(dt > 0.0)) throw Error(Errc::NonPositiveDt, "integration step must be positive");
  PreintegratedDelta out = delta;
  const Vec3 w_mid = 0.5 * (s0.gyro + s1.gyro);
  const Mat3 r_next = delta.dR.matrix() * Rotation3::exp(w_mid * dt).matrix();
  const Vec3 a_mid = 0.5 * (delta.dR * s0.accel + r_next * s1.accel);
  out.dp = delta.dp + delta.dv * dt + 0.5 * a_mid * dt * dt;
  out.dv = delta.dv + a_mid * dt;
  out.dR = detail::reorthonormalize(r_next);
  out.dt = delta.dt + dt;
  out.sample_count = delta.sample_count + 1;
  return out;
}

/// Chains delta `b` (starting where `a` ends) onto `a`.
inline PreintegratedDelta compose_deltas(const PreintegratedDelta& a, const PreintegratedDelta& b) {
  PreintegratedDelta out;
  out.dR = detail::reorthonormalize(a.dR.matrix() * b.dR.matrix());
  out.dv = a.dv + a.dR * b.dv;
  out.dp = a.dp + a.dv * b.dt + a.dR * b.dp;
  out.dt = a.dt + b.dt;
  out.sample_count = a.sample_count + b.sample_count;
  return out;
}

inline KinematicState predict_pose(const KinematicState& s, const PreintegratedDelta& delta, const Vec3& gravity) {
  if (delta.dt <= 0.0) return s;
  const double dt = delta.dt;
  KinematicState out;
  out.R = detail::reorthonormalize(s.R.matrix() * delta.dR.matrix());
  out.v = s.v + gravity * dt + s.R * delta.dv;
  out.p = s.p + s.v * dt + 0.5 * gravity * dt * dt + s.R * delta.dp;
  return out;
}

inline Pose to_lidar_frame(const Pose& T_imu, const Extrinsics& extr) { return pose_compose(extr.T_l2m, T_imu); }

/// Accumulates one keyframe interval. Samples must arrive in timestamp order;
/// each step uses the midpoint of consecutive samples, and `advance_to` holds
/// the last sample over a partial interval.
class Preintegrator {
 public:
  explicit Preintegrator(ImuBias bias = {}) : bias_(bias) {}

  /// Starts a new window at `t0`. The last seen sample is kept for hold.
  void reset(double t0) {
    delta_ = {};
    cursor_ = t0;
    started_ = true;
  }

  void set_bias(const ImuBias& bias) { bias_ = bias; }
  const ImuBias& bias() const { return bias_; }

  void push(const ImuSample& raw) {
    const ImuSample s = correct_sample(raw, bias_);
    if (started_ && last_ && s.t > cursor_) {
      delta_ = integrate_midpoint(delta_, *last_, s, s.t - cursor_);
      cursor_ = s.t;
    } else if (started_ && s.t > cursor_) {
      cursor_ = s.t;
    }
    last_ = s;
  }

  void advance_to(double t) {
    if (started_ && last_ && t > cursor_) {
      delta_ = integrate(delta_, *last_, t - cursor_);
      cursor_ = t;
    }
  }

  const PreintegratedDelta& delta() const { return delta_; }
  double cursor() const { return cursor_; }
  bool has_sample() const { return last_.has_value(); }
  const std::optional<ImuSample>& last_sample() const { return last_; }

 private:
  ImuBias bias_;
  PreintegratedDelta delta_;
  std::optional<ImuSample> last_;
  double cursor_ = 0.0;
  bool started_ = false;
};

}  // namespace liloc
