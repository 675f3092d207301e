#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "liloc/errors.hpp"
#include "liloc/geometry.hpp"
#include "liloc/sensor_types.hpp"

namespace liloc {

using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using Mat7 = Eigen::Matrix<double, 7, 7>;

/// Total-state navigation solution in ENU:
/// (roll, pitch, yaw, P_e, P_n, h_MSL, V_e, V_n, V_u).
struct NavState {
  enum Index { kRoll = 0, kPitch, kYaw, kPe, kPn, kH, kVe, kVn, kVu };

  double t = 0.0;
  Vec9 x = Vec9::Zero();
  Mat9 P = Mat9::Identity();

  EulerAngles attitude() const { return {x[kRoll], x[kPitch], x[kYaw]}; }
  Vec3 position() const { return x.segment<3>(kPe); }
  Vec3 velocity() const { return x.segment<3>(kVe); }
  Pose pose() const { return {quaternion_from_euler(attitude()), position()}; }
};

/// GNSS fix with optional magnetometer heading. R is ordered
/// (psi_mag, P_e, P_n, h, V_e, V_n, V_u); the first row/column is ignored when
/// no heading is present.
struct GnssMeasurement {
  double t = 0.0;
  std::optional<double> psi_mag;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Mat7 R = Mat7::Identity();
};

/// Continuous-time noise densities for the strapdown process model.
struct EkfProcessNoise {
  double gyro_density = 1e-4;   // rad/s/sqrt(Hz)
  double accel_density = 1e-2;  // m/s^2/sqrt(Hz)
  double gravity = kStandardGravity;
};

namespace detail {

inline Vec3 euler_rates(const Vec3& e, const Vec3& w) {
  const double sp = std::sin(e[0]), cp = std::cos(e[0]);
  const double tt = std::tan(e[1]), ct = std::cos(e[1]);
  return {w.x() + tt * (sp * w.y() + cp * w.z()),
          cp * w.y() - sp * w.z(),
          (sp * w.y() + cp * w.z()) / ct};
}

inline void symmetrize(Mat9& P) { P = 0.5 * (P + P.transpose()).eval(); }

inline NavState predict_step(const NavState& s, const Vec3& w, const Vec3& a, double dt,
                             const EkfProcessNoise& noise) {
  const Vec3 e = s.x.segment<3>(NavState::kRoll);
  const Vec3 v = s.x.segment<3>(NavState::kVe);
  const double sp = std::sin(e[0]), cp = std::cos(e[0]);
  const double st = std::sin(e[1]), ct = std::cos(e[1]);

  const Mat3 rx = rot_x(e[0]), ry = rot_y(e[1]), rz = rot_z(e[2]);
  const Mat3 R = rz * ry * rx;
  const Vec3 g{0.0, 0.0, -noise.gravity};
  const Vec3 acc = R * a + g;

  NavState out = s;
  out.t = s.t + dt;
  out.x.segment<3>(NavState::kRoll) = e + euler_rates(e, w) * dt;
  out.x.segment<3>(NavState::kVe) = v + acc * dt;
  out.x.segment<3>(NavState::kPe) = s.x.segment<3>(NavState::kPe) + v * dt + 0.5 * acc * dt * dt;
  out.x[NavState::kRoll] = wrap_angle(out.x[NavState::kRoll]);
  out.x[NavState::kYaw] = wrap_angle(out.x[NavState::kYaw]);

  // continuous-time Jacobian A = df/dx
  Mat9 A = Mat9::Zero();
  const double q = sp * w.y() + cp * w.z();
  const double r = cp * w.y() - sp * w.z();
  A(0, 0) = st / ct * r;
  A(0, 1) = q / (ct * ct);
  A(1, 0) = -q;
  A(2, 0) = r / ct;
  A(2, 1) = q * st / (ct * ct);

  Mat3 drx, dry, drz;
  drx << 0, 0, 0, 0, -sp, -cp, 0, cp, -sp;
  dry << -st, 0, ct, 0, 0, 0, -ct, 0, -st;
  drz << -std::sin(e[2]), -std::cos(e[2]), 0, std::cos(e[2]), -std::sin(e[2]), 0, 0, 0, 0;
  Mat3 dv_de;
  dv_de.col(0) = rz * ry * drx * a;
  dv_de.col(1) = rz * dry * rx * a;
  dv_de.col(2) = drz * ry * rx * a;
  A.block<3, 3>(NavState::kVe, NavState::kRoll) = dv_de;
  A.block<3, 3>(NavState::kPe, NavState::kVe) = Mat3::Identity();

  Mat9 F = Mat9::Identity() + A * dt;
  F.block<3, 3>(NavState::kPe, NavState::kRoll) = 0.5 * dv_de * dt * dt;

  Mat9 Q = Mat9::Zero();
  const double qg = noise.gyro_density * noise.gyro_density;
  const double qa = noise.accel_density * noise.accel_density;
  Q.block<3, 3>(NavState::kRoll, NavState::kRoll) = Mat3::Identity() * qg * dt;
  Q.block<3, 3>(NavState::kVe, NavState::kVe) = Mat3::Identity() * qa * dt;
  Q.block<3, 3>(NavState::kPe, NavState::kPe) = Mat3::Identity() * qa * dt * dt * dt / 3.0;
  Q.block<3, 3>(NavState::kPe, NavState::kVe) = Mat3::Identity() * qa * dt * dt / 2.0;
  Q.block<3, 3>(NavState::kVe, NavState::kPe) = Mat3::Identity() * qa * dt * dt / 2.0;

  out.P = F * s.P * F.transpose() + Q;
  symmetrize(out.P);
  return out;
}

}  // namespace detail

/// Strapdown prediction over `dt` with a single IMU sample held constant.
/// Steps longer than 0.1 s are split into equal sub-steps.
inline NavState ekf_predict(const NavState& state, const ImuSample& imu, double dt,
                            const EkfProcessNoise& noise = {}) {
  if (!(dt > 0.0)) throw Error(Errc::NonMonotonicTime, "prediction step must be positive");
  if (!imu.is_finite()) throw Error(Errc::InvalidArgument, "non-finite IMU sample");
  const int steps = static_cast<int>(std::ceil(dt / 0.1 - 1e-12));
  const double h = dt / steps;
  NavState s = state;
  for (int k = 0; k < steps; ++k) s = detail::predict_step(s, imu.gyro, imu.accel, h, noise);
  s.t = state.t + dt;
  return s;
}

/// Standard EKF correction. The observation selects yaw, position and velocity
/// directly from the state; the yaw innovation is wrapped to (-pi, pi].
inline NavState ekf_update(const NavState& state, const GnssMeasurement& meas) {
  if (meas.t < state.t - 1e-9)
    throw Error(Errc::NonMonotonicTime, "measurement older than the filter state");
  const bool heading = meas.psi_mag.has_value();
  const int m = heading ? 7 : 6;
  const int off = heading ? 0 : 1;

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, 9);
  Eigen::VectorXd z(m), hx(m);
  int row = 0;
  if (heading) {
    H(row, NavState::kYaw) = 1.0;
    z[row] = *meas.psi_mag;
    hx[row] = state.x[NavState::kYaw];
    ++row;
  }
  for (int k = 0; k < 3; ++k, ++row) {
    H(row, NavState::kPe + k) = 1.0;
    z[row] = meas.position[k];
    hx[row] = state.x[NavState::kPe + k];
  }
  for (int k = 0; k < 3; ++k, ++row) {
    H(row, NavState::kVe + k) = 1.0;
    z[row] = meas.velocity[k];
    hx[row] = state.x[NavState::kVe + k];
  }
  const Eigen::MatrixXd R = meas.R.block(off, off, m, m);

  Eigen::VectorXd innov = z - hx;
  if (heading) innov[0] = wrap_angle(innov[0]);

  Eigen::MatrixXd S = H * state.P * H.transpose() + R;
  S = 0.5 * (S + S.transpose()).eval();
  // condition number of the correlation-normalized S, so that one huge
  // (uninformative) variance does not read as singular
  const Eigen::VectorXd dinv = S.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd Sn = dinv.asDiagonal() * S * dinv.asDiagonal();
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Sn).eigenvalues();
  if (!(ev.minCoeff() > 0.0) || ev.maxCoeff() / ev.minCoeff() > 1e12)
    throw Error(Errc::SingularInnovationCovariance, "innovation covariance is numerically singular");

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  const Eigen::MatrixXd K = ldlt.solve(H * state.P).transpose();

  NavState out = state;
  out.t = std::max(state.t, meas.t);
  out.x += K * innov;
  out.x[NavState::kRoll] = wrap_angle(out.x[NavState::kRoll]);
  out.x[NavState::kYaw] = wrap_angle(out.x[NavState::kYaw]);
  const Mat9 IKH = Mat9::Identity() - K * H;
  out.P = IKH * state.P * IKH.transpose() + K * R * K.transpose();
  detail::symmetrize(out.P);
  return out;
}

/// Initial map-frame pose from a batch of fixes: position is the mean of fixes
/// propagated to the latest timestamp by their own velocity; yaw comes from the
/// magnetometer when present, otherwise from the direction of travel.
inline Pose global_init(std::span<const GnssMeasurement> fixes, std::size_t min_count) {
  if (fixes.size() < min_count || fixes.empty())
    throw Error(Errc::InsufficientFixes, "have " + std::to_string(fixes.size()) + " fixes, need " +
                                             std::to_string(min_count));
  const double t_last = fixes.back().t;
  Vec3 pos = Vec3::Zero();
  double sin_sum = 0.0, cos_sum = 0.0;
  std::size_t n_heading = 0;
  Vec3 vel_sum = Vec3::Zero();
  std::size_t n_moving = 0;
  for (const auto& f : fixes) {
    pos += f.position + f.velocity * (t_last - f.t);
    if (f.psi_mag) {
      sin_sum += std::sin(*f.psi_mag);
      cos_sum += std::cos(*f.psi_mag);
      ++n_heading;
    }
    if (f.velocity.head<2>().norm() > 0.5) {
      vel_sum += f.velocity;
      ++n_moving;
    }
  }
  pos /= static_cast<double>(fixes.size());

  double yaw = 0.0;
  if (n_heading > 0) {
    yaw = std::atan2(sin_sum, cos_sum);
  } else if (n_moving == 0) {
    throw Error(Errc::HeadingUnobservable, "stationary fixes and no magnetometer heading");
  } else if (n_moving < min_count) {
    throw Error(Errc::InsufficientFixes, "too few moving fixes to observe heading");
  } else {
    yaw = std::atan2(vel_sum.y(), vel_sum.x());
  }
  return {UnitQuaternion::from_axis_angle(Vec3::UnitZ(), yaw), pos};
}

/// Single-owner wrapper that keeps a NavState current.
class GnssEkf {
 public:
  explicit GnssEkf(EkfProcessNoise noise = {}) : noise_(noise) {}

  bool initialized() const { return initialized_; }

  void initialize(double t, const Pose& pose, const Vec3& velocity, const Mat9& P) {
    const EulerAngles e = euler_from_rotation(pose.rotation.matrix());
    state_.t = t;
    state_.x << e.roll, e.pitch, e.yaw, pose.translation, velocity;
    state_.P = P;
    initialized_ = true;
  }

  /// Propagates to the sample's timestamp, holding the previous sample over
  /// the interval (the new one when there is no previous sample).
  void predict(const ImuSample& imu) {
    if (initialized_) {
      const double dt = imu.t - state_.t;
      if (dt < 0.0) throw Error(Errc::NonMonotonicTime, "IMU sample older than the filter state");
      if (dt > 0.0) state_ = ekf_predict(state_, last_imu_ ? *last_imu_ : imu, dt, noise_);
    }
    last_imu_ = imu;
  }

  void predict_to(double t) {
    if (!initialized_ || !last_imu_ || t <= state_.t) return;
    state_ = ekf_predict(state_, *last_imu_, t - state_.t, noise_);
  }

  void update(const GnssMeasurement& meas) {
    if (initialized_) state_ = ekf_update(state_, meas);
  }

  void reset() { initialized_ = false; }

  const NavState& state() const { return state_; }

 private:
  EkfProcessNoise noise_;
  NavState state_;
  std::optional<ImuSample> last_imu_;
  bool initialized_ = false;
};

}  // namespace liloc
