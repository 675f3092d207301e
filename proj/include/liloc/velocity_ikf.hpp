#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

#include "liloc/errors.hpp"
#include "liloc/geometry.hpp"

namespace liloc {

/// Attitude quaternions here map body vectors into the navigation frame, so
/// the navigation-to-body DCM is the transpose of their matrix.
inline Mat3 nav_to_body(const UnitQuaternion& q) { return q.matrix().transpose(); }

struct VelocityObservation {
  Vec3 w_v = Vec3::Zero();               // body-frame velocity from LIDAR odometry, m/s
  Vec3 v_n = Vec3::Zero();               // navigation-frame GNSS velocity, m/s
  Mat3 sigma_v = Mat3::Identity() * 0.01; // observation noise covariance
};

/// q_{k+1} = normalize(q_k * (1, y)).
inline UnitQuaternion propagate_quaternion(const UnitQuaternion& q_k, const Vec3& y) {
  return quat_multiply(q_k, UnitQuaternion(1.0, y.x(), y.y(), y.z()));
}

/// w~ = w_v - R_n^b(q_lidar) v_n
inline Vec3 innovation(const VelocityObservation& obs, const UnitQuaternion& q_lidar) {
  return obs.w_v - nav_to_body(q_lidar) * obs.v_n;
}

/// H = 2 [(R_n^b(q_lidar) v_n) x]
inline Mat3 observation_jacobian(const UnitQuaternion& q_lidar, const Vec3& v_n) {
  return 2.0 * skew(nav_to_body(q_lidar) * v_n);
}

/// First-order DCM of the error quaternion (1, y): I - 2[y x].
inline Mat3 small_angle_matrix(const Vec3& y) {
  Mat3 m;
  m << 1.0, 2.0 * y.z(), -2.0 * y.y(),
       -2.0 * y.z(), 1.0, 2.0 * y.x(),
       2.0 * y.y(), -2.0 * y.x(), 1.0;
  return m;
}

/// Ratio C(2,3)/C(3,3) of a navigation-to-body DCM, i.e. tan(roll).
inline double roll_ratio(const Mat3& C) {
  if (std::abs(C(2, 2)) <= 1e-6) throw Error(Errc::ConstraintSingular, "C(3,3) vanishes");
  return C(1, 2) / C(2, 2);
}

/// Roll constraint f(y): roll ratio of the corrected attitude
/// R_small(y) R_n^b(q_k) minus that of the LIDAR attitude.
inline double roll_constraint_function(const Vec3& y, const UnitQuaternion& q_k, const UnitQuaternion& q_lidar) {
  return roll_ratio(small_angle_matrix(y) * nav_to_body(q_k)) - roll_ratio(nav_to_body(q_lidar));
}

/// Gradient of the roll constraint at y = 0. With C = R_n^b(q_k), the corrected
/// entries are C'23 = C23 + 2 y1 C33 - 2 y3 C13 and C'33 = C33 - 2 y1 C23 + 2 y2 C13,
/// so grad(C'23 / C'33) = 2 / C33^2 * (C33^2 + C23^2, -C13 C23, -C13 C33).
inline Vec3 roll_constraint_vector(const UnitQuaternion& q_k, const UnitQuaternion& /*q_lidar*/) {
  const Mat3 C = nav_to_body(q_k);
  const double c13 = C(0, 2), c23 = C(1, 2), c33 = C(2, 2);
  if (std::abs(c33) <= 1e-6) throw Error(Errc::ConstraintSingular, "C(3,3) vanishes");
  return (2.0 / (c33 * c33)) * Vec3(c33 * c33 + c23 * c23, -c13 * c23, -c13 * c33);
}

struct ConstrainedSolution {
  Vec3 y = Vec3::Zero();
  double lambda = 0.0;
  Mat3 covariance = Mat3::Zero();  // covariance of y under the observation noise
  double condition = 1.0;          // of the equilibrated KKT matrix
};

/// Minimizes 1/2 V^T Sigma^-1 V, V = H y - w, subject to Theta^T y = 0 by
/// solving the 4x4 KKT system
///   [H^T S^-1 H  Theta] [y]   [H^T S^-1 w]
///   [Theta^T       0  ] [l] = [    0     ].
/// The constraint row is rescaled to the Hessian's magnitude before the
/// condition check; y is invariant to that scaling.
inline ConstrainedSolution solve_constrained(const Mat3& H, const Mat3& sigma_v, const Vec3& w, const Vec3& theta) {
  const Eigen::LLT<Mat3> llt(sigma_v);
  if (llt.info() != Eigen::Success || !sigma_v.isApprox(sigma_v.transpose(), 1e-12))
    throw Error(Errc::InvalidArgument, "observation covariance must be symmetric positive definite");
  const double tn = theta.norm();
  if (!(tn > 0.0) || !std::isfinite(tn)) throw Error(Errc::InvalidArgument, "constraint vector is zero");

  const Mat3 Sinv_H = llt.solve(H);
  const Mat3 A = H.transpose() * Sinv_H;
  const Vec3 b = Sinv_H.transpose() * w;
  const double scale = std::max(A.norm(), 1e-300);
  const Vec3 th = theta * (scale / tn);

  Eigen::Matrix4d K = Eigen::Matrix4d::Zero();
  K.topLeftCorner<3, 3>() = A;
  K.topRightCorner<3, 1>() = th;
  K.bottomLeftCorner<1, 3>() = th.transpose();
  Eigen::Vector4d rhs = Eigen::Vector4d::Zero();
  rhs.head<3>() = b;

  const Eigen::JacobiSVD<Eigen::Matrix4d> svd(K);
  const auto sv = svd.singularValues();
  const double cond = sv[3] > 0.0 ? sv[0] / sv[3] : std::numeric_limits<double>::infinity();
  if (!(cond <= 1e12)) throw Error(Errc::SingularKKT, "KKT system is singular (unobservable geometry)");

  const Eigen::FullPivLU<Eigen::Matrix4d> lu(K);
  const Eigen::Vector4d sol = lu.solve(rhs);
  const Eigen::Matrix4d Kinv = lu.inverse();

  ConstrainedSolution out;
  out.y = sol.head<3>();
  out.lambda = sol[3] * scale / tn;  // multiplier for the unscaled theta
  out.covariance = Kinv.topLeftCorner<3, 3>();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  out.condition = cond;
  return out;
}

inline Vec3 solve_constrained_update(const Mat3& H, const Mat3& sigma_v, const Vec3& w, const Vec3& theta) {
  return solve_constrained(H, sigma_v, w, theta).y;
}

/// Corrected navigation-to-body DCM R_small(y) R_n^b(q_k), re-orthonormalized.
inline Rotation3 apply_correction(const UnitQuaternion& q_k, const Vec3& y) {
  if (!(y.norm() < 0.5)) throw Error(Errc::ErrorTooLarge, "error state outside the small-angle range");
  if (y.isZero(0.0)) return Rotation3(nav_to_body(q_k));
  return Rotation3::nearest(small_angle_matrix(y) * nav_to_body(q_k));
}

/// Body-to-navigation attitude after applying the correction.
inline UnitQuaternion corrected_attitude(const UnitQuaternion& q_k, const Vec3& y) {
  return UnitQuaternion::from_matrix(apply_correction(q_k, y).matrix().transpose());
}

/// Single-owner roll-constrained indirect filter over the error quaternion.
/// The predicted attitude comes from the LIDAR odometry; each update solves the
/// constrained problem, folds the estimate into the attitude and resets y.
class VelocityIkf {
 public:
  explicit VelocityIkf(double process_noise = 1e-6) : q_(process_noise) {}

  struct Update {
    UnitQuaternion attitude;
    Vec3 y = Vec3::Zero();
  };

  Update update(const UnitQuaternion& q_k, const UnitQuaternion& q_lidar, const VelocityObservation& obs) {
    P_ += Mat3::Identity() * q_;
    const Mat3 H = observation_jacobian(q_lidar, obs.v_n);
    const Vec3 w = innovation(obs, q_lidar);
    const Vec3 theta = roll_constraint_vector(q_k, q_lidar);
    const ConstrainedSolution sol = solve_constrained(H, obs.sigma_v, w, theta);
    if (!(sol.y.norm() < 0.5)) throw Error(Errc::ErrorTooLarge, "error state outside the small-angle range");
    P_ = sol.covariance;
    return {propagate_quaternion(q_k, sol.y), sol.y};
  }

  const Mat3& covariance() const { return P_; }

 private:
  double q_;
  Mat3 P_ = Mat3::Identity() * 1e-2;
};

}  // namespace liloc
