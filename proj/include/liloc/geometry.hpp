#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "liloc/errors.hpp"

namespace liloc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

class Rotation3;

/// Hamilton quaternion (w-first). Always unit-norm with w >= 0.
/// The rotation it represents maps body-frame vectors into the parent frame.
class UnitQuaternion {
 public:
  UnitQuaternion() = default;
  UnitQuaternion(double w, double x, double y, double z) : w_(w), x_(x), y_(y), z_(z) {
    normalize();
  }

  static UnitQuaternion identity() { return {}; }

  static UnitQuaternion from_axis_angle(const Vec3& axis, double angle) {
    const Vec3 n = axis.normalized();
    const double s = std::sin(0.5 * angle);
    return {std::cos(0.5 * angle), n.x() * s, n.y() * s, n.z() * s};
  }

  /// Exponential map of a rotation vector.
  static UnitQuaternion exp(const Vec3& rotvec) {
    const double theta = rotvec.norm();
    if (theta < 1e-8) {
      // second-order expansion of cos(theta/2), sin(theta/2)/theta
      const double w = 1.0 - theta * theta / 8.0;
      const double k = 0.5 - theta * theta / 48.0;
      return {w, k * rotvec.x(), k * rotvec.y(), k * rotvec.z()};
    }
    return from_axis_angle(rotvec / theta, theta);
  }

  static UnitQuaternion from_matrix(const Mat3& m) {
    // Shepperd's method on the largest diagonal combination.
    const double tr = m.trace();
    double w, x, y, z;
    if (tr > m(0, 0) && tr > m(1, 1) && tr > m(2, 2)) {
      const double s = 2.0 * std::sqrt(1.0 + tr);
      w = 0.25 * s;
      x = (m(2, 1) - m(1, 2)) / s;
      y = (m(0, 2) - m(2, 0)) / s;
      z = (m(1, 0) - m(0, 1)) / s;
    } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
      const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
      w = (m(2, 1) - m(1, 2)) / s;
      x = 0.25 * s;
      y = (m(0, 1) + m(1, 0)) / s;
      z = (m(0, 2) + m(2, 0)) / s;
    } else if (m(1, 1) > m(2, 2)) {
      const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
      w = (m(0, 2) - m(2, 0)) / s;
      x = (m(0, 1) + m(1, 0)) / s;
      y = 0.25 * s;
      z = (m(1, 2) + m(2, 1)) / s;
    } else {
      const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
      w = (m(1, 0) - m(0, 1)) / s;
      x = (m(0, 2) + m(2, 0)) / s;
      y = (m(1, 2) + m(2, 1)) / s;
      z = 0.25 * s;
    }
    return {w, x, y, z};
  }

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }
  Vec3 vec() const { return {x_, y_, z_}; }

  UnitQuaternion conjugate() const { return {w_, -x_, -y_, -z_}; }
  UnitQuaternion inverse() const { return conjugate(); }

  Mat3 matrix() const {
    const double ww = w_ * w_, xx = x_ * x_, yy = y_ * y_, zz = z_ * z_;
    const double xy = x_ * y_, xz = x_ * z_, yz = y_ * z_;
    const double wx = w_ * x_, wy = w_ * y_, wz = w_ * z_;
    Mat3 r;
    r << ww + xx - yy - zz, 2.0 * (xy - wz), 2.0 * (xz + wy),
         2.0 * (xy + wz), ww - xx + yy - zz, 2.0 * (yz - wx),
         2.0 * (xz - wy), 2.0 * (yz + wx), ww - xx - yy + zz;
    return r;
  }

  Vec3 rotate(const Vec3& v) const { return matrix() * v; }

  /// Rotation vector (axis * angle), angle in [0, pi].
  Vec3 log() const {
    const Vec3 v = vec();
    const double n = v.norm();
    if (n < 1e-12) return 2.0 * v;
    const double angle = 2.0 * std::atan2(n, w_);
    return v * (angle / n);
  }

  /// Angle of the rotation, in [0, pi].
  double angle() const { return 2.0 * std::atan2(vec().norm(), w_); }

 private:
  void normalize() {
    const double n = std::sqrt(w_ * w_ + x_ * x_ + y_ * y_ + z_ * z_);
    if (!(n > 0.0) || !std::isfinite(n))
      throw Error(Errc::InvalidArgument, "quaternion has zero or non-finite norm");
    w_ /= n; x_ /= n; y_ /= n; z_ /= n;
    if (w_ < 0.0) { w_ = -w_; x_ = -x_; y_ = -y_; z_ = -z_; }
  }

  double w_ = 1.0, x_ = 0.0, y_ = 0.0, z_ = 0.0;
};

/// Hamilton product a * b, renormalized.
inline UnitQuaternion quat_multiply(const UnitQuaternion& a, const UnitQuaternion& b) {
  return {a.w() * b.w() - a.x() * b.x() - a.y() * b.y() - a.z() * b.z(),
          a.w() * b.x() + a.x() * b.w() + a.y() * b.z() - a.z() * b.y(),
          a.w() * b.y() - a.x() * b.z() + a.y() * b.w() + a.z() * b.x(),
          a.w() * b.z() + a.x() * b.y() - a.y() * b.x() + a.z() * b.w()};
}

inline UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) {
  return quat_multiply(a, b);
}

/// Shortest-arc spherical interpolation, t = 0 gives a, t = 1 gives b.
inline UnitQuaternion slerp(const UnitQuaternion& a, const UnitQuaternion& b, double t) {
  if (t == 0.0) return a;
  if (t == 1.0) return b;
  return a * UnitQuaternion::exp(t * (a.conjugate() * b).log());
}

/// Proper rotation matrix. Construction from a raw matrix is validated.
class Rotation3 {
 public:
  Rotation3() : m_(Mat3::Identity()) {}

  explicit Rotation3(const Mat3& m, double tol = 1e-9) : m_(m) {
    if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > tol ||
        std::abs(m.determinant() - 1.0) > tol)
      throw Error(Errc::InvalidArgument, "matrix is not a proper rotation");
  }

  explicit Rotation3(const UnitQuaternion& q) : m_(q.matrix()) {}

  /// Closest rotation in the Frobenius sense (polar decomposition).
  static Rotation3 nearest(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    Rotation3 r;
    r.m_ = svd.matrixU() * d * svd.matrixV().transpose();
    return r;
  }

  static Rotation3 exp(const Vec3& rotvec) {
    const double theta = rotvec.norm();
    const Mat3 k = skew(rotvec);
    Rotation3 r;
    if (theta < 1e-8) {
      r.m_ = Mat3::Identity() + k + 0.5 * k * k;
    } else {
      r.m_ = Mat3::Identity() + (std::sin(theta) / theta) * k +
             ((1.0 - std::cos(theta)) / (theta * theta)) * k * k;
    }
    return r;
  }

  const Mat3& matrix() const { return m_; }
  UnitQuaternion quaternion() const { return UnitQuaternion::from_matrix(m_); }
  Vec3 log() const { return quaternion().log(); }
  double angle() const { return quaternion().angle(); }
  Rotation3 transpose() const {
    Rotation3 r;
    r.m_ = m_.transpose();
    return r;
  }

  Rotation3 operator*(const Rotation3& o) const {
    Rotation3 r;
    r.m_ = m_ * o.m_;
    return r;
  }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

 private:
  Mat3 m_;
};

/// Angle of the relative rotation between a and b.
inline double rotation_distance(const Mat3& a, const Mat3& b) {
  return UnitQuaternion::from_matrix(Rotation3::nearest(a.transpose() * b).matrix()).angle();
}

inline double rotation_distance(const UnitQuaternion& a, const UnitQuaternion& b) {
  return (a.conjugate() * b).angle();
}

/// Rigid transform x -> R x + t.
struct Pose {
  UnitQuaternion rotation;
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  Pose(const UnitQuaternion& q, const Vec3& t) : rotation(q), translation(t) {}
  Pose(const Mat3& r, const Vec3& t) : rotation(UnitQuaternion::from_matrix(r)), translation(t) {}

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return rotation.rotate(x) + translation; }

  Pose inverse() const {
    const UnitQuaternion qi = rotation.conjugate();
    return {qi, -qi.rotate(translation)};
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation.matrix();
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  bool is_finite() const {
    return translation.allFinite() && std::isfinite(rotation.w()) && std::isfinite(rotation.x()) &&
           std::isfinite(rotation.y()) && std::isfinite(rotation.z());
  }
};

/// (a o b)(x) = a(b(x)).
inline Pose pose_compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation.rotate(b.translation) + a.translation};
}

inline Pose operator*(const Pose& a, const Pose& b) { return pose_compose(a, b); }

inline Pose pose_inverse(const Pose& p) { return p.inverse(); }

/// Z-Y-X intrinsic sequence: R = Rz(yaw) Ry(pitch) Rx(roll).
struct EulerAngles {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

inline Mat3 rot_x(double a) {
  Mat3 m;
  m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return m;
}

inline Mat3 rot_y(double a) {
  Mat3 m;
  m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return m;
}

inline Mat3 rot_z(double a) {
  Mat3 m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return m;
}

inline Rotation3 rotation_from_euler(const EulerAngles& e) {
  return Rotation3(rot_z(e.yaw) * rot_y(e.pitch) * rot_x(e.roll), 1e-6);
}

inline UnitQuaternion quaternion_from_euler(const EulerAngles& e) {
  return UnitQuaternion::from_axis_angle(Vec3::UnitZ(), e.yaw) *
         UnitQuaternion::from_axis_angle(Vec3::UnitY(), e.pitch) *
         UnitQuaternion::from_axis_angle(Vec3::UnitX(), e.roll);
}

inline EulerAngles euler_from_rotation(const Mat3& r) {
  const double pitch = std::atan2(-r(2, 0), std::hypot(r(2, 1), r(2, 2)));
  if (std::abs(pitch) >= kPi / 2.0 - 1e-6)
    throw Error(Errc::GimbalLock, "pitch within 1e-6 rad of +-pi/2");
  return {std::atan2(r(2, 1), r(2, 2)), pitch, std::atan2(r(1, 0), r(0, 0))};
}

inline EulerAngles euler_from_rotation(const Rotation3& r) { return euler_from_rotation(r.matrix()); }

inline double yaw_of(const UnitQuaternion& q) {
  const Mat3 r = q.matrix();
  return std::atan2(r(1, 0), r(0, 0));
}

}  // namespace liloc
