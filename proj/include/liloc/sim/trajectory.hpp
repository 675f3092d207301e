#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "liloc/errors.hpp"
#include "liloc/geometry.hpp"

namespace liloc::sim {

/// Natural cubic spline through (t_i, y_i); second derivative vanishes at both
/// ends. Outside the knot range the end cubic is extended.
class CubicSpline {
 public:
  CubicSpline() = default;
  CubicSpline(std::vector<double> t, std::vector<double> y) : t_(std::move(t)), y_(std::move(y)) {
    const std::size_t n = t_.size();
    if (n < 2 || y_.size() != n) throw Error(Errc::InvalidArgument, "spline needs at least 2 matching knots");
    for (std::size_t i = 1; i < n; ++i)
      if (!(t_[i] > t_[i - 1])) throw Error(Errc::InvalidArgument, "spline knots must be strictly increasing");
    m_.assign(n, 0.0);
    if (n == 2) return;
    // Thomas algorithm on the interior second derivatives.
    std::vector<double> c(n, 0.0), d(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h0 = t_[i] - t_[i - 1], h1 = t_[i + 1] - t_[i];
      const double a = h0, b = 2.0 * (h0 + h1), cc = h1;
      const double r = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
      const double den = b - a * c[i - 1];
      c[i] = cc / den;
      d[i] = (r - a * d[i - 1]) / den;
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
      m_[i] = d[i] - c[i] * m_[i + 1];
      if (i == 1) break;
    }
  }

  double value(double t) const { return eval(t, 0); }
  double first(double t) const { return eval(t, 1); }
  double second(double t) const { return eval(t, 2); }
  double t_begin() const { return t_.front(); }
  double t_end() const { return t_.back(); }

 private:
  double eval(double t, int order) const {
    const std::size_t k = segment(t);
    const double h = t_[k + 1] - t_[k];
    const double A = (t_[k + 1] - t) / h, B = (t - t_[k]) / h;
    const double m0 = m_[k], m1 = m_[k + 1];
    switch (order) {
      case 0:
        return A * y_[k] + B * y_[k + 1] + ((A * A * A - A) * m0 + (B * B * B - B) * m1) * h * h / 6.0;
      case 1:
        return (y_[k + 1] - y_[k]) / h - (3.0 * A * A - 1.0) * h / 6.0 * m0 + (3.0 * B * B - 1.0) * h / 6.0 * m1;
      default:
        return A * m0 + B * m1;
    }
  }

  std::size_t segment(double t) const {
    const auto it = std::upper_bound(t_.begin(), t_.end(), t);
    const std::size_t i = it == t_.begin() ? 0 : static_cast<std::size_t>(it - t_.begin()) - 1;
    return std::min(i, t_.size() - 2);
  }

  std::vector<double> t_, y_, m_;
};

struct Waypoint {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
};

struct TrajectorySpec {
  std::vector<Waypoint> waypoints;

  double duration() const { return waypoints.empty() ? 0.0 : waypoints.back().t - waypoints.front().t; }

  void validate() const {
    if (waypoints.size() < 2) throw Error(Errc::ConfigError, "trajectory needs at least 2 waypoints");
    for (std::size_t i = 1; i < waypoints.size(); ++i)
      if (!(waypoints[i].t > waypoints[i - 1].t))
        throw Error(Errc::ConfigError, "waypoint times must be strictly increasing");
  }
};

/// Rounded-rectangle loop of the given perimeter, centered on the origin,
/// traversed counter-clockwise at constant speed. Waypoints are placed every
/// `spacing` meters of arc length; the vehicle is flat (roll = pitch = 0).
inline TrajectorySpec make_loop(double perimeter, double aspect, double corner_radius, double speed, double height,
                                double spacing = 5.0, double t0 = 0.0) {
  if (!(perimeter > 0.0) || !(aspect > 0.0) || corner_radius < 0.0 || !(speed > 0.0) || !(spacing > 0.0))
    throw Error(Errc::ConfigError, "invalid loop parameters");
  const double straight_total = perimeter - 2.0 * kPi * corner_radius;
  if (!(straight_total > 0.0)) throw Error(Errc::ConfigError, "corner radius too large for the perimeter");
  // straight sides a (x) and b (y) with 2a + 2b = straight_total, a = aspect * b.
  const double b = straight_total / (2.0 * (1.0 + aspect));
  const double a = aspect * b;
  const double L[8] = {a, 0.5 * kPi * corner_radius, b, 0.5 * kPi * corner_radius,
                       a, 0.5 * kPi * corner_radius, b, 0.5 * kPi * corner_radius};
  auto at = [&](double s, Vec3& p, double& yaw) {
    s = std::fmod(s, perimeter);
    if (s < 0.0) s += perimeter;
    // arc length is measured from the middle of the bottom edge, heading +x
    Vec3 cur(-0.5 * a, -0.5 * b - corner_radius, height);
    double heading = 0.0;
    double rem = s + 0.5 * a;
    for (int seg = 0;; seg = (seg + 1) % 8) {
      const double len = L[seg];
      const double u = std::min(rem, len);
      if (seg % 2 == 0) {
        cur += u * Vec3(std::cos(heading), std::sin(heading), 0.0);
      } else if (corner_radius > 0.0) {
        const double dphi = u / corner_radius;
        const Vec3 centre = cur + corner_radius * Vec3(-std::sin(heading), std::cos(heading), 0.0);
        const double h1 = heading + dphi;
        cur = centre + corner_radius * Vec3(std::sin(h1), -std::cos(h1), 0.0);
        heading = h1;
        if (u >= len) heading = (seg / 2 + 1) * 0.5 * kPi;
      }
      rem -= u;
      if (rem <= 0.0) break;
    }
    p = cur;
    yaw = heading;
  };
  TrajectorySpec spec;
  const int n = static_cast<int>(std::ceil(perimeter / spacing));
  double prev_yaw = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double s = perimeter * i / n;
    Waypoint w;
    at(s, w.position, w.yaw);
    // continuous (unwrapped) heading
    const double lap = std::floor(s / perimeter);
    w.yaw += 2.0 * kPi * lap;
    while (w.yaw < prev_yaw - kPi) w.yaw += 2.0 * kPi;
    while (w.yaw > prev_yaw + kPi) w.yaw -= 2.0 * kPi;
    prev_yaw = w.yaw;
    w.t = t0 + s / speed;
    spec.waypoints.push_back(w);
  }
  return spec;
}

struct TrajectoryState {
  double t = 0.0;
  Pose pose;
  Vec3 velocity = Vec3::Zero();      // world frame
  Vec3 acceleration = Vec3::Zero();  // world frame
  Vec3 angular_rate = Vec3::Zero();  // body frame
};

/// C2 trajectory: natural cubic splines per position axis and for yaw.
class Trajectory {
 public:
  explicit Trajectory(const TrajectorySpec& spec) {
    spec.validate();
    std::vector<double> t, x, y, z, yaw;
    for (const auto& w : spec.waypoints) {
      t.push_back(w.t);
      x.push_back(w.position.x());
      y.push_back(w.position.y());
      z.push_back(w.position.z());
      yaw.push_back(w.yaw);
    }
    sx_ = CubicSpline(t, x);
    sy_ = CubicSpline(t, y);
    sz_ = CubicSpline(t, z);
    syaw_ = CubicSpline(t, yaw);
  }

  double t_begin() const { return sx_.t_begin(); }
  double t_end() const { return sx_.t_end(); }

  TrajectoryState at(double t) const {
    TrajectoryState s;
    s.t = t;
    const double yaw = syaw_.value(t);
    s.pose.rotation = UnitQuaternion::from_axis_angle(Vec3::UnitZ(), yaw);
    s.pose.translation = Vec3(sx_.value(t), sy_.value(t), sz_.value(t));
    s.velocity = Vec3(sx_.first(t), sy_.first(t), sz_.first(t));
    s.acceleration = Vec3(sx_.second(t), sy_.second(t), sz_.second(t));
    s.angular_rate = Vec3(0.0, 0.0, syaw_.first(t));
    return s;
  }

  /// Points along the path every `dt` seconds (for keep-clear corridors).
  std::vector<Vec3> polyline(double dt) const {
    std::vector<Vec3> out;
    for (double t = t_begin(); t < t_end(); t += dt) out.push_back(at(t).pose.translation);
    out.push_back(at(t_end()).pose.translation);
    return out;
  }

 private:
  CubicSpline sx_, sy_, sz_, syaw_;
};

}  // namespace liloc::sim
