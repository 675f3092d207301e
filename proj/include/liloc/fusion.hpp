#pragma once

#include <Eigen/Core>

#include <array>
#include <optional>
#include <span>
#include <string>

#include "liloc/dynamic_icp.hpp"
#include "liloc/errors.hpp"
#include "liloc/geometry.hpp"

namespace liloc {

enum class OdomSource { Gnss, Imu, Lidar, Fused };

struct OdomSample {
  double t = 0.0;
  Pose pose;
  std::optional<Eigen::Matrix<double, 6, 6>> covariance;
  OdomSource source = OdomSource::Lidar;
};

struct FusionConfig {
  double alpha = 0.8;               // weight of the LIDAR/IMU pose when GNSS is healthy
  double beta = 0.9;                // weight of the LIDAR increment when GNSS is degraded
  double trace_threshold = 25.0;    // A, m^2
  double failure_fitness_gate = 0.5;      // m
  double failure_pose_gate_m = 2.0;       // m
  double failure_pose_gate_rad = 0.2;     // rad
  double failure_min_inlier_fraction = 0.3;
  int interpolation_window = 3;
  double max_extrapolation = 0.2;   // s

  void validate() const {
    if (alpha < 0.0 || alpha > 1.0 || beta < 0.0 || beta > 1.0)
      throw Error(Errc::ConfigError, "alpha and beta must lie in [0, 1]");
    if (!(trace_threshold > 0.0)) throw Error(Errc::ConfigError, "trace threshold A must be positive");
    if (!(failure_fitness_gate > 0.0) || !(failure_pose_gate_m > 0.0) || !(failure_pose_gate_rad > 0.0))
      throw Error(Errc::ConfigError, "failure gates must be positive");
    if (interpolation_window < 3) throw Error(Errc::ConfigError, "interpolation_window must be at least 3");
    if (max_extrapolation < 0.0) throw Error(Errc::ConfigError, "max_extrapolation must be >= 0");
  }
};

namespace detail {

struct QuadraticBasis {
  std::array<double, 3> value{};
  std::array<double, 3> slope{};
};

/// Lagrange basis through three distinct nodes, and its time derivative.
inline QuadraticBasis lagrange3(const std::array<double, 3>& ts, double t) {
  QuadraticBasis b;
  for (int i = 0; i < 3; ++i) {
    const int j = (i + 1) % 3, k = (i + 2) % 3;
    const double den = (ts[i] - ts[j]) * (ts[i] - ts[k]);
    b.value[i] = (t - ts[j]) * (t - ts[k]) / den;
    b.slope[i] = ((t - ts[j]) + (t - ts[k])) / den;
  }
  return b;
}

struct Window3 {
  std::array<double, 3> ts;
  std::array<const OdomSample*, 3> s;
};

inline Window3 last_three(std::span<const OdomSample> window, double t, double max_extrapolation) {
  if (window.size() < 3) throw Error(Errc::InsufficientWindow, "need at least 3 poses to interpolate");
  Window3 w;
  for (int i = 0; i < 3; ++i) {
    w.s[i] = &window[window.size() - 3 + i];
    w.ts[i] = w.s[i]->t;
  }
  if (!(w.ts[0] < w.ts[1] && w.ts[1] < w.ts[2]))
    throw Error(Errc::InvalidArgument, "interpolation nodes must have strictly increasing timestamps");
  if (t < w.ts[0] || t > w.ts[2] + max_extrapolation)
    throw Error(Errc::ExtrapolationTooFar, "query time outside [first, last + max_extrapolation]");
  return w;
}

}  // namespace detail

/// Quadratic interpolation through the three most recent poses. Translation is
/// fit per axis; rotation is fit in rotation-vector coordinates relative to the
/// middle pose and mapped back through the exponential. Exact at the nodes.
inline Pose interpolate_pose(std::span<const OdomSample> window, double t, double max_extrapolation = 0.2) {
  const detail::Window3 w = detail::last_three(window, t, max_extrapolation);
  const detail::QuadraticBasis b = detail::lagrange3(w.ts, t);
  Vec3 trans = Vec3::Zero();
  Vec3 rv = Vec3::Zero();
  const UnitQuaternion& mid = w.s[1]->pose.rotation;
  for (int i = 0; i < 3; ++i) {
    trans += b.value[i] * w.s[i]->pose.translation;
    if (i != 1) rv += b.value[i] * (mid.conjugate() * w.s[i]->pose.rotation).log();
  }
  return {mid * UnitQuaternion::exp(rv), trans};
}

/// World-frame velocity of the quadratic translation fit at `t`.
inline Vec3 interpolate_velocity(std::span<const OdomSample> window, double t, double max_extrapolation = 0.2) {
  const detail::Window3 w = detail::last_three(window, t, max_extrapolation);
  const detail::QuadraticBasis b = detail::lagrange3(w.ts, t);
  Vec3 v = Vec3::Zero();
  for (int i = 0; i < 3; ++i) v += b.slope[i] * w.s[i]->pose.translation;
  return v;
}

enum class FusionBranch { GnssHealthy, GnssDegraded };

inline FusionBranch select_branch(const Mat3& xi, double trace_threshold) {
  return xi.trace() > trace_threshold ? FusionBranch::GnssDegraded : FusionBranch::GnssHealthy;
}

/// Trace-switched GNSS fusion.
///   tr(Xi) >  A: position = Q_prev + (1-beta) V_g dt + beta * (R_prev dQ.t),
///                rotation = R_prev dQ.R
///   tr(Xi) <= A: position = (1-alpha) Q_g + alpha Q',
///                rotation = slerp(Q_g.R, Q'.R, alpha)
inline OdomSample fuse(const OdomSample& q_prime, const OdomSample& q_g, const Vec3& v_g, const Pose& dq_l,
                       const OdomSample& q_prev_l, const Mat3& xi, const FusionConfig& cfg) {
  OdomSample out;
  out.t = q_prime.t;
  out.source = OdomSource::Fused;
  if (select_branch(xi, cfg.trace_threshold) == FusionBranch::GnssDegraded) {
    const double dt = q_prime.t - q_prev_l.t;
    const Pose& prev = q_prev_l.pose;
    out.pose.translation =
        prev.translation + (1.0 - cfg.beta) * (v_g * dt) + cfg.beta * prev.rotation.rotate(dq_l.translation);
    out.pose.rotation = prev.rotation * dq_l.rotation;
  } else {
    out.pose.translation = (1.0 - cfg.alpha) * q_g.pose.translation + cfg.alpha * q_prime.pose.translation;
    out.pose.rotation = slerp(q_g.pose.rotation, q_prime.pose.rotation, cfg.alpha);
  }
  return out;
}

enum FailureReason : unsigned {
  kNotConverged = 1u << 0,
  kFitnessGate = 1u << 1,
  kTranslationGate = 1u << 2,
  kRotationGate = 1u << 3,
  kLowInliers = 1u << 4,
};

struct FailureReport {
  bool failed = false;
  unsigned reasons = 0;

  bool has(FailureReason r) const { return (reasons & r) != 0; }

  std::string describe() const {
    if (!failed) return "ok";
    std::string s;
    auto add = [&](FailureReason r, const char* name) {
      if (has(r)) s += (s.empty() ? "" : ",") + std::string(name);
    };
    add(kNotConverged, "not-converged");
    add(kFitnessGate, "fitness-gate");
    add(kTranslationGate, "translation-gate");
    add(kRotationGate, "rotation-gate");
    add(kLowInliers, "low-inliers");
    return s;
  }
};

/// A registration fails when any gate fires. All gates are strict: a value
/// exactly at its gate passes.
inline FailureReport detect_registration_failure(const RegistrationResult& result, const Pose& imu_predicted,
                                                 const FusionConfig& cfg) {
  FailureReport rep;
  if (!result.converged) rep.reasons |= kNotConverged;
  if (result.fitness > cfg.failure_fitness_gate) rep.reasons |= kFitnessGate;
  if ((result.p_k.translation - imu_predicted.translation).norm() > cfg.failure_pose_gate_m)
    rep.reasons |= kTranslationGate;
  if (rotation_distance(result.p_k.rotation, imu_predicted.rotation) > cfg.failure_pose_gate_rad)
    rep.reasons |= kRotationGate;
  if (result.inlier_fraction < cfg.failure_min_inlier_fraction) rep.reasons |= kLowInliers;
  rep.failed = rep.reasons != 0;
  return rep;
}

}  // namespace liloc
