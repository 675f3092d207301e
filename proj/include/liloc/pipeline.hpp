#pragma once

#include <cmath>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "liloc/config.hpp"
#include "liloc/dynamic_icp.hpp"
#include "liloc/errors.hpp"
#include "liloc/events.hpp"
#include "liloc/fusion.hpp"
#include "liloc/gnss_ekf.hpp"
#include "liloc/imu_preintegration.hpp"
#include "liloc/map_store.hpp"
#include "liloc/velocity_ikf.hpp"

namespace liloc {

struct PipelineConfig {
  RegistrationConfig registration;
  FusionConfig fusion;
  Extrinsics extrinsics;
  double gravity = kStandardGravity;
  EkfProcessNoise ekf_noise;
  ImuBias imu_bias;
  double gnss_velocity_sigma = 0.1;  // m/s, for the EKF update
  double mag_sigma = 0.05;           // rad
  double mag_pairing_window = 0.05;  // s, a heading joins a fix this close in time
  int init_min_fixes = 3;
  double gnss_stale_after = 1.5;     // s, older fixes count as degraded (infinite trace)
  double velocity_gain = 0.3;        // keyframe velocity feedback from registration
  bool velocity_ikf = true;
  double ikf_min_speed = 1.0;        // m/s
  bool map_registration = true;      // false: scan-to-scan dead reckoning after initialization

  void validate() const {
    registration.validate();
    fusion.validate();
    if (!(gravity > 0.0)) throw Error(Errc::ConfigError, "gravity must be positive");
    if (!(gnss_velocity_sigma > 0.0) || !(mag_sigma > 0.0)) throw Error(Errc::ConfigError, "sigmas must be positive");
    if (init_min_fixes < 1) throw Error(Errc::ConfigError, "init_min_fixes must be >= 1");
    if (velocity_gain < 0.0 || velocity_gain > 1.0) throw Error(Errc::ConfigError, "velocity_gain must lie in [0, 1]");
  }
};

inline KeyValueBinder pipeline_config_binder(PipelineConfig& c) {
  KeyValueBinder b;
  auto& r = c.registration;
  auto& f = c.fusion;
  b.integer("max_iterations", r.max_iterations)
      .number("error_tolerance", r.error_tolerance)
      .number("correspondence_max_distance", r.correspondence_max_distance)
      .integer("min_region_points", r.min_region_points)
      .number("r_min", r.r_min)
      .number("r_max", r.r_max)
      .number("radius_growth", r.radius_growth)
      .number("convergence_delta", r.convergence_delta)
      .number("scan_voxel_leaf", r.scan_voxel_leaf)
      .number("reloc_search_fraction", r.reloc_search_fraction)
      .number("reloc_grid_step", r.reloc_grid_step)
      .integer("reloc_coarse_points", r.reloc_coarse_points)
      .integer("reloc_coarse_iterations", r.reloc_coarse_iterations)
      .number("reloc_score_gate", r.reloc_score_gate)
      .integer("reloc_refine_candidates", r.reloc_refine_candidates)
      .number("min_inlier_fraction", r.min_inlier_fraction)
      .number("alpha", f.alpha)
      .number("beta", f.beta)
      .number("trace_threshold", f.trace_threshold)
      .number("failure_fitness_gate", f.failure_fitness_gate)
      .number("failure_pose_gate_m", f.failure_pose_gate_m)
      .number("failure_pose_gate_rad", f.failure_pose_gate_rad)
      .number("failure_min_inlier_fraction", f.failure_min_inlier_fraction)
      .integer("interpolation_window", f.interpolation_window)
      .number("max_extrapolation", f.max_extrapolation)
      .number("gravity", c.gravity)
      .number("gyro_noise_density", c.ekf_noise.gyro_density)
      .number("accel_noise_density", c.ekf_noise.accel_density)
      .number("gnss_velocity_sigma", c.gnss_velocity_sigma)
      .number("mag_sigma", c.mag_sigma)
      .number("mag_pairing_window", c.mag_pairing_window)
      .integer("init_min_fixes", c.init_min_fixes)
      .number("gnss_stale_after", c.gnss_stale_after)
      .number("velocity_gain", c.velocity_gain)
      .flag("velocity_ikf", c.velocity_ikf)
      .number("ikf_min_speed", c.ikf_min_speed)
      .flag("map_registration", c.map_registration)
      .on("extrinsic_T_l2m",
          [&c](const KeyValueEntry& e) {
            const auto v = KeyValueBinder::as_numbers(e, 7);
            c.extrinsics.T_l2m = {UnitQuaternion(v[3], v[4], v[5], v[6]), Vec3(v[0], v[1], v[2])};
          })
      .on("gyro_bias", [&c](const KeyValueEntry& e) {
        const auto v = KeyValueBinder::as_numbers(e, 3);
        c.imu_bias.gyro = Vec3(v[0], v[1], v[2]);
      })
      .on("accel_bias", [&c](const KeyValueEntry& e) {
        const auto v = KeyValueBinder::as_numbers(e, 3);
        c.imu_bias.accel = Vec3(v[0], v[1], v[2]);
      });
  return b;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  PipelineConfig c;
  pipeline_config_binder(c).apply(read_key_value_file(path));
  c.validate();
  return c;
}

enum class Mode { Initializing, Tracking, Relocalizing };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Initializing: return "Initializing";
    case Mode::Tracking: return "Tracking";
    case Mode::Relocalizing: return "Relocalizing";
  }
  return "?";
}

struct ModeTransition {
  double t = 0.0;
  Mode from = Mode::Initializing;
  Mode to = Mode::Initializing;
  std::string reason;
};

struct PipelineStats {
  std::size_t lidar_frames = 0;
  std::size_t registrations = 0;
  std::size_t registration_failures = 0;
  std::size_t relocalizations = 0;
  std::size_t relocalization_failures = 0;
  std::size_t ikf_updates = 0;
  std::size_t ikf_skipped = 0;
  std::size_t gnss_rejected = 0;
};

/// Observable pipeline state. Filter internals stay with their owning modules.
struct PipelineState {
  Mode mode = Mode::Initializing;
  std::optional<OdomSample> last_fused;
  std::deque<OdomSample> lidar_window;  // registered LIDAR poses, oldest first
  std::vector<ModeTransition> transitions;
  PipelineStats stats;
  bool last_relocalization_failed = false;
};

/// Single-owner localization state machine over a time-ordered event stream.
///
/// Initializing: GNSS fixes accumulate until a global pose is available; the
/// GNSS filter starts from it and the next scan is relocalized against the map.
/// Tracking: IMU samples are preintegrated between scans; each scan is
/// registered from the IMU-predicted seed at r_min, judged, and fused with the
/// GNSS filter output. Relocalizing: the next scan is relocalized from the GNSS
/// filter pose; failure falls back to Initializing.
class Pipeline {
 public:
  Pipeline(const GlobalMap& map, PipelineConfig cfg)
      : map_(&map), cfg_(std::move(cfg)), ekf_(cfg_.ekf_noise), preint_(cfg_.imu_bias) {
    cfg_.validate();
    cfg_.ekf_noise.gravity = cfg_.gravity;
    ekf_ = GnssEkf(cfg_.ekf_noise);
    l2m_inv_ = cfg_.extrinsics.T_l2m.inverse();
    gravity_imu_ = l2m_inv_.rotation.rotate(enu_gravity(cfg_.gravity));
  }

  const PipelineState& state() const { return st_; }
  Mode mode() const { return st_.mode; }
  const GnssEkf& gnss_filter() const { return ekf_; }
  const PipelineConfig& config() const { return cfg_; }

  std::optional<OdomSample> step(const SensorEvent& ev) {
    if (!std::isfinite(ev.t)) throw Error(Errc::InvalidArgument, "non-finite event timestamp");
    if (last_t_ && ev.t < *last_t_) throw Error(Errc::NonMonotonicEvent, "event timestamps went backwards");
    last_t_ = ev.t;
    return std::visit([&](const auto& p) { return on(ev.t, p); }, ev.payload);
  }

 private:
  std::optional<OdomSample> on(double, const TruthEvent&) { return std::nullopt; }

  std::optional<OdomSample> on(double, const ImuEvent& e) {
    preint_.push(e.sample);
    if (ekf_.initialized()) ekf_.predict(correct_sample(e.sample, cfg_.imu_bias));
    else last_imu_ = e.sample;
    return std::nullopt;
  }

  std::optional<OdomSample> on(double t, const MagEvent& e) {
    mag_ = {t, e.heading};
    return std::nullopt;
  }

  std::optional<OdomSample> on(double t, const GnssEvent& e) {
    GnssMeasurement m;
    m.t = t;
    m.position = e.position;
    m.velocity = e.velocity;
    m.R = Mat7::Zero();
    m.R(0, 0) = cfg_.mag_sigma * cfg_.mag_sigma;
    m.R.block<3, 3>(1, 1) = e.xi;
    m.R.block<3, 3>(4, 4) = Mat3::Identity() * (cfg_.gnss_velocity_sigma * cfg_.gnss_velocity_sigma);
    if (mag_ && std::abs(mag_->first - t) <= cfg_.mag_pairing_window) m.psi_mag = mag_->second;
    gnss_ = m;
    gnss_xi_ = e.xi;

    if (!ekf_.initialized()) {
      fixes_.push_back(m);
      while (fixes_.size() > static_cast<std::size_t>(std::max(cfg_.init_min_fixes, 1))) fixes_.erase(fixes_.begin());
      try_initialize_filter(t);
    } else {
      try {
        ekf_.predict_to(t);
        ekf_.update(m);
      } catch (const Error& err) {
        if (err.code() != Errc::SingularInnovationCovariance) throw;
        ++st_.stats.gnss_rejected;
      }
    }
    pending_ikf_fix_ = m;
    return std::nullopt;
  }

  std::optional<OdomSample> on(double t, const LidarEvent& e) {
    if (!e.scan) throw Error(Errc::InvalidArgument, "LIDAR event without a loaded scan: " + e.ref);
    ++st_.stats.lidar_frames;
    if (ekf_.initialized()) ekf_.predict_to(t);
    switch (st_.mode) {
      case Mode::Initializing:
        if (ekf_.initialized()) relocalize_from_gnss(t, *e.scan, Mode::Initializing);
        return std::nullopt;
      case Mode::Relocalizing:
        relocalize_from_gnss(t, *e.scan, Mode::Relocalizing);
        return std::nullopt;
      case Mode::Tracking:
        return cfg_.map_registration ? track(t, *e.scan) : dead_reckon(t, *e.scan);
    }
    return std::nullopt;
  }

  void transition(double t, Mode to, std::string reason) {
    st_.transitions.push_back({t, st_.mode, to, std::move(reason)});
    st_.mode = to;
  }

  void try_initialize_filter(double t) {
    Pose pose;
    try {
      pose = global_init(fixes_, static_cast<std::size_t>(cfg_.init_min_fixes));
    } catch (const Error& err) {
      if (err.code() == Errc::InsufficientFixes || err.code() == Errc::HeadingUnobservable) return;
      throw;
    }
    const GnssMeasurement& last = fixes_.back();
    Mat9 P = Mat9::Zero();
    P(NavState::kRoll, NavState::kRoll) = P(NavState::kPitch, NavState::kPitch) = 0.02 * 0.02;
    P(NavState::kYaw, NavState::kYaw) = last.psi_mag ? cfg_.mag_sigma * cfg_.mag_sigma : 0.1 * 0.1;
    P.block<3, 3>(NavState::kPe, NavState::kPe) = last.R.block<3, 3>(1, 1);
    P.block<3, 3>(NavState::kVe, NavState::kVe) = last.R.block<3, 3>(4, 4);
    ekf_.initialize(t, pose, last.velocity, P);
    if (last_imu_) {
      // hold the latest sample from the initialization instant onward
      ImuSample held = correct_sample(*last_imu_, cfg_.imu_bias);
      held.t = t;
      ekf_.predict(held);
    }
    fixes_.clear();
  }

  Pose gnss_seed() const {
    const NavState& s = ekf_.state();
    return {UnitQuaternion::from_axis_angle(Vec3::UnitZ(), s.x[NavState::kYaw]), s.position()};
  }

  void relocalize_from_gnss(double t, const PointCloud& scan, Mode from) {
    ++st_.stats.relocalizations;
    const Mat3 cov = ekf_.state().P.block<3, 3>(NavState::kPe, NavState::kPe);
    try {
      const RegistrationResult r = relocalize(scan, *map_, gnss_seed(), cov, cfg_.registration);
      start_tracking(t, r.p_k, ekf_.state().velocity());
      st_.last_relocalization_failed = false;
      transition(t, Mode::Tracking, "relocalized after " + std::to_string(r.attempts) + " attempt(s)");
    } catch (const RelocalizationFailed&) {
      ++st_.stats.relocalization_failures;
      st_.last_relocalization_failed = true;
      if (from == Mode::Relocalizing) transition(t, Mode::Initializing, "relocalization failed");
      ekf_.reset();
      fixes_.clear();
    } catch (const Error& err) {
      if (err.code() != Errc::InvalidArgument && err.code() != Errc::RegionEmpty) throw;
      ++st_.stats.relocalization_failures;
    }
  }

  void start_tracking(double t, const Pose& lidar_pose, const Vec3& velocity_map) {
    const Pose imu_pose = pose_compose(l2m_inv_, lidar_pose);
    kin_ = {Rotation3(imu_pose.rotation), l2m_inv_.rotation.rotate(velocity_map), imu_pose.translation};
    preint_.reset(t);
    st_.lidar_window.clear();
    st_.lidar_window.push_back({t, lidar_pose, std::nullopt, OdomSource::Lidar});
    prev_scan_.reset();
  }

  struct Prediction {
    KinematicState imu;
    Pose lidar;
  };

  Prediction predict(double t) {
    preint_.advance_to(t);
    Prediction p;
    p.imu = predict_pose(kin_, preint_.delta(), gravity_imu_);
    p.lidar = to_lidar_frame({p.imu.R.quaternion(), p.imu.p}, cfg_.extrinsics);
    return p;
  }

  /// Resets the keyframe to the registered pose, blending the IMU-propagated
  /// velocity toward the registration-implied one.
  void accept_keyframe(double t, const Prediction& pred, const Pose& lidar_pose) {
    const Pose imu_pose = pose_compose(l2m_inv_, lidar_pose);
    const double dt = preint_.delta().dt;
    Vec3 v = pred.imu.v;
    if (dt > 0.0) v += cfg_.velocity_gain * (imu_pose.translation - pred.imu.p) / dt;
    kin_ = {Rotation3(imu_pose.rotation), v, imu_pose.translation};
    preint_.reset(t);
    st_.lidar_window.push_back({t, lidar_pose, std::nullopt, OdomSource::Lidar});
    while (st_.lidar_window.size() > static_cast<std::size_t>(cfg_.fusion.interpolation_window))
      st_.lidar_window.pop_front();
  }

  std::optional<OdomSample> track(double t, const PointCloud& scan) {
    const Prediction pred = predict(t);
    ++st_.stats.registrations;
    std::optional<RegistrationResult> result;
    std::string why;
    try {
      result = register_scan(scan, *map_, pred.lidar, cfg_.registration.r_min, cfg_.registration);
      const FailureReport rep = detect_registration_failure(*result, pred.lidar, cfg_.fusion);
      if (rep.failed) {
        why = rep.describe();
        result.reset();
      }
    } catch (const Error& err) {
      if (err.code() != Errc::RegionEmpty && err.code() != Errc::NoCorrespondences &&
          err.code() != Errc::DegenerateConfiguration && err.code() != Errc::InvalidArgument)
        throw;
      why = errc_name(err.code());
    }
    if (!result) {
      ++st_.stats.registration_failures;
      transition(t, Mode::Relocalizing, "registration failed: " + why);
      return std::nullopt;
    }

    const OdomSample q_prime{t, result->p_k, std::nullopt, OdomSource::Lidar};
    const OdomSample q_prev = st_.lidar_window.back();
    accept_keyframe(t, pred, q_prime.pose);
    run_velocity_ikf();

    const NavState& nav = ekf_.state();
    const OdomSample q_g{t, nav.pose(), std::nullopt, OdomSource::Gnss};
    const bool fresh = gnss_ && t - gnss_->t <= cfg_.gnss_stale_after;
    const Mat3 xi = fresh ? gnss_xi_ : Mat3::Identity() * std::numeric_limits<double>::infinity();
    const Vec3 v_g = fresh ? gnss_->velocity : nav.velocity();
    const Pose dq = pose_compose(q_prev.pose.inverse(), q_prime.pose);
    OdomSample out = fuse(q_prime, q_g, v_g, dq, q_prev, xi, cfg_.fusion);
    st_.last_fused = out;
    return out;
  }

  /// Roll-constrained attitude correction on GNSS velocity epochs. The LIDAR
  /// velocity is the central difference at the middle window sample, so the
  /// fix must coincide with that sample. The correction feeds the attitude of
  /// the next IMU-predicted seed.
  void run_velocity_ikf() {
    if (!cfg_.velocity_ikf || !pending_ikf_fix_ || st_.lidar_window.size() < 3) return;
    const OdomSample& mid = st_.lidar_window[st_.lidar_window.size() - 2];
    if (std::abs(pending_ikf_fix_->t - mid.t) > 0.02) return;
    const GnssMeasurement fix = *pending_ikf_fix_;
    pending_ikf_fix_.reset();
    const std::vector<OdomSample> w(st_.lidar_window.end() - 3, st_.lidar_window.end());
    const Vec3 v_lidar = interpolate_velocity(w, mid.t, cfg_.fusion.max_extrapolation);
    if (fix.velocity.norm() < cfg_.ikf_min_speed || v_lidar.norm() < cfg_.ikf_min_speed) {
      ++st_.stats.ikf_skipped;
      return;
    }
    VelocityObservation obs;
    obs.w_v = nav_to_body(mid.pose.rotation) * v_lidar;
    obs.v_n = fix.velocity;
    obs.sigma_v = Mat3::Identity() * (cfg_.gnss_velocity_sigma * cfg_.gnss_velocity_sigma);
    try {
      const VelocityIkf::Update u = ikf_.update(mid.pose.rotation, mid.pose.rotation, obs);
      const UnitQuaternion corrected = propagate_quaternion(kin_.R.quaternion(), u.y);
      kin_.R = Rotation3(corrected);
      ++st_.stats.ikf_updates;
    } catch (const Error& err) {
      if (err.code() != Errc::SingularKKT && err.code() != Errc::ConstraintSingular &&
          err.code() != Errc::ErrorTooLarge)
        throw;
      ++st_.stats.ikf_skipped;
    }
  }

  /// Baseline without the prior map: each scan registers against the previous
  /// one, seeded by the IMU prediction. Drift is expected.
  std::optional<OdomSample> dead_reckon(double t, const PointCloud& scan) {
    const Prediction pred = predict(t);
    Pose pose = pred.lidar;
    if (prev_scan_) {
      try {
        RegistrationResult r = register_scan(scan, *prev_scan_, pred.lidar, cfg_.registration.r_min, cfg_.registration);
        if ((r.p_k.translation - pred.lidar.translation).norm() <= cfg_.fusion.failure_pose_gate_m &&
            rotation_distance(r.p_k.rotation, pred.lidar.rotation) <= cfg_.fusion.failure_pose_gate_rad)
          pose = r.p_k;
        ++st_.stats.registrations;
      } catch (const Error& err) {
        if (err.code() != Errc::RegionEmpty && err.code() != Errc::NoCorrespondences &&
            err.code() != Errc::DegenerateConfiguration)
          throw;
        ++st_.stats.registration_failures;
      }
    }
    accept_keyframe(t, pred, pose);
    prev_scan_ = std::make_unique<GlobalMap>(transform_cloud(scan, pose));
    OdomSample out{t, pose, std::nullopt, OdomSource::Lidar};
    st_.last_fused = out;
    return out;
  }

  const GlobalMap* map_;
  PipelineConfig cfg_;
  GnssEkf ekf_;
  Preintegrator preint_;
  VelocityIkf ikf_;
  KinematicState kin_;
  Pose l2m_inv_;
  Vec3 gravity_imu_;
  PipelineState st_;
  std::optional<double> last_t_;
  std::optional<ImuSample> last_imu_;
  std::optional<std::pair<double, double>> mag_;
  std::optional<GnssMeasurement> gnss_;
  Mat3 gnss_xi_ = Mat3::Identity();
  std::optional<GnssMeasurement> pending_ikf_fix_;
  std::vector<GnssMeasurement> fixes_;
  std::unique_ptr<GlobalMap> prev_scan_;
};

}  // namespace liloc
