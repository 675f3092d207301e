#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <random>
#include <sstream>

#include <unistd.h>

#include "liloc/imu_preintegration.hpp"
#include "liloc/map_store.hpp"
#include "liloc/sim/evaluate.hpp"
#include "liloc/sim/event_log.hpp"
#include "liloc/sim/replay.hpp"
#include "liloc/sim/scenario.hpp"

using namespace liloc;
namespace fs = std::filesystem;

namespace {

sim::WorldSpec small_world(std::uint64_t seed) {
  sim::WorldSpec w;
  w.extent = Vec3(100.0, 100.0, 15.0);
  w.density = 0.5;
  w.point_spacing = 0.5;
  w.ground_spacing = 2.0;
  w.seed = seed;
  return w;
}

sim::TrajectorySpec straight(double duration, double speed) {
  sim::TrajectorySpec s;
  s.waypoints = {{0.0, Vec3(-0.5 * speed * duration, 0.0, 1.8), 0.3},
                 {duration, Vec3(0.5 * speed * duration, 0.0, 1.8), 0.3}};
  return s;
}

OdomSample at(double t, const Vec3& p, const UnitQuaternion& q = UnitQuaternion()) {
  OdomSample s;
  s.t = t;
  s.pose = Pose{q, p};
  return s;
}

bool same_cloud(const PointCloud& a, const PointCloud& b) {
  return a.size() == b.size() &&
         (a.size() == 0 || std::memcmp(a.points.data(), b.points.data(), a.size() * sizeof(Vec3)) == 0);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("liloc_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

/// Integrates the IMU stream from the first truth sample and returns the worst
/// position error against the truth over the whole log.
double imu_roundtrip_error(const sim::SimulatedLog& log, const sim::Trajectory& traj) {
  std::vector<ImuSample> imu;
  for (const auto& ev : log.events)
    if (const auto* e = std::get_if<ImuEvent>(&ev.payload)) imu.push_back(e->sample);
  const sim::TrajectoryState s0 = traj.at(imu.front().t);
  KinematicState x{Rotation3(s0.pose.rotation), s0.velocity, s0.pose.translation};
  double worst = 0.0;
  for (std::size_t i = 1; i < imu.size(); ++i) {
    const double dt = imu[i].t - imu[i - 1].t;
    const PreintegratedDelta d = integrate_midpoint(PreintegratedDelta{}, imu[i - 1], imu[i], dt);
    x = predict_pose(x, d, enu_gravity());
    worst = std::max(worst, (x.p - traj.at(imu[i].t).pose.translation).norm());
  }
  return worst;
}

}  // namespace

TEST(GenerateWorld, SameSeedIsBitwiseIdentical) {
  const PointCloud a = sim::generate_world(small_world(3));
  const PointCloud b = sim::generate_world(small_world(3));
  EXPECT_GT(a.size(), 1000u);
  EXPECT_TRUE(same_cloud(a, b));
  EXPECT_FALSE(same_cloud(a, sim::generate_world(small_world(4))));
}

TEST(GenerateWorld, ZeroDensityWithoutGroundIsEmptyAndWarns) {
  sim::WorldSpec w = small_world(1);
  w.density = 0.0;
  w.ground_spacing = 0.0;
  const sim::WorldResult r = sim::generate_world_detailed(w);
  EXPECT_TRUE(r.cloud.empty());
  ASSERT_EQ(r.warnings.size(), 1u);
}

TEST(GenerateWorld, StructureCountIsPoisson) {
  // Sum over many seeds is Poisson with mean n * d * A / 100.
  sim::WorldSpec w;
  w.extent = Vec3(200.0, 150.0, 20.0);
  w.density = 0.8;
  const double mean = w.density * w.extent.x() * w.extent.y() / 100.0;
  const int seeds = 200;
  double total = 0.0;
  for (int s = 0; s < seeds; ++s) {
    w.seed = 1000 + s;
    const double n = static_cast<double>(sim::draw_structures(w).drawn);
    EXPECT_LE(std::abs(n - mean), 5.0 * std::sqrt(mean)) << "seed " << w.seed;
    total += n;
  }
  EXPECT_LE(std::abs(total - seeds * mean), 3.0 * std::sqrt(seeds * mean));
}

TEST(GenerateWorld, BoundedAndNotCoplanar) {
  const sim::WorldSpec spec = small_world(9);
  const PointCloud c = sim::generate_world(spec);
  Vec3 mean = Vec3::Zero();
  for (const auto& p : c.points) {
    EXPECT_LE(std::abs(p.x()), 0.5 * spec.extent.x());
    EXPECT_LE(std::abs(p.y()), 0.5 * spec.extent.y());
    EXPECT_GE(p.z(), 0.0);
    EXPECT_LE(p.z(), spec.extent.z());
    mean += p;
  }
  mean /= static_cast<double>(c.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : c.points) cov += (p - mean) * (p - mean).transpose();
  cov /= static_cast<double>(c.size());
  const Vec3 ev = Eigen::SelfAdjointEigenSolver<Mat3>(cov).eigenvalues();
  EXPECT_GT(ev.minCoeff(), 0.1);
}

TEST(GenerateWorld, KeepClearCorridorHasNoStructures) {
  sim::WorldSpec w = small_world(5);
  w.density = 3.0;
  w.keep_clear = {Vec3(-50, 0, 0), Vec3(50, 0, 0)};
  w.clearance = 3.0;
  for (const auto& s : sim::draw_structures(w).kept) EXPECT_GE(std::abs(s.center.y()), s.footprint_radius() + 3.0 - 1e-9);
}

TEST(SimulateSensors, NoiseFreeImuIntegratesBackOnStraightPath) {
  const PointCloud world = sim::generate_world(small_world(2));
  const sim::Trajectory traj(straight(10.0, 4.0));
  const sim::SimulatedLog log = sim::simulate_sensors(world, traj, sim::NoiseModel{});
  EXPECT_LE(imu_roundtrip_error(log, traj), 1e-3);
}

TEST(SimulateSensors, NoiseFreeImuIntegratesBackOnCurvedPath) {
  // Ten seconds of the default loop, including a corner.
  const sim::Trajectory full(sim::make_loop(200.0, 1.5, 15.0, 5.0, 1.8, 5.0));
  const PointCloud world = sim::generate_world(small_world(2));
  sim::SimulatedLog log = sim::simulate_sensors(world, full, sim::NoiseModel{});
  std::vector<SensorEvent> window;
  for (const auto& ev : log.events)
    if (ev.t >= 10.0 && ev.t <= 20.0) window.push_back(ev);
  log.events = window;
  EXPECT_LE(imu_roundtrip_error(log, full), 1e-3);
}

TEST(SimulateSensors, ScanPointsBelongToTheWorld) {
  const PointCloud world = sim::generate_world(small_world(6));
  const KdTree index(world.points);
  const Pose pose{UnitQuaternion::from_axis_angle(Vec3::UnitZ(), 0.7), Vec3(3.0, -2.0, 1.8)};
  const sim::LidarModel lidar;
  std::mt19937_64 rng(1);

  const PointCloud exact = sim::simulate_scan(world, pose, lidar, 0.0, rng);
  ASSERT_GT(exact.size(), 500u);
  for (const auto& p : exact.points) {
    EXPECT_LE(p.norm(), lidar.range);
    EXPECT_LE(index.nearest(pose.apply(p)).distance, 1e-9);
  }

  const double sigma = 0.02;
  const PointCloud noisy = sim::simulate_scan(world, pose, lidar, sigma, rng);
  std::size_t within = 0;
  for (const auto& p : noisy.points) {
    const double d = index.nearest(pose.apply(p)).distance;
    within += d <= 3.0 * sigma ? 1 : 0;
    EXPECT_LE(d, 6.0 * sigma);
  }
  // Gaussian mass inside 3 sigma is 0.9973.
  EXPECT_GE(static_cast<double>(within), 0.99 * static_cast<double>(noisy.size()));
}

TEST(SimulateSensors, DropoutWindowSuppressesGnssAndInflatesNeighbours) {
  const PointCloud world = sim::generate_world(small_world(2));
  const sim::Trajectory traj(straight(60.0, 2.0));
  sim::NoiseModel noise = sim::NoiseModel::realistic();
  noise.dropouts = {{10.0, 40.0}};
  const sim::SimulatedLog log = sim::simulate_sensors(world, traj, noise);
  const double nominal = noise.gnss_position_sigma.x() * noise.gnss_position_sigma.x();
  std::size_t fixes = 0, mags = 0;
  for (const auto& ev : log.events) {
    if (std::holds_alternative<MagEvent>(ev.payload)) {
      ++mags;
      EXPECT_FALSE(ev.t >= 10.0 && ev.t <= 40.0);
    }
    const auto* g = std::get_if<GnssEvent>(&ev.payload);
    if (!g) continue;
    ++fixes;
    EXPECT_FALSE(ev.t >= 10.0 && ev.t <= 40.0) << ev.t;
    const bool adjacent = (ev.t >= 9.0 && ev.t < 10.0) || (ev.t > 40.0 && ev.t <= 41.0);
    EXPECT_DOUBLE_EQ(g->xi(0, 0), adjacent ? 100.0 * nominal : nominal) << ev.t;
  }
  EXPECT_EQ(fixes, 61u - 31u);
  EXPECT_EQ(mags, fixes);
}

TEST(SimulateSensors, StreamsAreTimeOrderedAtTheRequestedRates) {
  const PointCloud world = sim::generate_world(small_world(2));
  const sim::Trajectory traj(straight(5.0, 2.0));
  const sim::SimulatedLog log = sim::simulate_sensors(world, traj, sim::NoiseModel::realistic());
  std::size_t imu = 0, lidar = 0, gnss = 0;
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    if (i > 0) {
      EXPECT_GE(log.events[i].t, log.events[i - 1].t);
    }
    imu += std::holds_alternative<ImuEvent>(log.events[i].payload) ? 1 : 0;
    lidar += std::holds_alternative<LidarEvent>(log.events[i].payload) ? 1 : 0;
    gnss += std::holds_alternative<GnssEvent>(log.events[i].payload) ? 1 : 0;
  }
  EXPECT_EQ(imu, 1001u);
  EXPECT_EQ(lidar, 51u);
  EXPECT_EQ(gnss, 6u);
  EXPECT_EQ(log.lidar_frames, lidar);
  EXPECT_EQ(log.truth.size(), imu);
}

TEST(SimulateSensors, DropoutOutsideDurationIsRejected) {
  const PointCloud world = sim::generate_world(small_world(2));
  const sim::Trajectory traj(straight(5.0, 2.0));
  sim::NoiseModel noise;
  noise.dropouts = {{2.0, 9.0}};
  try {
    sim::simulate_sensors(world, traj, noise);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ConfigError);
  }
}

TEST(ComputeAte, Examples) {
  std::vector<OdomSample> truth, est;
  for (int i = 0; i < 10; ++i) truth.push_back(at(0.1 * i, Vec3(i, 2.0 * i, 0.5)));
  EXPECT_EQ(sim::compute_ate_rmse(truth, truth), 0.0);

  est = truth;
  for (auto& s : est) s.pose.translation.y() += 1.0;
  EXPECT_NEAR(sim::compute_ate_rmse(est, truth), 1.0, 1e-12);

  const std::vector<OdomSample> two_truth = {at(0.0, Vec3::Zero()), at(1.0, Vec3::Zero())};
  const std::vector<OdomSample> two_est = {at(0.0, Vec3(1, 0, 0)), at(1.0, Vec3(0, 0, 2))};
  EXPECT_NEAR(sim::compute_ate_rmse(two_est, two_truth), 1.5811388300841898, 1e-9);
  EXPECT_NEAR(sim::compute_ate_rmse(two_est, two_truth, 0.02, true), std::sqrt(0.5), 1e-12);
}

TEST(ComputeAte, AssociatesByNearestTimeWithinMaxDt) {
  const std::vector<OdomSample> truth = {at(0.0, Vec3::Zero()), at(0.01, Vec3(5, 0, 0))};
  // 0.004 is nearest to 0.0; 0.5 is farther than max_dt from both and ignored.
  const std::vector<OdomSample> est = {at(0.004, Vec3(0, 3, 0)), at(0.5, Vec3(100, 0, 0))};
  EXPECT_NEAR(sim::compute_ate_rmse(est, truth), 3.0, 1e-12);
  try {
    sim::compute_ate_rmse({at(0.5, Vec3::Zero())}, truth);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoAssociations);
  }
}

TEST(EventLogFile, RoundTripPreservesRecords) {
  TempDir dir("log");
  const PointCloud world = sim::generate_world(small_world(2));
  const sim::Trajectory traj(straight(2.0, 2.0));
  const sim::SimulatedLog log = sim::simulate_sensors(world, traj, sim::NoiseModel::realistic());
  const std::string path = (dir.path / "log.txt").string();
  sim::write_event_log(path, log.events);
  const sim::EventLog back = sim::read_event_log(path);
  ASSERT_EQ(back.events.size(), log.events.size());
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    const auto& a = log.events[i];
    const auto& b = back.events[i];
    ASSERT_EQ(a.t, b.t);
    ASSERT_EQ(a.payload.index(), b.payload.index()) << i;
    if (const auto* g = std::get_if<GnssEvent>(&a.payload)) {
      const auto& h = std::get<GnssEvent>(b.payload);
      EXPECT_EQ(g->position, h.position);
      EXPECT_EQ(g->velocity, h.velocity);
      EXPECT_EQ(g->xi, h.xi);
    } else if (const auto* m = std::get_if<ImuEvent>(&a.payload)) {
      EXPECT_EQ(m->sample.gyro, std::get<ImuEvent>(b.payload).sample.gyro);
      EXPECT_EQ(m->sample.accel, std::get<ImuEvent>(b.payload).sample.accel);
    } else if (const auto* l = std::get_if<LidarEvent>(&a.payload)) {
      const auto& r = std::get<LidarEvent>(b.payload);
      EXPECT_EQ(l->ref, r.ref);
      // point files keep micrometers
      const PointCloud loaded = *sim::load_scan(back, r.ref);
      ASSERT_EQ(loaded.size(), l->scan->size());
      for (std::size_t k = 0; k < loaded.size(); ++k)
        EXPECT_LE((loaded.points[k] - l->scan->points[k]).cwiseAbs().maxCoeff(), 5e-7 + 1e-12);
    } else if (const auto* t = std::get_if<TruthEvent>(&a.payload)) {
      EXPECT_EQ(t->pose.translation, std::get<TruthEvent>(b.payload).pose.translation);
    }
  }
}

TEST(EventLogFile, RejectsBadRecords) {
  TempDir dir("badlog");
  auto expect_parse_error = [&](const std::string& body) {
    const fs::path p = dir.path / "log.txt";
    std::ofstream(p) << body;
    try {
      sim::read_event_log(p.string());
      ADD_FAILURE() << body;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::ParseError) << body;
    }
  };
  expect_parse_error("0.0 IMU 1 2 3\n");
  expect_parse_error("1.0 MAG 0\n0.5 MAG 0\n");
  expect_parse_error("0.0 LIDAR scans/missing.txt\n");
  expect_parse_error("0.0 SONAR 1\n");
}

TEST(TrajectoryFile, RoundTripKeepsFullPrecision) {
  TempDir dir("traj");
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 10.0);
  std::vector<OdomSample> traj;
  for (int i = 0; i < 50; ++i) {
    const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
    const UnitQuaternion q = UnitQuaternion::from_axis_angle(axis, 0.1 * n(rng));
    traj.push_back(at(0.1 * i + 1e-7 * n(rng), Vec3(n(rng), n(rng), n(rng)), q));
  }
  const std::string path = (dir.path / "t.txt").string();
  sim::write_trajectory(path, traj);
  const auto back = sim::read_trajectory(path);
  ASSERT_EQ(back.size(), traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    EXPECT_EQ(back[i].t, traj[i].t);
    EXPECT_EQ(back[i].pose.translation, traj[i].pose.translation);
    // the reader renormalizes, which may move the last bit
    const auto& a = back[i].pose.rotation;
    const auto& b = traj[i].pose.rotation;
    EXPECT_NEAR(a.w(), b.w(), 1e-15);
    EXPECT_NEAR(a.x(), b.x(), 1e-15);
    EXPECT_NEAR(a.y(), b.y(), 1e-15);
    EXPECT_NEAR(a.z(), b.z(), 1e-15);
  }
}

TEST(ScenarioFiles, ParseKnownKeysAndRejectUnknownOnes) {
  std::istringstream scen("extent = 100 80 15\ndensity = 0.5\nworld_seed = 7\nloop_perimeter = 150\nloop_speed = 4\n");
  const sim::ScenarioSpec s = sim::parse_scenario(parse_key_values(scen));
  EXPECT_EQ(s.world.extent, Vec3(100, 80, 15));
  EXPECT_EQ(s.world.density, 0.5);
  EXPECT_EQ(s.world.seed, 7u);
  ASSERT_TRUE(s.loop.has_value());
  EXPECT_EQ(s.loop->perimeter, 150.0);
  EXPECT_NEAR(s.trajectory().duration(), 150.0 / 4.0, 1e-9);

  std::istringstream noise("lidar_sigma = 0.03\ndropout = 5 8\ndropout = 12 13\nseed = 11\n");
  const sim::NoiseModel n = sim::parse_noise(parse_key_values(noise));
  EXPECT_EQ(n.lidar_sigma, 0.03);
  ASSERT_EQ(n.dropouts.size(), 2u);
  EXPECT_EQ(n.dropouts[1].first, 12.0);
  EXPECT_EQ(n.seed, 11u);

  for (const char* bad : {"lidar_sigma = 0.03\nlidar_sgima = 1\n", "dropout = 5\n"}) {
    std::istringstream in(bad);
    try {
      sim::parse_noise(parse_key_values(in));
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::ParseError) << bad;
    }
  }
}

namespace {

struct ReplayFixture {
  sim::ScenarioSpec spec;
  std::unique_ptr<GlobalMap> map;
  sim::SimulatedLog log;
};

const ReplayFixture& replay_fixture() {
  static const ReplayFixture f = [] {
    ReplayFixture out;
    out.spec = sim::default_scenario();
    out.spec.world.extent = Vec3(140.0, 110.0, 20.0);
    out.spec.loop->perimeter = 160.0;
    const PointCloud world = sim::generate_world(out.spec.world_with_corridor());
    out.map = std::make_unique<GlobalMap>(world);
    out.log = sim::simulate_sensors(world, sim::Trajectory(out.spec.trajectory()), sim::NoiseModel::realistic(),
                                    out.spec.rates, out.spec.lidar);
    return out;
  }();
  return f;
}

}  // namespace

TEST(Replay, EmptyLogGivesEmptyTrajectory) {
  const GlobalMap map(sim::generate_world(small_world(2)));
  const sim::ReplayResult r = sim::replay(std::vector<SensorEvent>{}, map, PipelineConfig{});
  EXPECT_TRUE(r.trajectory.empty());
  EXPECT_EQ(r.state.mode, Mode::Initializing);
}

TEST(Replay, OneOutputPerTrackedFrameAndDeterministic) {
  const auto& f = replay_fixture();
  const sim::ReplayResult a = sim::replay(f.log.events, *f.map, PipelineConfig{});
  ASSERT_EQ(a.state.transitions.size(), 1u);
  const double tracking_from = a.state.transitions[0].t;
  std::size_t tracked = 0;
  for (const auto& ev : f.log.events)
    tracked += std::holds_alternative<LidarEvent>(ev.payload) && ev.t > tracking_from ? 1 : 0;
  EXPECT_EQ(a.trajectory.size(), tracked);

  TempDir dir("replay");
  const sim::ReplayResult b = sim::replay(f.log.events, *f.map, PipelineConfig{});
  sim::write_trajectory((dir.path / "a.txt").string(), a.trajectory);
  sim::write_trajectory((dir.path / "b.txt").string(), b.trajectory);
  EXPECT_EQ(slurp(dir.path / "a.txt"), slurp(dir.path / "b.txt"));
}

TEST(Replay, FromFilesMatchesInMemory) {
  const auto& f = replay_fixture();
  TempDir dir("replayfiles");
  const std::string path = (dir.path / "log.txt").string();
  sim::write_event_log(path, f.log.events);
  const sim::ReplayResult mem = sim::replay(f.log.events, *f.map, PipelineConfig{});
  const sim::ReplayResult disk = sim::replay(sim::read_event_log(path), *f.map, PipelineConfig{});
  ASSERT_EQ(mem.trajectory.size(), disk.trajectory.size());
  // Scans on disk are quantized to 1 um, so agreement is close but not bitwise.
  double worst = 0.0;
  for (std::size_t i = 0; i < mem.trajectory.size(); ++i)
    worst = std::max(worst, (mem.trajectory[i].pose.translation - disk.trajectory[i].pose.translation).norm());
  std::printf("worst in-memory vs on-disk replay difference %.3g m\n", worst);
  EXPECT_LE(worst, 1e-3);
}
