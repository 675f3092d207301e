#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>

#include "liloc/map_store.hpp"
#include "liloc/pipeline.hpp"
#include "liloc/sim/evaluate.hpp"
#include "liloc/sim/event_log.hpp"
#include "liloc/sim/replay.hpp"
#include "liloc/sim/scenario.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitRelocalization = 2;

using namespace liloc;

int make_map(const std::string& spec_path, const std::string& out) {
  const sim::ScenarioSpec spec = sim::load_scenario(spec_path);
  const sim::WorldResult world = sim::generate_world_detailed(spec.world_with_corridor());
  for (const auto& w : world.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  write_point_file(out, world.cloud);
  std::fprintf(stderr, "wrote %zu points (%zu structures) to %s\n", world.cloud.size(), world.structures.size(),
               out.c_str());
  return kExitOk;
}

int simulate(const std::string& spec_path, const std::string& noise_path, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const sim::ScenarioSpec spec = sim::load_scenario(spec_path);
  const sim::NoiseModel noise = sim::load_noise(noise_path);
  const sim::WorldResult world = sim::generate_world_detailed(spec.world_with_corridor());
  for (const auto& w : world.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const sim::Trajectory traj(spec.trajectory());
  const sim::SimulatedLog log = sim::simulate_sensors(world.cloud, traj, noise, spec.rates, spec.lidar);
  fs::create_directories(out_dir);
  sim::write_event_log((fs::path(out_dir) / "events.log").string(), log.events);
  sim::write_trajectory((fs::path(out_dir) / "truth.txt").string(), log.truth);
  std::fprintf(stderr, "wrote %zu events (%zu scans) to %s\n", log.events.size(), log.lidar_frames, out_dir.c_str());
  return kExitOk;
}

int localize(const std::string& map_path, const std::string& log_path, const std::string& cfg_path,
             const std::string& out) {
  const PipelineConfig cfg = cfg_path.empty() ? PipelineConfig{} : load_pipeline_config(cfg_path);
  const GlobalMap map = load_map(map_path);
  const sim::EventLog log = sim::read_event_log(log_path);
  const sim::ReplayResult r = sim::replay(log, map, cfg);
  sim::write_trajectory(out, r.trajectory);
  const auto& st = r.state.stats;
  std::fprintf(stderr, "%zu poses, %zu scans, %zu registration failures, %zu relocalizations, final mode %s\n",
               r.trajectory.size(), st.lidar_frames, st.registration_failures, st.relocalizations,
               mode_name(r.state.mode));
  if (r.state.last_relocalization_failed && r.state.mode != Mode::Tracking) {
    std::fprintf(stderr, "error: relocalization failed and tracking never resumed\n");
    return kExitRelocalization;
  }
  return kExitOk;
}

int evaluate(const std::string& est, const std::string& truth, double max_dt, bool xy_only) {
  const double rmse =
      sim::compute_ate_rmse(sim::read_trajectory(est), sim::read_trajectory(truth), max_dt, xy_only);
  std::printf("%.6f\n", rmse);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Map-based LIDAR/IMU/GNSS localization"};
  app.require_subcommand(1);

  std::string spec, noise, out, map, log, config, est, truth;
  double max_dt = 0.02;
  bool xy_only = false;

  auto* mm = app.add_subcommand("make-map", "generate a synthetic prior map");
  mm->add_option("--spec", spec, "scenario spec file")->required();
  mm->add_option("--out", out, "output map file")->required();

  auto* sm = app.add_subcommand("simulate", "simulate sensor logs along the scenario path");
  sm->add_option("--spec", spec, "scenario spec file")->required();
  sm->add_option("--noise", noise, "noise model file")->required();
  sm->add_option("--out", out, "output directory")->required();

  auto* lo = app.add_subcommand("localize", "replay a log against a prior map");
  lo->add_option("--map", map, "prior map file")->required();
  lo->add_option("--log", log, "event log")->required();
  lo->add_option("--config", config, "pipeline configuration (defaults when omitted)");
  lo->add_option("--out", out, "output trajectory")->required();

  auto* ev = app.add_subcommand("evaluate", "translation RMSE against ground truth");
  ev->add_option("--est", est, "estimated trajectory")->required();
  ev->add_option("--truth", truth, "ground-truth trajectory")->required();
  ev->add_option("--max-dt", max_dt, "association window in seconds")->capture_default_str();
  ev->add_flag("--xy-only", xy_only, "ignore the vertical axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*mm) return make_map(spec, out);
    if (*sm) return simulate(spec, noise, out);
    if (*lo) return localize(map, log, config, out);
    if (*ev) return evaluate(est, truth, max_dt, xy_only);
  } catch (const liloc::RelocalizationFailed& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRelocalization;
  } catch (const liloc::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  }
  return kExitInput;
}
