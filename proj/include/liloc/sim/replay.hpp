#pragma once

#include <string>
#include <vector>

#include "liloc/errors.hpp"
#include "liloc/pipeline.hpp"
#include "liloc/sim/event_log.hpp"

namespace liloc::sim {

struct ReplayResult {
  std::vector<OdomSample> trajectory;
  PipelineState state;
};

/// Feeds every event through a fresh pipeline in order and collects the
/// emitted poses. Scans referenced but not loaded are read from the log's
/// directory when their event comes up and released afterwards.
inline ReplayResult replay(const EventLog& log, const GlobalMap& map, const PipelineConfig& cfg) {
  Pipeline pipeline(map, cfg);
  ReplayResult out;
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    const SensorEvent& ev = log.events[i];
    try {
      std::optional<OdomSample> s;
      const auto* lidar = std::get_if<LidarEvent>(&ev.payload);
      if (lidar && !lidar->scan) {
        SensorEvent loaded{ev.t, LidarEvent{lidar->ref, load_scan(log, lidar->ref)}};
        s = pipeline.step(loaded);
      } else {
        s = pipeline.step(ev);
      }
      if (s) out.trajectory.push_back(*s);
    } catch (const Error& e) {
      char where[96];
      std::snprintf(where, sizeof(where), "event %zu (t=%.6f): ", i, ev.t);
      throw Error(e.code(), where + std::string(e.what()));
    }
  }
  out.state = pipeline.state();
  return out;
}

inline ReplayResult replay(const std::vector<SensorEvent>& events, const GlobalMap& map, const PipelineConfig& cfg) {
  return replay(EventLog{events, "."}, map, cfg);
}

}  // namespace liloc::sim
