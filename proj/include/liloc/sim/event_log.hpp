#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "liloc/errors.hpp"
#include "liloc/events.hpp"
#include "liloc/fusion.hpp"
#include "liloc/map_store.hpp"

namespace liloc::sim {

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

/// Round-trip exact formatting for timestamps and measurements.
inline std::string num(double v) { return fmt("%.17g", v); }

}  // namespace detail

/// One record per line: `t TYPE fields...`. LIDAR records reference scan files
/// relative to the log's directory; scans are written alongside.
inline void write_event_log(const std::string& path, const std::vector<SensorEvent>& events) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(path).parent_path();
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  using detail::num;
  for (const auto& ev : events) {
    out << num(ev.t) << ' ';
    if (const auto* e = std::get_if<ImuEvent>(&ev.payload)) {
      out << "IMU";
      for (int k = 0; k < 3; ++k) out << ' ' << num(e->sample.gyro[k]);
      for (int k = 0; k < 3; ++k) out << ' ' << num(e->sample.accel[k]);
    } else if (const auto* g = std::get_if<GnssEvent>(&ev.payload)) {
      out << "GNSS";
      for (int k = 0; k < 3; ++k) out << ' ' << num(g->position[k]);
      for (int k = 0; k < 3; ++k) out << ' ' << num(g->velocity[k]);
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out << ' ' << num(g->xi(r, c));
    } else if (const auto* m = std::get_if<MagEvent>(&ev.payload)) {
      out << "MAG " << num(m->heading);
    } else if (const auto* l = std::get_if<LidarEvent>(&ev.payload)) {
      out << "LIDAR " << l->ref;
      if (l->scan) {
        const fs::path scan_path = dir / l->ref;
        fs::create_directories(scan_path.parent_path());
        write_point_file(scan_path.string(), *l->scan);
      }
    } else if (const auto* tr = std::get_if<TruthEvent>(&ev.payload)) {
      const auto& q = tr->pose.rotation;
      out << "TRUTH";
      for (int k = 0; k < 3; ++k) out << ' ' << num(tr->pose.translation[k]);
      out << ' ' << num(q.w()) << ' ' << num(q.x()) << ' ' << num(q.y()) << ' ' << num(q.z());
    }
    out << '\n';
  }
  if (!out) throw Error(Errc::IoError, "write failed for " + path);
}

struct EventLog {
  std::vector<SensorEvent> events;
  std::string directory;  // scan references resolve against this
};

/// Parses a log. Scan files are checked for existence but loaded lazily by
/// `load_scans` (or by replay on demand).
inline EventLog read_event_log(const std::string& path) {
  namespace fs = std::filesystem;
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  EventLog log;
  log.directory = fs::path(path).parent_path().string();
  std::string raw;
  std::size_t line = 0;
  std::vector<double> v;
  double prev_t = -std::numeric_limits<double>::infinity();
  while (std::getline(in, raw)) {
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ss(raw);
    std::string ts, type;
    if (!(ss >> ts)) continue;
    if (!(ss >> type)) throw ParseError(line, "missing record type");
    std::string rest;
    std::getline(ss, rest);
    double t = 0.0;
    if (!liloc::detail::parse_doubles(ts, v) || v.size() != 1) throw ParseError(line, "bad timestamp");
    t = v[0];
    if (t < prev_t) throw ParseError(line, "timestamps must be nondecreasing");
    prev_t = t;
    SensorEvent ev;
    ev.t = t;
    auto numbers = [&](std::size_t n) {
      if (!liloc::detail::parse_doubles(rest, v) || v.size() != n)
        throw ParseError(line, type + " record expects " + std::to_string(n) + " numbers");
    };
    if (type == "IMU") {
      numbers(6);
      ev.payload = ImuEvent{{t, Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])}};
    } else if (type == "GNSS") {
      numbers(15);
      GnssEvent g;
      g.position = Vec3(v[0], v[1], v[2]);
      g.velocity = Vec3(v[3], v[4], v[5]);
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) g.xi(r, c) = v[6 + 3 * r + c];
      ev.payload = g;
    } else if (type == "MAG") {
      numbers(1);
      ev.payload = MagEvent{v[0]};
    } else if (type == "LIDAR") {
      const std::string ref(liloc::detail::trim(rest));
      if (ref.empty()) throw ParseError(line, "LIDAR record without a scan reference");
      if (!fs::exists(fs::path(log.directory) / ref)) throw ParseError(line, "scan file not found: " + ref);
      ev.payload = LidarEvent{ref, nullptr};
    } else if (type == "TRUTH") {
      numbers(7);
      ev.payload = TruthEvent{{UnitQuaternion(v[3], v[4], v[5], v[6]), Vec3(v[0], v[1], v[2])}};
    } else {
      throw ParseError(line, "unknown record type '" + type + "'");
    }
    log.events.push_back(std::move(ev));
  }
  return log;
}

inline std::shared_ptr<const PointCloud> load_scan(const EventLog& log, const std::string& ref) {
  return std::make_shared<PointCloud>(read_point_file((std::filesystem::path(log.directory) / ref).string()));
}

inline std::vector<OdomSample> truth_from_events(const std::vector<SensorEvent>& events) {
  std::vector<OdomSample> out;
  for (const auto& ev : events)
    if (const auto* tr = std::get_if<TruthEvent>(&ev.payload)) out.push_back({ev.t, tr->pose, std::nullopt, OdomSource::Imu});
  return out;
}

}  // namespace liloc::sim
