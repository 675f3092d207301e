#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "liloc/errors.hpp"
#include "liloc/fusion.hpp"
#include "liloc/map_store.hpp"
#include "liloc/sim/event_log.hpp"

namespace liloc::sim {

/// `t tx ty tz qw qx qy qz` per line, round-trip precision.
inline void write_trajectory(const std::string& path, const std::vector<OdomSample>& traj) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  using detail::num;
  for (const auto& s : traj) {
    const auto& q = s.pose.rotation;
    out << num(s.t) << ' ' << num(s.pose.translation.x()) << ' ' << num(s.pose.translation.y()) << ' '
        << num(s.pose.translation.z()) << ' ' << num(q.w()) << ' ' << num(q.x()) << ' ' << num(q.y()) << ' '
        << num(q.z()) << '\n';
  }
  if (!out) throw Error(Errc::IoError, "write failed for " + path);
}

inline std::vector<OdomSample> read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  std::vector<OdomSample> out;
  std::string raw;
  std::size_t line = 0;
  std::vector<double> v;
  while (std::getline(in, raw)) {
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    if (liloc::detail::trim(raw).empty()) continue;
    if (!liloc::detail::parse_doubles(raw, v) || v.size() != 8) throw ParseError(line, "expected 8 numbers");
    try {
      out.push_back({v[0], {UnitQuaternion(v[4], v[5], v[6], v[7]), Vec3(v[1], v[2], v[3])}, std::nullopt,
                     OdomSource::Fused});
    } catch (const Error& e) {
      throw ParseError(line, e.what());
    }
  }
  return out;
}

/// Translation RMSE over estimate samples paired with the truth sample nearest
/// in time, when that is within `max_dt`. No alignment is applied.
inline double compute_ate_rmse(const std::vector<OdomSample>& estimate, const std::vector<OdomSample>& truth,
                               double max_dt = 0.02, bool xy_only = false) {
  if (max_dt < 0.0) throw Error(Errc::InvalidArgument, "max_dt must be nonnegative");
  std::vector<std::size_t> order(truth.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return truth[a].t < truth[b].t; });
  double sum = 0.0;
  std::size_t pairs = 0;
  for (const auto& e : estimate) {
    const auto it = std::lower_bound(order.begin(), order.end(), e.t,
                                     [&](std::size_t i, double t) { return truth[i].t < t; });
    std::size_t best = order.size();
    double best_dt = std::numeric_limits<double>::infinity();
    for (auto c : {it, it == order.begin() ? it : it - 1}) {
      if (c == order.end()) continue;
      const double d = std::abs(truth[*c].t - e.t);
      if (d < best_dt) {
        best_dt = d;
        best = *c;
      }
    }
    if (best == order.size() || best_dt > max_dt) continue;
    Vec3 d = e.pose.translation - truth[best].pose.translation;
    if (xy_only) d.z() = 0.0;
    sum += d.squaredNorm();
    ++pairs;
  }
  if (pairs == 0) throw Error(Errc::NoAssociations, "no estimate sample has a truth sample within max_dt");
  return std::sqrt(sum / static_cast<double>(pairs));
}

}  // namespace liloc::sim
