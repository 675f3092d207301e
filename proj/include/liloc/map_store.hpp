#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "liloc/errors.hpp"
#include "liloc/point_cloud.hpp"

namespace liloc {

/// Prior map: immutable after construction, safe for concurrent queries.
class GlobalMap {
 public:
  GlobalMap() = default;

  explicit GlobalMap(PointCloud cloud) : cloud_(std::move(cloud)) {
    if (cloud_.empty()) throw Error(Errc::EmptyMap, "map contains no points");
    index_ = KdTree(cloud_.points);
    bounds_ = bounds_of(cloud_.points);
  }

  const PointCloud& cloud() const { return cloud_; }
  const SpatialIndex& index() const { return index_; }
  const AxisBox& bounds() const { return bounds_; }
  std::size_t size() const { return cloud_.size(); }

 private:
  PointCloud cloud_;
  SpatialIndex index_;
  AxisBox bounds_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Splits on spaces/tabs and parses each token as a double. Returns false on a
/// malformed or non-finite token.
inline bool parse_doubles(std::string_view s, std::vector<double>& out) {
  out.clear();
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    if (i >= s.size()) break;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    double v = 0.0;
    const char* first = s.data() + i;
    const char* last = s.data() + j;
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) return false;
    out.push_back(v);
    i = j;
  }
  return true;
}

}  // namespace detail

/// Reads the ASCII point format: one `x y z [intensity]` per line, `#` comments
/// and blank lines skipped. Missing intensities on mixed files read as 0.
inline PointCloud read_point_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  PointCloud cloud;
  std::vector<double> vals;
  std::vector<std::size_t> with_intensity;
  std::vector<double> intensities;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view s = detail::trim(line);
    if (s.empty() || s.front() == '#') continue;
    if (!detail::parse_doubles(s, vals))
      throw ParseError(lineno, "non-numeric or non-finite field in '" + std::string(s) + "'");
    if (vals.size() != 3 && vals.size() != 4)
      throw ParseError(lineno, "expected 3 or 4 fields, got " + std::to_string(vals.size()));
    if (vals.size() == 4) {
      with_intensity.push_back(cloud.size());
      intensities.push_back(vals[3]);
    }
    cloud.points.emplace_back(vals[0], vals[1], vals[2]);
  }
  if (!with_intensity.empty()) {
    cloud.intensity.assign(cloud.size(), 0.0);
    for (std::size_t k = 0; k < with_intensity.size(); ++k) cloud.intensity[with_intensity[k]] = intensities[k];
  }
  return cloud;
}

inline void write_point_file(const std::string& path, const PointCloud& cloud) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(Errc::IoError, "cannot write " + path);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    if (cloud.has_intensity())
      std::fprintf(f, "%.6f %.6f %.6f %.4f\n", p.x(), p.y(), p.z(), cloud.intensity[i]);
    else
      std::fprintf(f, "%.6f %.6f %.6f\n", p.x(), p.y(), p.z());
  }
  std::fclose(f);
}

inline GlobalMap load_map(const std::string& path) {
  PointCloud cloud = read_point_file(path);
  if (cloud.empty()) throw Error(Errc::EmptyMap, path + " contains no points");
  return GlobalMap(std::move(cloud));
}

/// Map points with Euclidean distance to `center` strictly below `radius`.
inline PointCloud extract_local_region(const GlobalMap& map, const Vec3& center, double radius) {
  if (!(radius > 0.0)) throw Error(Errc::InvalidArgument, "region radius must be positive");
  PointCloud out;
  if (map.size() == 0) return out;
  const auto idx = map.index().radius_search(center, radius);
  out.points.reserve(idx.size());
  for (std::size_t i : idx) out.points.push_back(map.cloud().points[i]);
  if (map.cloud().has_intensity()) {
    out.intensity.reserve(idx.size());
    for (std::size_t i : idx) out.intensity.push_back(map.cloud().intensity[i]);
  }
  return out;
}

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 73856093ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 19349663ULL;
    h ^= static_cast<std::uint64_t>(k.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

inline VoxelKey voxel_of(const Vec3& p, double leaf) {
  return {static_cast<std::int64_t>(std::floor(p.x() / leaf)),
          static_cast<std::int64_t>(std::floor(p.y() / leaf)),
          static_cast<std::int64_t>(std::floor(p.z() / leaf))};
}

/// One centroid per occupied voxel, in order of first occupancy.
inline PointCloud voxel_downsample(const PointCloud& cloud, double leaf) {
  if (!(leaf > 0.0)) throw Error(Errc::InvalidArgument, "voxel leaf must be positive");
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> slot;
  slot.reserve(cloud.size());
  std::vector<Vec3> sum;
  std::vector<double> isum;
  std::vector<std::size_t> count;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto [it, inserted] = slot.try_emplace(voxel_of(cloud.points[i], leaf), sum.size());
    if (inserted) {
      sum.push_back(Vec3::Zero());
      count.push_back(0);
      if (cloud.has_intensity()) isum.push_back(0.0);
    }
    sum[it->second] += cloud.points[i];
    ++count[it->second];
    if (cloud.has_intensity()) isum[it->second] += cloud.intensity[i];
  }
  PointCloud out;
  out.points.resize(sum.size());
  for (std::size_t k = 0; k < sum.size(); ++k) {
    // single-point voxels pass through bit-exactly
    out.points[k] = count[k] == 1 ? sum[k] : Vec3(sum[k] / static_cast<double>(count[k]));
  }
  if (cloud.has_intensity()) {
    out.intensity.resize(sum.size());
    for (std::size_t k = 0; k < sum.size(); ++k) out.intensity[k] = isum[k] / static_cast<double>(count[k]);
  }
  return out;
}

/// First point of each occupied voxel, in order of first occupancy. Unlike
/// voxel_downsample the survivors are original samples, so they stay on the
/// sampled surfaces.
inline PointCloud voxel_subsample(const PointCloud& cloud, double leaf) {
  if (!(leaf > 0.0)) throw Error(Errc::InvalidArgument, "voxel leaf must be positive");
  std::unordered_set<VoxelKey, VoxelKeyHash> seen;
  seen.reserve(cloud.size());
  PointCloud out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!seen.insert(voxel_of(cloud.points[i], leaf)).second) continue;
    out.points.push_back(cloud.points[i]);
    if (cloud.has_intensity()) out.intensity.push_back(cloud.intensity[i]);
  }
  return out;
}

}  // namespace liloc
