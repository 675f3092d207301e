#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "liloc/errors.hpp"
#include "liloc/geometry.hpp"

namespace liloc {

/// Points in meters with optional per-point intensity (empty, or one per point).
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<double> intensity;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_intensity() const { return !intensity.empty(); }

  void reserve(std::size_t n) { points.reserve(n); }
  void push_back(const Vec3& p) { points.push_back(p); }
};

inline PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose) {
  PointCloud out;
  out.intensity = cloud.intensity;
  out.points.resize(cloud.size());
  const Mat3 r = pose.rotation.matrix();
  for (std::size_t i = 0; i < cloud.size(); ++i) out.points[i] = r * cloud.points[i] + pose.translation;
  return out;
}

struct AxisBox {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  bool valid() const { return (min.array() <= max.array()).all(); }
};

inline AxisBox bounds_of(std::span<const Vec3> pts) {
  AxisBox box;
  for (const auto& p : pts) box.extend(p);
  return box;
}

struct Neighbor {
  std::size_t index = 0;
  Vec3 point = Vec3::Zero();
  double distance = 0.0;
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

/// Static k-d tree over a copy of the input points. Exact nearest-neighbor and
/// radius queries; ties on distance resolve to the smallest point index so
/// results agree with a first-minimum exhaustive scan.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(std::span<const Vec3> pts, std::size_t leaf_size = 8)
      : points_(pts.begin(), pts.end()), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
    if (!points_.empty()) build(0, points_.size());
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const std::vector<Vec3>& points() const { return points_; }

  Neighbor nearest(const Vec3& q) const {
    if (points_.empty()) throw Error(Errc::EmptyIndex, "nearest-neighbor query on an empty index");
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    bool found = false;
    search_nearest(0, q, best, best_d2, found);
    return {best, points_[best], std::sqrt(best_d2)};
  }

  /// Indices of all points with distance strictly less than `radius`, ascending.
  std::vector<std::size_t> radius_search(const Vec3& q, double radius) const {
    std::vector<std::size_t> out;
    if (points_.empty() || !(radius > 0.0)) return out;
    search_radius(0, q, radius * radius, out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    std::uint32_t begin = 0, end = 0;  // range in order_
    std::int32_t left = -1, right = -1;
    int axis = -1;
    double split = 0.0;
    Vec3 lo, hi;  // bounding box of the subtree
  };

  std::int32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.emplace_back();
    AxisBox box;
    for (std::size_t i = begin; i < end; ++i) box.extend(points_[order_[i]]);
    {
      Node& n = nodes_[id];
      n.begin = static_cast<std::uint32_t>(begin);
      n.end = static_cast<std::uint32_t>(end);
      n.lo = box.min;
      n.hi = box.max;
    }
    if (end - begin <= leaf_size_) return id;

    int axis = 0;
    (box.max - box.min).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) {
                       const double va = points_[a][axis], vb = points_[b][axis];
                       return va < vb || (va == vb && a < b);
                     });
    const double split = points_[order_[mid]][axis];
    const std::int32_t l = build(begin, mid);
    const std::int32_t r = build(mid, end);
    Node& n = nodes_[id];
    n.axis = axis;
    n.split = split;
    n.left = l;
    n.right = r;
    return id;
  }

  static double box_distance2(const Node& n, const Vec3& q) {
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double v = q[k] < n.lo[k] ? n.lo[k] - q[k] : (q[k] > n.hi[k] ? q[k] - n.hi[k] : 0.0);
      d2 += v * v;
    }
    return d2;
  }

  void search_nearest(std::int32_t id, const Vec3& q, std::size_t& best, double& best_d2,
                      bool& found) const {
    const Node& n = nodes_[id];
    if (found && box_distance2(n, q) > best_d2) return;
    if (n.axis < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        const double d2 = squared_distance(points_[idx], q);
        if (!found || d2 < best_d2 || (d2 == best_d2 && idx < best)) {
          best = idx;
          best_d2 = d2;
          found = true;
        }
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    search_nearest(go_left ? n.left : n.right, q, best, best_d2, found);
    search_nearest(go_left ? n.right : n.left, q, best, best_d2, found);
  }

  void search_radius(std::int32_t id, const Vec3& q, double r2, std::vector<std::size_t>& out) const {
    const Node& n = nodes_[id];
    if (box_distance2(n, q) >= r2) return;
    if (n.axis < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        if (squared_distance(points_[idx], q) < r2) out.push_back(idx);
      }
      return;
    }
    search_radius(n.left, q, r2, out);
    search_radius(n.right, q, r2, out);
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_ = 8;
};

using SpatialIndex = KdTree;

inline Neighbor nearest_neighbor(const SpatialIndex& index, const Vec3& query) {
  return index.nearest(query);
}

}  // namespace liloc
