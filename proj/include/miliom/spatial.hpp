/// @file spatial.hpp
/// Exact k-nearest-neighbor search and voxel-grid downsampling.
#pragma once

#include <vector>

#include "miliom/geometry.hpp"

namespace miliom {

/// Static kd-tree over 3D points. Queries return exactly the brute-force
/// result: neighbors ordered by distance, ties broken by ascending index.
class KdTree3 {
 public:
  KdTree3() = default;
  explicit KdTree3(std::vector<Vec3> points);

  /// Indices of the up-to-k nearest points within max_radius of the query.
  std::vector<int> knn(const Vec3& query, int k, double max_radius) const;

  bool empty() const { return pts_.empty(); }
  size_t size() const { return pts_.size(); }
  const Vec3& point(int i) const { return pts_[i]; }

 private:
  struct Node {
    int index = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end, int depth);
  void search(int node, const Vec3& query, int k, double max_r2,
              std::vector<std::pair<double, int>>& heap) const;

  std::vector<Vec3> pts_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Replaces each occupied voxel with the input point nearest its centroid, so
/// every output point lies on a measured surface. Ties keep the earlier input
/// point. Output voxel order matches first occupancy.
std::vector<Vec3> voxel_medoid_downsample(const std::vector<Vec3>& points, double leaf);

/// Replaces each occupied voxel with the centroid of its points. Output voxels
/// appear in first-seen input order.
std::vector<Vec3> voxel_downsample(const std::vector<Vec3>& points, double leaf);

}  // namespace miliom
