/// @file keyframes.hpp
/// Keyframe admission, key-pose KNN, and global-map accumulation.
#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "miliom/cloud.hpp"
#include "miliom/geometry.hpp"

namespace miliom {

struct KeyframeConfig {
  double min_distance = 1.0;            // meters to every admission neighbor
  double min_angle = M_PI / 18.0;       // radians to every admission neighbor
  int admission_knn = 10;
  size_t max_size = 0;                  // 0 keeps the store unbounded
};

struct Keyframe {
  int id = 0;
  int frame_index = 0;
  RigidTransform pose;   // key pose in the local frame
  CfcCloud cloud;        // key pointcloud, body frame
};

/// Append-only store of key poses and their pointclouds. Admission follows the
/// middle-of-window rule: a candidate enters when it clears the distance
/// threshold against all of its K nearest key poses, or the angle threshold
/// against all of them.
class KeyframeStore {
 public:
  explicit KeyframeStore(KeyframeConfig cfg = {}) : cfg_(cfg) {}

  /// Evaluates the candidate once per frame index; repeats are ignored.
  /// Returns true when the candidate was admitted.
  bool consider_admit(int frame_index, const RigidTransform& pose, const CfcCloud& cloud);

  /// K nearest key poses by position, paired positions and orientations.
  std::pair<std::vector<Vec3>, std::vector<UnitQuaternion>> knn_key_poses(const Vec3& p,
                                                                          int k) const;
  /// Store indices of the K nearest key poses by position.
  std::vector<int> knn_indices(const Vec3& p, int k) const;

  /// Every key pointcloud placed into the local frame by its key pose.
  /// leaf > 0 downsamples per feature kind (plane centroids first).
  std::vector<MapPoint> export_global_map(double leaf = 0.0) const;

  size_t size() const { return frames_.size(); }
  bool empty() const { return frames_.empty(); }
  const Keyframe& at(size_t i) const { return frames_.at(i); }
  int last_considered_frame() const { return last_considered_; }

 private:
  KeyframeConfig cfg_;
  std::vector<Keyframe> frames_;
  int last_considered_ = -1;
  int next_id_ = 0;
};

}  // namespace miliom
