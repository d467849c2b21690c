#include "miliom/keyframes.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "miliom/spatial.hpp"

namespace miliom {

bool KeyframeStore::consider_admit(int frame_index, const RigidTransform& pose,
                                   const CfcCloud& cloud) {
  if (frame_index <= last_considered_) return false;
  last_considered_ = frame_index;
  if (cloud.frame != CloudFrame::kBody)
    throw std::invalid_argument("keyframe cloud must be in the body frame");

  auto [positions, orientations] = knn_key_poses(pose.t, cfg_.admission_knn);
  bool far_enough = true;
  for (const auto& p : positions) far_enough &= (pose.t - p).norm() > cfg_.min_distance;
  bool turned_enough = true;
  for (const auto& q : orientations) turned_enough &= pose.q.angle_to(q) > cfg_.min_angle;
  if (!far_enough && !turned_enough) return false;

  frames_.push_back({next_id_++, frame_index, pose, cloud});
  if (cfg_.max_size > 0 && frames_.size() > cfg_.max_size) {
    const Vec3 anchor = pose.t;
    auto victim = std::max_element(frames_.begin(), frames_.end(),
                                   [&](const Keyframe& a, const Keyframe& b) {
                                     return (a.pose.t - anchor).norm() < (b.pose.t - anchor).norm();
                                   });
    frames_.erase(victim);
  }
  return true;
}

std::vector<int> KeyframeStore::knn_indices(const Vec3& p, int k) const {
  std::vector<int> idx(frames_.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto closer = [&](int a, int b) {
    double da = (frames_[a].pose.t - p).squaredNorm();
    double db = (frames_[b].pose.t - p).squaredNorm();
    return da != db ? da < db : a < b;
  };
  k = std::min<int>(std::max(k, 0), static_cast<int>(idx.size()));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), closer);
  idx.resize(k);
  return idx;
}

std::pair<std::vector<Vec3>, std::vector<UnitQuaternion>> KeyframeStore::knn_key_poses(
    const Vec3& p, int k) const {
  std::vector<Vec3> positions;
  std::vector<UnitQuaternion> orientations;
  for (int i : knn_indices(p, k)) {
    positions.push_back(frames_[i].pose.t);
    orientations.push_back(frames_[i].pose.q);
  }
  return {std::move(positions), std::move(orientations)};
}

std::vector<MapPoint> KeyframeStore::export_global_map(double leaf) const {
  std::vector<MapPoint> map;
  if (leaf <= 0.0) {
    for (const auto& kf : frames_)
      for (const auto& f : kf.cloud.features) map.push_back({kf.pose(f.xyz), f.kind});
    return map;
  }
  std::vector<Vec3> planes, edges;
  for (const auto& kf : frames_) {
    for (const auto& f : kf.cloud.features)
      (f.kind == FeatureKind::kPlane ? planes : edges).push_back(kf.pose(f.xyz));
  }
  for (const auto& p : voxel_downsample(planes, leaf)) map.push_back({p, FeatureKind::kPlane});
  for (const auto& p : voxel_downsample(edges, leaf)) map.push_back({p, FeatureKind::kEdge});
  return map;
}

}  // namespace miliom
