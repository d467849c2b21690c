/// @file frontend.hpp
/// Per-sweep feature extraction, multi-lidar window merge, and deskew.
#pragma once

#include <vector>

#include "miliom/cloud.hpp"

namespace miliom {

struct FrontendConfig {
  int half_window = 5;            // smoothness window is +/- this many ring neighbors
  int sectors = 6;                // azimuthal sectors per ring
  int max_edges_per_sector = 2;
  int max_planes_per_sector = 4;
  double edge_threshold = 0.5;    // smoothness above this is an edge candidate
  double plane_threshold = 0.05;  // smoothness below this is a plane candidate
  bool reject_unreliable = true;  // occluded-boundary and parallel-beam filter
  double min_range = 0.5;
  double occlusion_gap = 0.3;     // adjacent-return gap flagging an occlusion, m
  double parallel_ratio = 0.0002; // squared neighbor gap over squared range
};

/// LOAM-style smoothness classification: per ring, per azimuthal sector,
/// highest-smoothness points become edges and lowest become planes.
FeatureCloud extract_features(const RawScan& scan, const FrontendConfig& cfg);

/// Merges every member cloud whose start lies in [window_start, window_end)
/// into one skewed combined cloud anchored at window_start. A cloud from
/// primary_lidar_id starting at window_start must be present.
ScfcCloud merge_scfc(const std::vector<FeatureCloud>& clouds, int primary_lidar_id,
                     double window_start, double window_end);

/// Motion-compensates every point to the body frame at scfc.t_start. rel is
/// the pose of the body at scfc.t_end expressed in the body at scfc.t_start.
CfcCloud deskew(const ScfcCloud& scfc, const RigidTransform& rel);

/// Re-expresses a body-frame combined cloud in the local frame L.
CfcCloud transform_to_local(const CfcCloud& cfc, const RigidTransform& pose);

}  // namespace miliom
