/// @file cloud.hpp
/// Point cloud containers shared by the frontend, matcher, and simulator.
#pragma once

#include <vector>

#include "miliom/geometry.hpp"

namespace miliom {

enum class FeatureKind { kEdge, kPlane };

struct FeaturePoint {
  Vec3 xyz = Vec3::Zero();
  FeatureKind kind = FeatureKind::kPlane;
  double dt = 0.0;  // seconds from the owning cloud's start time
  int source_lidar = 0;
};

/// One raw sweep from one lidar, points in the body frame at their fire time.
struct RawScan {
  int lidar_id = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  int channel_count = 0;

  struct Point {
    int ring = 0;
    double dt = 0.0;
    Vec3 xyz = Vec3::Zero();
  };
  std::vector<Point> points;  // grouped by ring, ordered by dt within a ring
};

/// Features extracted from a single sweep, dt relative to the sweep start.
struct FeatureCloud {
  int lidar_id = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  std::vector<FeaturePoint> features;
};

/// Skewed combined feature cloud: the union of all member clouds whose start
/// times fall inside one primary-sweep window, dt rebased to the window start.
struct ScfcCloud {
  double t_start = 0.0;
  double t_end = 0.0;
  std::vector<FeaturePoint> features;
};

enum class CloudFrame { kBody, kLocal };

/// One point of an exported map, tagged with the feature class it came from.
struct MapPoint {
  Vec3 xyz = Vec3::Zero();
  FeatureKind kind = FeatureKind::kPlane;
};

/// Deskewed combined feature cloud, every point expressed at one instant.
struct CfcCloud {
  CloudFrame frame = CloudFrame::kBody;
  double t = 0.0;
  int clamped_points = 0;  // deskew interpolation fractions clipped to [0, 1]
  std::vector<FeaturePoint> features;
};

}  // namespace miliom
