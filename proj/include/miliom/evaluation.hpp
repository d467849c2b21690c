/// @file
/// Trajectory accuracy metrics: timestamp association, optional rigid
/// alignment, and absolute position and orientation error statistics.

#pragma once

#include <vector>

#include "miliom/dataset_io.hpp"
#include "miliom/geometry.hpp"

namespace miliom {

struct AteOptions {
  bool align = true;       // solve the best rigid fit before differencing
  double max_gap = 0.010;  // seconds; estimate-to-truth association window
};

struct AteResult {
  double rmse = 0.0;                 // meters
  double mean = 0.0;                 // meters
  double max = 0.0;                  // meters
  double orientation_rmse_deg = 0.0;
  double orientation_max_deg = 0.0;
  size_t pairs = 0;
  RigidTransform alignment;          // applied to the estimate
  std::vector<double> times;         // associated estimate timestamps
  std::vector<Vec3> per_axis_error;  // aligned estimate minus truth
};

/// Associates each estimate record with the nearest ground-truth record
/// within max_gap, optionally solves the least-squares rigid transform from
/// estimate to truth (rotation via SVD with a determinant guard, no scale),
/// and reports error statistics over the aligned pairs. Both inputs must be
/// time-sorted. Throws std::runtime_error when fewer than 10 pairs associate.
AteResult evaluate_ate(const std::vector<TrajectoryRecord>& estimate,
                       const std::vector<TrajectoryRecord>& ground_truth,
                       const AteOptions& options = {});

}  // namespace miliom
