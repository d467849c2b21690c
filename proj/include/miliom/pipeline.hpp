/// @file
/// Streaming odometry pipeline. Time-ordered feeds of IMU samples and raw
/// sweeps come back out as optimized sliding-window states, an IMU-rate
/// trajectory, keyframes, and per-frame timing.

#pragma once

#include <deque>
#include <string>
#include <vector>

#include "miliom/config.hpp"
#include "miliom/dataset_io.hpp"
#include "miliom/estimator.hpp"
#include "miliom/keyframes.hpp"

namespace miliom {

struct FrameTiming {
  double t = 0.0;            // state timestamp
  double frontend_ms = 0.0;  // extraction through the first matching pass
  double backend_ms = 0.0;   // matching and solver rounds after the first pass
  double loop_ms = 0.0;      // full frame turnaround including extraction
};

/// One closed window: the optimized newest state plus solve diagnostics.
struct FrameOutput {
  int frame_index = 0;
  double t = 0.0;
  NavState state;
  bool keyframe_added = false;
  int lidar_matches = 0;  // final-round coefficients on the newest state
  OptimizeReport report;  // final solver round
  FrameTiming timing;
};

/// Sweep-window odometry over any number of lidars sharing one IMU.
///
/// Feeds must be time-ordered per stream: strictly increasing IMU timestamps,
/// non-decreasing sweep start times across all lidars. Raw sweeps are reduced
/// to feature clouds on arrival; a window closes once the next primary sweep
/// has arrived and the IMU stream covers the window's span, so the relative
/// feed order of the two streams is free.
///
/// Initialization assumes the platform rests until the first primary sweep:
/// the pre-sweep IMU history fixes the gravity direction and the gyro bias,
/// and the local frame is that first body frame with gravity along -z.
class Pipeline {
 public:
  Pipeline(const PipelineConfig& config, int primary_lidar_id);

  /// Any feed may close windows; completed frames come back in order.
  std::vector<FrameOutput> feed_imu(const ImuSample& sample);
  std::vector<FrameOutput> feed_scan(const RawScan& scan);

  /// Closes the final window, whose span is taken from the previous sweep
  /// period. Windows the IMU stream never covered are dropped. Further feeds
  /// are rejected.
  std::vector<FrameOutput> finish();

  /// Optimized state at each window start plus IMU-rate predictions between
  /// consecutive window starts.
  const std::vector<TrajectoryRecord>& trajectory() const { return trajectory_; }
  const KeyframeStore& keyframes() const { return keyframes_; }
  const std::vector<FrameTiming>& timings() const { return timings_; }

  bool initialized() const { return initialized_; }
  bool diverged() const { return diverged_; }
  int frames() const { return frame_count_; }

  /// Newest optimized state and its timestamp; frames() must be positive.
  NavState latest_state() const;
  double latest_time() const;

  /// Gauss-Newton Hessian of the most recent solve at its solution.
  Eigen::MatrixXd latest_hessian() const;

  /// Keyframe map once keyframes exist, otherwise the live window clouds at
  /// their current estimates. leaf > 0 downsamples per feature kind.
  std::vector<MapPoint> export_map(double leaf = 0.0) const;

 private:
  struct PendingCloud {
    FeatureCloud cloud;
    double extract_ms = 0.0;
  };

  std::vector<FrameOutput> drain();
  bool window_ready(double t_k, double t_next) const;
  void initialize(double t0);
  FrameOutput process_window(double t_k, double t_next);

  PipelineConfig cfg_;
  int primary_id_ = 0;
  Vec3 gravity_ = Vec3(0.0, 0.0, -9.81);

  std::vector<ImuSample> imu_;
  std::vector<PendingCloud> pending_;
  std::deque<double> primary_starts_;
  double last_scan_start_ = 0.0;
  double last_period_ = 0.0;
  bool any_scan_ = false;
  bool initialized_ = false;
  bool finished_ = false;
  bool diverged_ = false;
  int frame_count_ = 0;
  NavState init_state_;

  SlidingWindow window_;
  KeyframeStore keyframes_;
  // Local-frame clouds of the earliest frames, poses frozen when their windows
  // closed; they seed the map until enough keyframes exist. bootstrap_frames_
  // holds each cloud's frame index so a frame admitted as a keyframe can be
  // dropped here rather than appear in the map twice.
  std::vector<CfcCloud> bootstrap_;
  std::vector<int> bootstrap_frames_;
  std::vector<TrajectoryRecord> trajectory_;
  std::vector<FrameTiming> timings_;
  JointProblem last_problem_;
  std::vector<WindowState> last_solution_;
};

struct RunSummary {
  int frames = 0;
  bool diverged = false;
  double mean_frontend_ms = 0.0;
  double mean_backend_ms = 0.0;
  double mean_loop_ms = 0.0;
  size_t trajectory_records = 0;
  size_t map_points = 0;
};

/// Replays a dataset through a Pipeline, reading sweeps one file at a time in
/// start-time order, and writes trajectory.txt, map.txt, and timing.csv into
/// out_dir.
RunSummary run_dataset(const DatasetManifest& manifest,
                       const PipelineConfig& config,
                       const std::string& out_dir);

}  // namespace miliom
