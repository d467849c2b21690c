/// @file
/// Streaming pipeline: window assembly, deskew, joint optimization, keyframe
/// admission, and IMU-rate trajectory output.

#include "miliom/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "miliom/frontend.hpp"
#include "miliom/matching.hpp"
#include "number_format.hpp"

namespace miliom {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

/// Minimal rotation taking unit vector `from` onto unit vector `to`.
UnitQuaternion minimal_rotation(const Vec3& from, const Vec3& to) {
  const Vec3 axis = from.cross(to);
  const double s = axis.norm();
  const double c = from.dot(to);
  if (s < kSmallAngle) {
    if (c > 0.0) return UnitQuaternion::identity();
    // Antipodal: half turn about any axis orthogonal to `from`.
    Vec3 ortho = from.cross(Vec3::UnitX());
    if (ortho.squaredNorm() < 1e-6) ortho = from.cross(Vec3::UnitY());
    return exp_rotvec(ortho.normalized() * M_PI);
  }
  return exp_rotvec(axis / s * std::atan2(s, c));
}

}  // namespace

Pipeline::Pipeline(const PipelineConfig& config, int primary_lidar_id)
    : cfg_(config), primary_id_(primary_lidar_id) {
  if (cfg_.window_size < 2) {
    throw std::invalid_argument("window_size must be at least 2");
  }
  if (cfg_.matching_rounds < 1) {
    throw std::invalid_argument("matching_rounds must be at least 1");
  }
  if (cfg_.threads < 1) {
    throw std::invalid_argument("threads must be at least 1");
  }
  if (cfg_.matcher.map_keyframes < 1) {
    throw std::invalid_argument("matcher.map_keyframes must be at least 1");
  }
  gravity_ = Vec3(0.0, 0.0, -cfg_.gravity_magnitude);
  window_.capacity = static_cast<size_t>(cfg_.window_size);
  keyframes_ = KeyframeStore(cfg_.keyframes);
}

std::vector<FrameOutput> Pipeline::feed_imu(const ImuSample& sample) {
  if (finished_) throw std::logic_error("pipeline already finished");
  if (!imu_.empty() && sample.t <= imu_.back().t) {
    throw std::invalid_argument("imu timestamps must be strictly increasing");
  }
  imu_.push_back(sample);
  return drain();
}

std::vector<FrameOutput> Pipeline::feed_scan(const RawScan& scan) {
  if (finished_) throw std::logic_error("pipeline already finished");
  if (any_scan_ && scan.t_start < last_scan_start_) {
    throw std::invalid_argument("sweeps must arrive in start-time order");
  }
  any_scan_ = true;
  last_scan_start_ = scan.t_start;

  const auto start = Clock::now();
  PendingCloud pc;
  pc.cloud = extract_features(scan, cfg_.extraction);
  pc.extract_ms = ms_since(start);
  pending_.push_back(std::move(pc));
  if (scan.lidar_id == primary_id_) primary_starts_.push_back(scan.t_start);
  return drain();
}

std::vector<FrameOutput> Pipeline::finish() {
  if (finished_) return {};
  finished_ = true;
  std::vector<FrameOutput> out;
  if (primary_starts_.size() != 1) return out;

  const double t_k = primary_starts_[0];
  double span = last_period_;
  if (span <= 0.0) {
    // Single-window stream: the sweep's own extent stands in for the period.
    for (const PendingCloud& pc : pending_) {
      if (pc.cloud.lidar_id == primary_id_ && pc.cloud.t_start == t_k) {
        span = std::max(span, pc.cloud.t_end - pc.cloud.t_start);
      }
    }
  }
  if (span <= 0.0) return out;

  bool ready = false;
  try {
    ready = window_ready(t_k, t_k + span);
  } catch (const std::runtime_error&) {
    ready = false;
  }
  if (ready) {
    if (!initialized_) initialize(t_k);
    out.push_back(process_window(t_k, t_k + span));
    primary_starts_.pop_front();
  }
  return out;
}

std::vector<FrameOutput> Pipeline::drain() {
  std::vector<FrameOutput> out;
  while (primary_starts_.size() >= 2) {
    const double t_k = primary_starts_[0];
    const double t_next = primary_starts_[1];
    if (!window_ready(t_k, t_next)) break;
    if (!initialized_) initialize(t_k);
    out.push_back(process_window(t_k, t_next));
    last_period_ = t_next - t_k;
    primary_starts_.pop_front();
  }
  return out;
}

bool Pipeline::window_ready(double t_k, double t_next) const {
  if (imu_.empty()) return false;
  double t_end = t_k;
  for (const PendingCloud& pc : pending_) {
    if (pc.cloud.t_start >= t_k && pc.cloud.t_start < t_next) {
      t_end = std::max(t_end, pc.cloud.t_end);
    }
  }
  if (imu_.back().t < t_end - 1e-6) return false;
  const double t_base = window_.states.empty() ? t_k : window_.states.back().t;
  if (imu_.front().t > t_base + 1e-6) {
    throw std::runtime_error(
        "imu stream begins after the window it must cover");
  }
  return true;
}

void Pipeline::initialize(double t0) {
  Vec3 gyro_mean = Vec3::Zero();
  Vec3 accel_mean = Vec3::Zero();
  int count = 0;
  for (const ImuSample& s : imu_) {
    if (s.t > t0 + 1e-6) break;
    gyro_mean += s.gyro;
    accel_mean += s.accel;
    ++count;
  }
  if (count == 0) {
    throw std::runtime_error(
        "initialization needs imu history before the first sweep");
  }
  gyro_mean /= count;
  accel_mean /= count;
  if (accel_mean.norm() < 1e-3) {
    throw std::runtime_error(
        "rest accelerometer magnitude is implausibly small");
  }
  init_state_ = NavState{};
  init_state_.q = minimal_rotation(accel_mean.normalized(), Vec3::UnitZ());
  init_state_.bg = gyro_mean;
  initialized_ = true;
}

FrameOutput Pipeline::process_window(double t_k, double t_next) {
  const auto frame_start = Clock::now();

  // Collect and consume this window's member clouds; sweeps that started
  // before the window are stale and dropped.
  std::vector<FeatureCloud> members;
  double extract_ms = 0.0;
  {
    std::vector<PendingCloud> keep;
    for (PendingCloud& pc : pending_) {
      if (pc.cloud.t_start >= t_next) {
        keep.push_back(std::move(pc));
      } else if (pc.cloud.t_start >= t_k) {
        extract_ms += pc.extract_ms;
        members.push_back(std::move(pc.cloud));
      }
    }
    pending_ = std::move(keep);
  }

  const ScfcCloud scfc = merge_scfc(members, primary_id_, t_k, t_next);

  // Propagate across the sweep span for deskew and for the new state's seed.
  const bool first = window_.states.empty();
  const NavState base = first ? init_state_ : window_.states.back().x;
  const double t_base = first ? t_k : window_.states.back().t;
  const PropagatedStates prop =
      propagate(base, slice_imu(imu_, t_base, scfc.t_end), gravity_);
  CfcCloud cfc = deskew(scfc, prop.relative_transform(t_k, scfc.t_end));

  PreintObservation preint;
  NavState seed = base;
  if (!first) {
    preint = preintegrate(slice_imu(imu_, t_base, t_k), base.bg, base.ba,
                          cfg_.imu_noise);
    const TimedState at = prop.state_at(t_k);
    seed.q = at.q;
    seed.p = at.p;
    seed.v = at.v;
  }
  slide_window(window_, t_k, std::move(cfc), std::move(preint), seed);

  // The map must come from frozen poses only; rebuilding it from the states
  // under optimization would let the whole window drift coherently. The first
  // frame seeds the bootstrap at its seed pose, which defines the local frame.
  if (first) {
    bootstrap_.push_back(transform_to_local(
        window_.clouds[0], RigidTransform{seed.q, seed.p}));
    bootstrap_frames_.push_back(frame_count_);
  }

  // Matching and solving rounds; associations refresh at the updated
  // estimates against one fixed map, since every map source is frozen.
  double frontend_ms = extract_ms;
  auto segment_start = frame_start;
  OptimizeReport report;
  std::vector<FmmSet> fmm;
  const size_t n = window_.states.size();
  const LocalMap map = assemble_local_map(
      keyframes_, window_.states.back().x.p, bootstrap_, cfg_.matcher);
  for (int round = 0; round < cfg_.matching_rounds; ++round) {
    std::vector<RigidTransform> poses(n);
    std::vector<CfcCloud> local(n);
    for (size_t i = 0; i < n; ++i) {
      poses[i] =
          RigidTransform{window_.states[i].x.q, window_.states[i].x.p};
      local[i] = transform_to_local(window_.clouds[i], poses[i]);
    }

    fmm = fmm_coefficients_parallel(local, map, poses, cfg_.matcher,
                                    cfg_.threads);
    if (round == 0) {
      frontend_ms += ms_since(segment_start);
      segment_start = Clock::now();
    }

    JointProblem problem = build_problem(window_, fmm, gravity_, cfg_.solver);
    report = optimize(problem, window_, cfg_.solver);
    if (round + 1 == cfg_.matching_rounds) last_problem_ = std::move(problem);
  }
  last_solution_ = window_.states;
  if (std::getenv("MILIOM_DUMP")) {
    std::vector<double> per;
    evaluate_cost(last_problem_, window_.states, &per);
    double imu_cost = 0.0, lidar_cost = 0.0;
    const size_t ni = last_problem_.imu_factors.size();
    for (size_t i = 0; i < per.size(); ++i) {
      (i < ni ? imu_cost : lidar_cost) += per[i];
    }
    struct W {
      double r;
      int state;
      Vec3 pl;
      Vec3 nh;
    };
    std::vector<W> ws;
    for (const LidarFactorTerm& lt : last_problem_.lidar_factors) {
      const WindowState& s = window_.states[static_cast<size_t>(lt.state)];
      const Vec3 pl = s.x.q.rotate(lt.coeff.f) + s.x.p;
      const double r = lt.coeff.n.dot(pl) + lt.coeff.c;
      ws.push_back({std::abs(r), lt.state, pl, lt.coeff.n.normalized()});
    }
    const size_t top = std::min<size_t>(8, ws.size());
    std::partial_sort(ws.begin(), ws.begin() + static_cast<ptrdiff_t>(top),
                      ws.end(), [](const W& a, const W& b) { return a.r > b.r; });
    std::printf("  DUMP frame %d cost imu=%.3e lidar=%.3e\n", frame_count_,
                imu_cost, lidar_cost);
    for (size_t i = 0; i < top; ++i) {
      std::printf(
          "    |r|=%.4f st=%d pl=(%6.2f %6.2f %6.2f) nh=(%5.2f %5.2f %5.2f)\n",
          ws[i].r, ws[i].state, ws[i].pl.x(), ws[i].pl.y(), ws[i].pl.z(),
          ws[i].nh.x(), ws[i].nh.y(), ws[i].nh.z());
    }
  }
  const NavState newest = window_.states.back().x;
  if (report.aborted_non_finite || !newest.p.allFinite() ||
      !newest.v.allFinite()) {
    diverged_ = true;
  }

  // Keyframe candidacy: middle of a full window, considered once per frame.
  bool kf_added = false;
  if (window_.full()) {
    const size_t m = n / 2;
    const int candidate =
        frame_count_ - static_cast<int>(n - 1) + static_cast<int>(m);
    const WindowState& ws = window_.states[m];
    kf_added = keyframes_.consider_admit(
        candidate, RigidTransform{ws.x.q, ws.x.p}, window_.clouds[m]);
    // An admitted frame's cloud now lives in the store; the bootstrap copy,
    // frozen at a slightly different pose, would duplicate it in the map.
    if (kf_added) {
      for (size_t i = 0; i < bootstrap_frames_.size(); ++i) {
        if (bootstrap_frames_[i] == candidate) {
          bootstrap_.erase(bootstrap_.begin() + static_cast<ptrdiff_t>(i));
          bootstrap_frames_.erase(bootstrap_frames_.begin() +
                                  static_cast<ptrdiff_t>(i));
          break;
        }
      }
    }
  }

  // Grow the bootstrap with the first frames at their solved poses; retire it
  // once the keyframe map can stand on its own.
  const size_t map_kf = static_cast<size_t>(cfg_.matcher.map_keyframes);
  if (keyframes_.size() >= map_kf) {
    bootstrap_.clear();
    bootstrap_.shrink_to_fit();
    bootstrap_frames_.clear();
    bootstrap_frames_.shrink_to_fit();
  } else if (!first && keyframes_.size() + bootstrap_.size() + 1 <
                           std::max<size_t>(map_kf, 2)) {
    bootstrap_.push_back(transform_to_local(window_.clouds[n - 1],
                                            RigidTransform{newest.q, newest.p}));
    bootstrap_frames_.push_back(frame_count_);
  }

  // Trajectory: IMU-rate predictions bridge from the previous optimized
  // state, then the newest state lands exactly at the window start.
  if (first) {
    trajectory_.push_back({t_k, newest.q, newest.p});
  } else {
    const WindowState& prev = window_.states[n - 2];
    const PropagatedStates bridge =
        propagate(prev.x, slice_imu(imu_, prev.t, t_k), gravity_);
    for (const TimedState& s : bridge.states) {
      if (s.t > prev.t + 1e-9 && s.t < t_k - 1e-9) {
        trajectory_.push_back({s.t, s.q, s.p});
      }
    }
    trajectory_.push_back({t_k, newest.q, newest.p});
  }

  FrameTiming timing;
  timing.t = t_k;
  timing.frontend_ms = frontend_ms;
  timing.backend_ms = ms_since(segment_start);
  timing.loop_ms = extract_ms + ms_since(frame_start);
  timings_.push_back(timing);

  // Keep one sample at or before t_k; earlier history is spent.
  const auto spent = std::lower_bound(
      imu_.begin(), imu_.end(), t_k,
      [](const ImuSample& s, double t) { return s.t < t; });
  if (spent != imu_.begin()) imu_.erase(imu_.begin(), spent - 1);

  FrameOutput out;
  out.frame_index = frame_count_;
  out.t = t_k;
  out.state = newest;
  out.keyframe_added = kf_added;
  out.lidar_matches = static_cast<int>(fmm.back().coeffs.size());
  out.report = report;
  out.timing = timing;
  ++frame_count_;
  return out;
}

NavState Pipeline::latest_state() const {
  if (window_.states.empty()) throw std::logic_error("no frames processed");
  return window_.states.back().x;
}

double Pipeline::latest_time() const {
  if (window_.states.empty()) throw std::logic_error("no frames processed");
  return window_.states.back().t;
}

Eigen::MatrixXd Pipeline::latest_hessian() const {
  if (last_solution_.empty()) throw std::logic_error("no frames processed");
  return gauss_newton_hessian(last_problem_, last_solution_);
}

std::vector<MapPoint> Pipeline::export_map(double leaf) const {
  if (!keyframes_.empty()) return keyframes_.export_global_map(leaf);
  // No keyframes yet: place the live window clouds at their estimates via a
  // scratch store whose thresholds admit everything.
  KeyframeStore scratch(KeyframeConfig{-1.0, -1.0, 1, 0});
  for (size_t i = 0; i < window_.states.size(); ++i) {
    scratch.consider_admit(
        static_cast<int>(i),
        RigidTransform{window_.states[i].x.q, window_.states[i].x.p},
        window_.clouds[i]);
  }
  return scratch.export_global_map(leaf);
}

RunSummary run_dataset(const DatasetManifest& manifest,
                       const PipelineConfig& config,
                       const std::string& out_dir) {
  int primary_id = 0;
  for (const LidarSource& source : manifest.lidars) {
    if (source.primary) primary_id = source.lidar_id;
  }

  Pipeline pipeline(config, primary_id);
  for (const ImuSample& s :
       read_imu_csv(dataset_path(manifest, manifest.imu_file))) {
    pipeline.feed_imu(s);
  }

  std::vector<ScanIndexEntry> entries;
  for (const LidarSource& source : manifest.lidars) {
    const std::vector<ScanIndexEntry> dir_entries =
        index_scan_dir(dataset_path(manifest, source.scan_dir));
    entries.insert(entries.end(), dir_entries.begin(), dir_entries.end());
  }
  std::sort(entries.begin(), entries.end(),
            [](const ScanIndexEntry& a, const ScanIndexEntry& b) {
              return a.t_start != b.t_start ? a.t_start < b.t_start
                                            : a.path < b.path;
            });
  for (const ScanIndexEntry& entry : entries) {
    pipeline.feed_scan(read_scan(entry.path));
  }
  pipeline.finish();

  std::filesystem::create_directories(out_dir);
  write_trajectory(pipeline.trajectory(), out_dir + "/trajectory.txt");
  const std::vector<MapPoint> map = pipeline.export_map();
  write_map_points(map, out_dir + "/map.txt");

  std::ofstream timing_out(out_dir + "/timing.csv");
  if (!timing_out) {
    throw std::runtime_error(out_dir + "/timing.csv: cannot open for writing");
  }
  timing_out << "# t,frontend_ms,backend_ms,loop_ms\n";

  RunSummary summary;
  summary.frames = pipeline.frames();
  summary.diverged = pipeline.diverged();
  summary.trajectory_records = pipeline.trajectory().size();
  summary.map_points = map.size();
  for (const FrameTiming& ft : pipeline.timings()) {
    timing_out << detail::double_text(ft.t) << ','
               << detail::double_text(ft.frontend_ms) << ','
               << detail::double_text(ft.backend_ms) << ','
               << detail::double_text(ft.loop_ms) << '\n';
    summary.mean_frontend_ms += ft.frontend_ms;
    summary.mean_backend_ms += ft.backend_ms;
    summary.mean_loop_ms += ft.loop_ms;
  }
  if (summary.frames > 0) {
    summary.mean_frontend_ms /= summary.frames;
    summary.mean_backend_ms /= summary.frames;
    summary.mean_loop_ms /= summary.frames;
  }
  return summary;
}

}  // namespace miliom
