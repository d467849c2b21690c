/// @file simulator.hpp
/// Synthetic world, analytic trajectories, and lidar/IMU measurement
/// synthesis with exact ground truth.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "miliom/cloud.hpp"
#include "miliom/geometry.hpp"
#include "miliom/imu.hpp"

namespace miliom {

/// Rectangular surface patch: a corner point plus two orthonormal edge
/// directions scaled by extents. Both faces reflect rays.
struct Patch {
  Vec3 origin = Vec3::Zero();
  Vec3 u = Vec3::UnitX();
  Vec3 v = Vec3::UnitY();
  double extent_u = 1.0;
  double extent_v = 1.0;

  Vec3 normal() const;
};

/// Straight corner line between two surfaces; ground-truth metadata for
/// checking edge-feature placement, invisible to rays.
struct EdgeSegment {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
};

struct WorldModel {
  std::vector<Patch> patches;
  std::vector<EdgeSegment> edges;

  /// Range to the nearest patch along unit dir, or nullopt when no patch is
  /// struck inside [min_range, max_range].
  std::optional<double> raycast(const Vec3& origin, const Vec3& dir, double min_range,
                                double max_range) const;
  /// Distance from p to the nearest patch, extents respected.
  double distance_to_surface(const Vec3& p) const;
  /// Distance from p to the nearest corner segment.
  double distance_to_edges(const Vec3& p) const;
};

/// Analytic rigid-body motion. Implementations must be C2 in time so the
/// simulated IMU sees a well-defined acceleration; angular velocity is
/// expressed in the body frame.
struct TrajectorySpec {
  virtual ~TrajectorySpec() = default;
  virtual UnitQuaternion orientation(double t) const = 0;
  virtual Vec3 position(double t) const = 0;
  virtual Vec3 velocity(double t) const = 0;
  virtual Vec3 acceleration(double t) const = 0;
  virtual Vec3 angular_velocity(double t) const = 0;

  RigidTransform pose(double t) const { return {orientation(t), position(t)}; }
};

struct HoverTrajectory : TrajectorySpec {
  RigidTransform fixed;

  HoverTrajectory() = default;
  explicit HoverTrajectory(const RigidTransform& pose) : fixed(pose) {}

  UnitQuaternion orientation(double) const override { return fixed.q; }
  Vec3 position(double) const override { return fixed.t; }
  Vec3 velocity(double) const override { return Vec3::Zero(); }
  Vec3 acceleration(double) const override { return Vec3::Zero(); }
  Vec3 angular_velocity(double) const override { return Vec3::Zero(); }
};

/// Constant-velocity straight line at a fixed attitude.
struct LineTrajectory : TrajectorySpec {
  UnitQuaternion q0;
  Vec3 p0 = Vec3::Zero();
  Vec3 v0 = Vec3::Zero();

  LineTrajectory() = default;
  LineTrajectory(const Vec3& start, const Vec3& vel) : p0(start), v0(vel) {}

  UnitQuaternion orientation(double) const override { return q0; }
  Vec3 position(double t) const override { return p0 + t * v0; }
  Vec3 velocity(double) const override { return v0; }
  Vec3 acceleration(double) const override { return Vec3::Zero(); }
  Vec3 angular_velocity(double) const override { return Vec3::Zero(); }
};

/// Sum-of-sinusoids position and rotation-vector excitation around a fixed
/// base pose. An optional C2 smoothstep ramp holds the body exactly still
/// until ramp_start, so a gravity-alignment initializer sees a true hover.
struct SinusoidTrajectory : TrajectorySpec {
  Vec3 center = Vec3::Zero();
  UnitQuaternion base_q;
  Vec3 pos_amp = Vec3::Zero();
  Vec3 pos_freq = Vec3::Zero();    // rad/s
  Vec3 pos_phase = Vec3::Zero();
  Vec3 rot_amp = Vec3::Zero();     // radians
  Vec3 rot_freq = Vec3::Zero();
  Vec3 rot_phase = Vec3::Zero();
  double ramp_start = -1.0;        // < 0 disables the ramp
  double ramp_duration = 4.0;

  UnitQuaternion orientation(double t) const override;
  Vec3 position(double t) const override;
  Vec3 velocity(double t) const override;
  Vec3 acceleration(double t) const override;
  Vec3 angular_velocity(double t) const override;
};

/// The same motion observed in a rigidly displaced frame.
struct TransformedTrajectory : TrajectorySpec {
  RigidTransform offset;
  std::shared_ptr<const TrajectorySpec> inner;

  TransformedTrajectory(const RigidTransform& offset_, std::shared_ptr<const TrajectorySpec> inner_)
      : offset(offset_), inner(std::move(inner_)) {}

  UnitQuaternion orientation(double t) const override { return offset.q * inner->orientation(t); }
  Vec3 position(double t) const override { return offset(inner->position(t)); }
  Vec3 velocity(double t) const override { return offset.q.rotate(inner->velocity(t)); }
  Vec3 acceleration(double t) const override { return offset.q.rotate(inner->acceleration(t)); }
  Vec3 angular_velocity(double t) const override { return inner->angular_velocity(t); }
};

enum class LidarMounting { kHorizontal, kVertical };

/// Spinning multi-channel lidar. Defaults model a 16-channel unit with a 32
/// degree vertical fan sweeping a full turn every 0.1 s. A vertical mounting
/// tips the spin axis onto body y, so the fan sweeps the body xz plane.
struct LidarConfig {
  int lidar_id = 0;
  int channels = 16;
  double vertical_fov_deg = 32.0;
  double horizontal_step_deg = 0.4;
  double sweep_period = 0.1;
  LidarMounting mounting = LidarMounting::kHorizontal;
  Vec3 mount_offset = Vec3::Zero();  // sensor origin in the body frame
  double range_sigma = 0.01;
  double min_range = 0.5;
  double max_range = 60.0;
  double start_phase = 0.0;          // epoch of sweep 0
};

int columns_per_sweep(const LidarConfig& cfg);
/// Unit beam direction in the body frame for one (ring, column) firing.
Vec3 beam_direction(const LidarConfig& cfg, int ring, int column);

/// Ray-casts one full sweep. Each column fires from the true sensor pose at
/// its own time, so intra-sweep motion skews the scan exactly as deskew
/// assumes. Range noise is drawn per hit when rng is non-null and
/// range_sigma > 0; beams that miss every patch are omitted.
RawScan simulate_lidar(const WorldModel& world, const TrajectorySpec& traj,
                       const LidarConfig& cfg, int sweep_index, std::mt19937_64* rng = nullptr);

/// Samples specific force and body angular rate at `rate` Hz across [t0, t1].
/// Each sample carries the signal value at the midpoint of its hold interval
/// (the integrating-IMU model), which keeps zero-order-hold consumers
/// second-order accurate. White noise uses the continuous densities scaled
/// by sqrt(rate); it is drawn only when rng is non-null.
std::vector<ImuSample> simulate_imu(const TrajectorySpec& traj, double t0, double t1, double rate,
                                    const ImuNoise& noise, const Vec3& gyro_bias,
                                    const Vec3& accel_bias, const Vec3& gravity,
                                    std::mt19937_64* rng = nullptr);

enum class ScenarioKind { kRoom, kDegenerate, kHover };

std::optional<ScenarioKind> scenario_from_name(std::string_view name);
const char* scenario_name(ScenarioKind kind);

struct ScenarioConfig {
  double duration = 60.0;
  std::uint64_t seed = 1;
  bool with_noise = true;
  double range_sigma = 0.01;
  ImuNoise imu_noise{};
  Vec3 gyro_bias = Vec3(2e-3, -1e-3, 1.5e-3);
  Vec3 accel_bias = Vec3(2e-2, -1.5e-2, 1e-2);
  int lidar_count = 2;  // 1 = horizontal only, 2 = horizontal + vertical
  double imu_rate = 200.0;
  double sweep_period = 0.1;
  double first_sweep = 0.3;        // leaves an initialization hover on record
  double secondary_phase = 0.02;   // vertical-lidar sweep offset
};

/// Everything needed to generate a scenario stream sweep-by-sweep without
/// materializing the whole dataset. Noise-off zeroes sigmas and biases.
struct ScenarioDefinition {
  WorldModel world;
  std::shared_ptr<const TrajectorySpec> truth;
  std::vector<LidarConfig> lidars;
  ImuNoise imu_noise{};
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
  double imu_rate = 200.0;
  double duration = 60.0;
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
};

struct SimulatedDataset {
  WorldModel world;
  std::shared_ptr<const TrajectorySpec> truth;
  std::vector<LidarConfig> lidars;
  std::vector<std::vector<RawScan>> scans;  // indexed like lidars
  std::vector<ImuSample> imu;
  std::vector<TimedState> ground_truth;     // true states at IMU sample times
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
};

WorldModel make_room_world();
WorldModel make_degenerate_world();

ScenarioDefinition scenario_definition(ScenarioKind kind, const ScenarioConfig& cfg);
SimulatedDataset simulate_scenario(ScenarioKind kind, const ScenarioConfig& cfg);

}  // namespace miliom
