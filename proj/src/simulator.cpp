/// @file simulator.cpp
#include "miliom/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace miliom {

namespace {

constexpr double kDegToRad = M_PI / 180.0;

// Quintic smoothstep ramp: exactly 0 before t0, exactly 1 after t0 + w, C2
// across both splices. Disabled (identically 1) when t0 < 0.
void ramp_eval(double t, double t0, double w, double& e, double& de, double& dde) {
  if (t0 < 0.0) {
    e = 1.0;
    de = 0.0;
    dde = 0.0;
    return;
  }
  const double x = (t - t0) / w;
  if (x <= 0.0) {
    e = 0.0;
    de = 0.0;
    dde = 0.0;
    return;
  }
  if (x >= 1.0) {
    e = 1.0;
    de = 0.0;
    dde = 0.0;
    return;
  }
  e = x * x * x * (10.0 + x * (-15.0 + 6.0 * x));
  de = 30.0 * x * x * (1.0 - x) * (1.0 - x) / w;
  dde = (60.0 * x - 180.0 * x * x + 120.0 * x * x * x) / (w * w);
}

// Ramped sum-of-sinusoids excitation with its first two time derivatives.
void excitation(const Vec3& amp, const Vec3& freq, const Vec3& phase, double ramp_start,
                double ramp_duration, double t, Vec3& value, Vec3& d1, Vec3& d2) {
  Vec3 s, ds, dds;
  for (int i = 0; i < 3; ++i) {
    const double arg = freq(i) * t + phase(i);
    s(i) = amp(i) * std::sin(arg);
    ds(i) = amp(i) * freq(i) * std::cos(arg);
    dds(i) = -amp(i) * freq(i) * freq(i) * std::sin(arg);
  }
  double e, de, dde;
  ramp_eval(t, ramp_start, ramp_duration, e, de, dde);
  value = e * s;
  d1 = de * s + e * ds;
  d2 = dde * s + 2.0 * de * ds + e * dds;
}

}  // namespace

Vec3 Patch::normal() const { return u.cross(v).normalized(); }

std::optional<double> WorldModel::raycast(const Vec3& origin, const Vec3& dir, double min_range,
                                          double max_range) const {
  constexpr double kExtentSlack = 1e-9;
  std::optional<double> best;
  for (const Patch& patch : patches) {
    const Vec3 n = patch.u.cross(patch.v);
    const double denom = n.dot(dir);
    if (std::abs(denom) < 1e-12 * n.norm()) continue;
    const double t = n.dot(patch.origin - origin) / denom;
    if (t < min_range || t > max_range) continue;
    if (best && t >= *best) continue;
    const Vec3 q = origin + t * dir - patch.origin;
    const double a = patch.u.dot(q);
    const double b = patch.v.dot(q);
    if (a < -kExtentSlack || a > patch.extent_u + kExtentSlack) continue;
    if (b < -kExtentSlack || b > patch.extent_v + kExtentSlack) continue;
    best = t;
  }
  return best;
}

double WorldModel::distance_to_surface(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  for (const Patch& patch : patches) {
    const Vec3 q = p - patch.origin;
    const double a = std::clamp(patch.u.dot(q), 0.0, patch.extent_u);
    const double b = std::clamp(patch.v.dot(q), 0.0, patch.extent_v);
    best = std::min(best, (q - a * patch.u - b * patch.v).norm());
  }
  return best;
}

double WorldModel::distance_to_edges(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  for (const EdgeSegment& seg : edges) {
    const Vec3 d = seg.b - seg.a;
    const double len2 = d.squaredNorm();
    const double s = len2 > 0.0 ? std::clamp((p - seg.a).dot(d) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, (p - seg.a - s * d).norm());
  }
  return best;
}

UnitQuaternion SinusoidTrajectory::orientation(double t) const {
  Vec3 theta, d1, d2;
  excitation(rot_amp, rot_freq, rot_phase, ramp_start, ramp_duration, t, theta, d1, d2);
  return base_q * exp_rotvec(theta);
}

Vec3 SinusoidTrajectory::position(double t) const {
  Vec3 value, d1, d2;
  excitation(pos_amp, pos_freq, pos_phase, ramp_start, ramp_duration, t, value, d1, d2);
  return center + value;
}

Vec3 SinusoidTrajectory::velocity(double t) const {
  Vec3 value, d1, d2;
  excitation(pos_amp, pos_freq, pos_phase, ramp_start, ramp_duration, t, value, d1, d2);
  return d1;
}

Vec3 SinusoidTrajectory::acceleration(double t) const {
  Vec3 value, d1, d2;
  excitation(pos_amp, pos_freq, pos_phase, ramp_start, ramp_duration, t, value, d1, d2);
  return d2;
}

Vec3 SinusoidTrajectory::angular_velocity(double t) const {
  Vec3 theta, d1, d2;
  excitation(rot_amp, rot_freq, rot_phase, ramp_start, ramp_duration, t, theta, d1, d2);
  return so3_right_jacobian(theta) * d1;
}

int columns_per_sweep(const LidarConfig& cfg) {
  return static_cast<int>(std::lround(360.0 / cfg.horizontal_step_deg));
}

Vec3 beam_direction(const LidarConfig& cfg, int ring, int column) {
  const double fov = cfg.vertical_fov_deg * kDegToRad;
  const double elevation =
      cfg.channels > 1 ? -0.5 * fov + ring * fov / (cfg.channels - 1) : 0.0;
  const double azimuth = column * cfg.horizontal_step_deg * kDegToRad;
  const Vec3 d(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
               std::sin(elevation));
  if (cfg.mounting == LidarMounting::kHorizontal) return d;
  // Vertical mounting: spin axis tipped from body z onto body y, putting the
  // sweep plane through body xz.
  return {d.x(), -d.z(), d.y()};
}

RawScan simulate_lidar(const WorldModel& world, const TrajectorySpec& traj,
                       const LidarConfig& cfg, int sweep_index, std::mt19937_64* rng) {
  const int cols = columns_per_sweep(cfg);
  const double column_dt = cfg.sweep_period / cols;
  const double t_start = cfg.start_phase + sweep_index * cfg.sweep_period;

  std::normal_distribution<double> unit_normal(0.0, 1.0);
  std::vector<std::vector<RawScan::Point>> rings(cfg.channels);
  for (auto& ring : rings) ring.reserve(cols);

  for (int col = 0; col < cols; ++col) {
    const double dt = col * column_dt;
    const RigidTransform pose = traj.pose(t_start + dt);
    const Vec3 origin_world = pose(cfg.mount_offset);
    for (int ring = 0; ring < cfg.channels; ++ring) {
      const Vec3 dir_body = beam_direction(cfg, ring, col);
      const auto range =
          world.raycast(origin_world, pose.q.rotate(dir_body), cfg.min_range, cfg.max_range);
      if (!range) continue;
      double rho = *range;
      if (rng != nullptr && cfg.range_sigma > 0.0) rho += cfg.range_sigma * unit_normal(*rng);
      rings[ring].push_back({ring, dt, cfg.mount_offset + rho * dir_body});
    }
  }

  RawScan scan;
  scan.lidar_id = cfg.lidar_id;
  scan.t_start = t_start;
  scan.t_end = t_start + (cols - 1) * column_dt;
  scan.channel_count = cfg.channels;
  for (auto& ring : rings)
    scan.points.insert(scan.points.end(), ring.begin(), ring.end());
  return scan;
}

std::vector<ImuSample> simulate_imu(const TrajectorySpec& traj, double t0, double t1, double rate,
                                    const ImuNoise& noise, const Vec3& gyro_bias,
                                    const Vec3& accel_bias, const Vec3& gravity,
                                    std::mt19937_64* rng) {
  if (rate <= 0.0 || t1 < t0) throw std::invalid_argument("simulate_imu: bad span or rate");
  const double h = 1.0 / rate;
  const int count = static_cast<int>(std::lround((t1 - t0) * rate)) + 1;
  const double gyro_sigma_d = noise.gyro_sigma * std::sqrt(rate);
  const double accel_sigma_d = noise.accel_sigma * std::sqrt(rate);

  std::normal_distribution<double> unit_normal(0.0, 1.0);
  auto draw3 = [&](double sigma) {
    if (rng == nullptr || sigma <= 0.0) return Vec3(Vec3::Zero());
    return Vec3(sigma * unit_normal(*rng), sigma * unit_normal(*rng), sigma * unit_normal(*rng));
  };

  std::vector<ImuSample> samples;
  samples.reserve(count);
  for (int k = 0; k < count; ++k) {
    const double t = t0 + k * h;
    const double tm = t + 0.5 * h;
    ImuSample s;
    s.t = t;
    s.gyro = traj.angular_velocity(tm) + gyro_bias + draw3(gyro_sigma_d);
    s.accel = traj.orientation(tm).inverse().rotate(traj.acceleration(tm) - gravity) + accel_bias +
              draw3(accel_sigma_d);
    samples.push_back(s);
  }
  return samples;
}

std::optional<ScenarioKind> scenario_from_name(std::string_view name) {
  if (name == "room") return ScenarioKind::kRoom;
  if (name == "degenerate") return ScenarioKind::kDegenerate;
  if (name == "hover") return ScenarioKind::kHover;
  return std::nullopt;
}

const char* scenario_name(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kRoom: return "room";
    case ScenarioKind::kDegenerate: return "degenerate";
    case ScenarioKind::kHover: return "hover";
  }
  return "unknown";
}

WorldModel make_room_world() {
  // Closed 12 x 10 x 4 m box, surfaces visible from inside.
  WorldModel w;
  const double lx = 12.0, ly = 10.0, lz = 4.0;
  const Vec3 x = Vec3::UnitX(), y = Vec3::UnitY(), z = Vec3::UnitZ();
  w.patches.push_back({Vec3(0, 0, 0), x, y, lx, ly});    // floor
  w.patches.push_back({Vec3(0, 0, lz), x, y, lx, ly});   // ceiling
  w.patches.push_back({Vec3(0, 0, 0), y, z, ly, lz});    // wall x = 0
  w.patches.push_back({Vec3(lx, 0, 0), y, z, ly, lz});   // wall x = 12
  w.patches.push_back({Vec3(0, 0, 0), x, z, lx, lz});    // wall y = 0
  w.patches.push_back({Vec3(0, ly, 0), x, z, lx, lz});   // wall y = 10
  for (double zz : {0.0, lz}) {
    w.edges.push_back({Vec3(0, 0, zz), Vec3(lx, 0, zz)});
    w.edges.push_back({Vec3(0, ly, zz), Vec3(lx, ly, zz)});
    w.edges.push_back({Vec3(0, 0, zz), Vec3(0, ly, zz)});
    w.edges.push_back({Vec3(lx, 0, zz), Vec3(lx, ly, zz)});
  }
  for (double xx : {0.0, lx})
    for (double yy : {0.0, ly}) w.edges.push_back({Vec3(xx, yy, 0), Vec3(xx, yy, lz)});
  return w;
}

WorldModel make_degenerate_world() {
  // Building corner above open ground: every surface a horizontal scanner at
  // altitude can reach is vertical, so common-mode height is unconstrained
  // without the vertical scanner's ground returns.
  WorldModel w;
  const Vec3 x = Vec3::UnitX(), y = Vec3::UnitY(), z = Vec3::UnitZ();
  w.patches.push_back({Vec3(-30, -30, 0), x, y, 70.0, 70.0});  // ground
  w.patches.push_back({Vec3(10, -20, 0), y, z, 40.0, 30.0});   // facade x = 10
  w.patches.push_back({Vec3(10, 10, 0), x, z, 30.0, 30.0});    // return wall y = 10
  w.edges.push_back({Vec3(10, 10, 0), Vec3(10, 10, 30)});
  w.edges.push_back({Vec3(10, -20, 0), Vec3(10, 20, 0)});
  w.edges.push_back({Vec3(10, 10, 0), Vec3(40, 10, 0)});
  return w;
}

namespace {

std::shared_ptr<const TrajectorySpec> make_room_trajectory() {
  auto traj = std::make_shared<SinusoidTrajectory>();
  traj->center = Vec3(6.0, 5.0, 1.6);
  traj->pos_amp = Vec3(3.2, 2.2, 0.6);
  const double w = 2.0 * M_PI / 30.0;
  traj->pos_freq = Vec3(w, 2.0 * w, 0.9 * w);  // 1:2 figure-eight plus bob
  traj->pos_phase = Vec3(0.0, 0.0, 1.0);
  traj->rot_amp = Vec3(0.08, 0.10, 0.22);
  traj->rot_freq = Vec3(2.0 * M_PI / 17.0, 2.0 * M_PI / 23.0, 2.0 * M_PI / 13.0);
  traj->rot_phase = Vec3(0.4, 1.1, 2.3);
  traj->ramp_start = 0.5;
  traj->ramp_duration = 5.0;
  return traj;
}

std::shared_ptr<const TrajectorySpec> make_degenerate_trajectory() {
  auto traj = std::make_shared<SinusoidTrajectory>();
  traj->center = Vec3(0.0, 0.0, 8.0);
  traj->pos_amp = Vec3(0.7, 0.7, 1.8);
  traj->pos_freq = Vec3(2.0 * M_PI / 19.0, 2.0 * M_PI / 27.0, 2.0 * M_PI / 31.0);
  traj->pos_phase = Vec3(0.0, 0.9, 0.0);
  traj->rot_amp = Vec3(0.06, 0.06, 0.15);
  traj->rot_freq = Vec3(2.0 * M_PI / 21.0, 2.0 * M_PI / 29.0, 2.0 * M_PI / 15.0);
  traj->rot_phase = Vec3(1.3, 0.2, 2.9);
  traj->ramp_start = 0.5;
  traj->ramp_duration = 5.0;
  return traj;
}

}  // namespace

ScenarioDefinition scenario_definition(ScenarioKind kind, const ScenarioConfig& cfg) {
  if (cfg.lidar_count < 1 || cfg.lidar_count > 2)
    throw std::invalid_argument("scenario_definition: lidar_count must be 1 or 2");
  if (cfg.duration <= cfg.first_sweep + cfg.sweep_period)
    throw std::invalid_argument("scenario_definition: duration too short for one sweep");

  ScenarioDefinition def;
  def.imu_rate = cfg.imu_rate;
  def.duration = cfg.duration;
  if (cfg.with_noise) {
    def.imu_noise = cfg.imu_noise;
    def.gyro_bias = cfg.gyro_bias;
    def.accel_bias = cfg.accel_bias;
  } else {
    def.imu_noise = ImuNoise{0.0, 0.0, 0.0, 0.0};
  }

  double max_range = 60.0;
  switch (kind) {
    case ScenarioKind::kRoom:
      def.world = make_room_world();
      def.truth = make_room_trajectory();
      break;
    case ScenarioKind::kDegenerate:
      def.world = make_degenerate_world();
      def.truth = make_degenerate_trajectory();
      // Keeps the grazing ground intersection of the lowest horizontal beam
      // beyond reach at every altitude the path visits.
      max_range = 20.0;
      break;
    case ScenarioKind::kHover:
      def.world = make_room_world();
      def.truth = std::make_shared<HoverTrajectory>(
          RigidTransform{UnitQuaternion::identity(), Vec3(6.0, 5.0, 1.6)});
      break;
  }

  for (int i = 0; i < cfg.lidar_count; ++i) {
    LidarConfig lidar;
    lidar.lidar_id = i;
    lidar.sweep_period = cfg.sweep_period;
    lidar.range_sigma = cfg.with_noise ? cfg.range_sigma : 0.0;
    lidar.max_range = max_range;
    if (i == 0) {
      lidar.mounting = LidarMounting::kHorizontal;
      lidar.mount_offset = Vec3(0.0, 0.0, 0.06);
      lidar.start_phase = cfg.first_sweep;
    } else {
      lidar.mounting = LidarMounting::kVertical;
      lidar.mount_offset = Vec3(0.08, 0.0, 0.0);
      lidar.start_phase = cfg.first_sweep + cfg.secondary_phase;
    }
    def.lidars.push_back(lidar);
  }
  return def;
}

SimulatedDataset simulate_scenario(ScenarioKind kind, const ScenarioConfig& cfg) {
  const ScenarioDefinition def = scenario_definition(kind, cfg);

  SimulatedDataset data;
  data.world = def.world;
  data.truth = def.truth;
  data.lidars = def.lidars;
  data.gravity = def.gravity;
  data.gyro_bias = def.gyro_bias;
  data.accel_bias = def.accel_bias;

  for (size_t i = 0; i < def.lidars.size(); ++i) {
    const LidarConfig& lidar = def.lidars[i];
    std::mt19937_64 rng(cfg.seed + i + 1);
    std::vector<RawScan> scans;
    for (int k = 0;; ++k) {
      if (lidar.start_phase + (k + 1) * lidar.sweep_period > cfg.duration) break;
      scans.push_back(simulate_lidar(def.world, *def.truth, lidar, k, &rng));
    }
    data.scans.push_back(std::move(scans));
  }

  std::mt19937_64 imu_rng(cfg.seed + 101);
  data.imu = simulate_imu(*def.truth, 0.0, cfg.duration, def.imu_rate, def.imu_noise,
                          def.gyro_bias, def.accel_bias, def.gravity, &imu_rng);

  data.ground_truth.reserve(data.imu.size());
  for (const ImuSample& s : data.imu) {
    TimedState state;
    state.t = s.t;
    state.q = def.truth->orientation(s.t);
    state.p = def.truth->position(s.t);
    state.v = def.truth->velocity(s.t);
    data.ground_truth.push_back(state);
  }
  return data;
}

}  // namespace miliom
