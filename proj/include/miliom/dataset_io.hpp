/// @file
/// On-disk dataset layout: per-sweep scan files (text or binary), an IMU CSV,
/// trajectory files, exported maps, and the manifest that ties them together.

#pragma once

#include <string>
#include <vector>

#include "miliom/cloud.hpp"
#include "miliom/config.hpp"
#include "miliom/imu.hpp"
#include "miliom/simulator.hpp"

namespace miliom {

/// One trajectory sample: `t px py pz qx qy qz qw` per line on disk.
struct TrajectoryRecord {
  double t = 0.0;
  UnitQuaternion q;
  Vec3 p = Vec3::Zero();
};

/// Scan files hold one sweep each. A `.txt` file starts with the header line
/// `lidar_id t_start t_end channel_count` followed by `ring dt x y z` rows;
/// a `.bin` file stores the same fields little-endian with a point count.
/// The extension selects the format.
void write_scan(const RawScan& scan, const std::string& path);
RawScan read_scan(const std::string& path);

/// Reads every `.txt`/`.bin` file in `dir` and orders the sweeps by t_start,
/// so filenames carry no meaning beyond the extension.
std::vector<RawScan> read_scan_dir(const std::string& dir);

struct ScanIndexEntry {
  double t_start = 0.0;
  std::string path;
};

/// Start times of every scan file in `dir`, sorted ascending, read from the
/// file headers alone. Lets a caller replay a large directory one sweep at a
/// time instead of loading it whole.
std::vector<ScanIndexEntry> index_scan_dir(const std::string& dir);

/// IMU CSV rows are `t,wx,wy,wz,ax,ay,az` with no header line.
void write_imu_csv(const std::vector<ImuSample>& samples,
                   const std::string& path);
std::vector<ImuSample> read_imu_csv(const std::string& path);

/// Timestamps must be strictly increasing; read_trajectory enforces that.
void write_trajectory(const std::vector<TrajectoryRecord>& records,
                      const std::string& path);
std::vector<TrajectoryRecord> read_trajectory(const std::string& path);

/// Map files hold `x y z kind` rows (kind 0 = edge, 1 = plane); `.bin` uses
/// the equivalent little-endian layout behind a point count.
void write_map_points(const std::vector<MapPoint>& points,
                      const std::string& path);
std::vector<MapPoint> read_map_points(const std::string& path);

struct LidarSource {
  int lidar_id = 0;
  bool primary = false;
  std::string scan_dir;  // relative to the manifest's directory
};

/// Parsed manifest. Lines are `imu <file>`, `ground_truth <file>`,
/// `config <file>`, and `lidar <id> primary|secondary <dir>`; ground truth
/// and config are optional, every named path must exist, lidar ids must be
/// unique, and exactly one lidar is primary.
struct DatasetManifest {
  std::string root;  // directory the manifest was loaded from
  std::vector<LidarSource> lidars;
  std::string imu_file;
  std::string ground_truth_file;  // empty when absent
  std::string config_file;        // empty when absent
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

/// Joins a manifest-relative path onto the manifest root.
std::string dataset_path(const DatasetManifest& manifest,
                         const std::string& relative);

/// Writes a complete dataset directory: manifest.txt, config.cfg, imu.csv,
/// ground_truth.txt, and one scan directory per lidar.
DatasetManifest write_dataset(const SimulatedDataset& data,
                              const std::string& dir,
                              const PipelineConfig& config, bool binary_scans);

}  // namespace miliom
