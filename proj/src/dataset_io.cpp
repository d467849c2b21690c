/// @file
/// Dataset file readers and writers. Text formats print doubles at full
/// precision so a write/read round trip reproduces every value bit-exactly;
/// binary formats assume a little-endian host.

#include "miliom/dataset_io.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "number_format.hpp"

namespace fs = std::filesystem;

namespace miliom {
namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw std::runtime_error(path + ": " + message);
}

[[noreturn]] void fail(const std::string& path, int line,
                       const std::string& message) {
  fail(path, "line " + std::to_string(line) + ": " + message);
}

bool has_extension(const std::string& path, const char* ext) {
  return fs::path(path).extension() == ext;
}

// Sequential number scanner over one text line.
struct Cursor {
  const char* p;
  const std::string& path;
  int line;
};

double next_double(Cursor& c) {
  char* end = nullptr;
  const double v = std::strtod(c.p, &end);
  if (end == c.p) fail(c.path, c.line, "expected a number");
  c.p = end;
  if (*c.p == ',') ++c.p;
  return v;
}

long next_int(Cursor& c) {
  char* end = nullptr;
  const long v = std::strtol(c.p, &end, 10);
  if (end == c.p) fail(c.path, c.line, "expected an integer");
  c.p = end;
  if (*c.p == ',') ++c.p;
  return v;
}

void expect_line_end(Cursor& c) {
  while (*c.p == ' ' || *c.p == '\t' || *c.p == '\r') ++c.p;
  if (*c.p != '\0') fail(c.path, c.line, "trailing characters");
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(value));
}

template <typename T>
T take(std::istream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(value));
  if (!in) fail(path, "truncated binary file");
  return value;
}

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) fail(path, "cannot open for writing");
  return out;
}

std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) fail(path, "cannot open");
  return in;
}

void write_scan_text(const RawScan& scan, const std::string& path) {
  std::ofstream out = open_out(path, false);
  std::string text;
  text.reserve(64 + scan.points.size() * 64);
  text += std::to_string(scan.lidar_id);
  text += ' ';
  text += detail::double_text(scan.t_start);
  text += ' ';
  text += detail::double_text(scan.t_end);
  text += ' ';
  text += std::to_string(scan.channel_count);
  text += '\n';
  for (const RawScan::Point& pt : scan.points) {
    text += std::to_string(pt.ring);
    text += ' ';
    text += detail::double_text(pt.dt);
    text += ' ';
    text += detail::double_text(pt.xyz.x());
    text += ' ';
    text += detail::double_text(pt.xyz.y());
    text += ' ';
    text += detail::double_text(pt.xyz.z());
    text += '\n';
  }
  out << text;
  if (!out) fail(path, "write failed");
}

RawScan read_scan_text(const std::string& path) {
  std::ifstream in = open_in(path, false);
  RawScan scan;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    Cursor c{line.c_str(), path, line_no};
    while (*c.p == ' ' || *c.p == '\t' || *c.p == '\r') ++c.p;
    if (*c.p == '\0') continue;
    if (!have_header) {
      scan.lidar_id = static_cast<int>(next_int(c));
      scan.t_start = next_double(c);
      scan.t_end = next_double(c);
      scan.channel_count = static_cast<int>(next_int(c));
      expect_line_end(c);
      have_header = true;
      continue;
    }
    RawScan::Point pt;
    pt.ring = static_cast<int>(next_int(c));
    pt.dt = next_double(c);
    pt.xyz.x() = next_double(c);
    pt.xyz.y() = next_double(c);
    pt.xyz.z() = next_double(c);
    expect_line_end(c);
    scan.points.push_back(pt);
  }
  if (!have_header) fail(path, "empty scan file");
  return scan;
}

void write_scan_binary(const RawScan& scan, const std::string& path) {
  std::ofstream out = open_out(path, true);
  put<int32_t>(out, scan.lidar_id);
  put<double>(out, scan.t_start);
  put<double>(out, scan.t_end);
  put<int32_t>(out, scan.channel_count);
  put<uint64_t>(out, scan.points.size());
  for (const RawScan::Point& pt : scan.points) {
    put<int32_t>(out, pt.ring);
    put<double>(out, pt.dt);
    put<double>(out, pt.xyz.x());
    put<double>(out, pt.xyz.y());
    put<double>(out, pt.xyz.z());
  }
  if (!out) fail(path, "write failed");
}

RawScan read_scan_binary(const std::string& path) {
  std::ifstream in = open_in(path, true);
  RawScan scan;
  scan.lidar_id = take<int32_t>(in, path);
  scan.t_start = take<double>(in, path);
  scan.t_end = take<double>(in, path);
  scan.channel_count = take<int32_t>(in, path);
  const uint64_t count = take<uint64_t>(in, path);
  scan.points.resize(count);
  for (RawScan::Point& pt : scan.points) {
    pt.ring = take<int32_t>(in, path);
    pt.dt = take<double>(in, path);
    pt.xyz.x() = take<double>(in, path);
    pt.xyz.y() = take<double>(in, path);
    pt.xyz.z() = take<double>(in, path);
  }
  return scan;
}

void write_map_text(const std::vector<MapPoint>& points,
                    const std::string& path) {
  std::ofstream out = open_out(path, false);
  std::string text;
  text.reserve(points.size() * 48);
  for (const MapPoint& pt : points) {
    text += detail::double_text(pt.xyz.x());
    text += ' ';
    text += detail::double_text(pt.xyz.y());
    text += ' ';
    text += detail::double_text(pt.xyz.z());
    text += ' ';
    text += std::to_string(static_cast<int>(pt.kind));
    text += '\n';
  }
  out << text;
  if (!out) fail(path, "write failed");
}

std::vector<MapPoint> read_map_text(const std::string& path) {
  std::ifstream in = open_in(path, false);
  std::vector<MapPoint> points;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    Cursor c{line.c_str(), path, line_no};
    while (*c.p == ' ' || *c.p == '\t' || *c.p == '\r') ++c.p;
    if (*c.p == '\0') continue;
    MapPoint pt;
    pt.xyz.x() = next_double(c);
    pt.xyz.y() = next_double(c);
    pt.xyz.z() = next_double(c);
    const long kind = next_int(c);
    expect_line_end(c);
    if (kind != 0 && kind != 1) fail(path, line_no, "kind must be 0 or 1");
    pt.kind = kind == 0 ? FeatureKind::kEdge : FeatureKind::kPlane;
    points.push_back(pt);
  }
  return points;
}

void write_map_binary(const std::vector<MapPoint>& points,
                      const std::string& path) {
  std::ofstream out = open_out(path, true);
  put<uint64_t>(out, points.size());
  for (const MapPoint& pt : points) {
    put<double>(out, pt.xyz.x());
    put<double>(out, pt.xyz.y());
    put<double>(out, pt.xyz.z());
    put<int32_t>(out, static_cast<int32_t>(pt.kind));
  }
  if (!out) fail(path, "write failed");
}

std::vector<MapPoint> read_map_binary(const std::string& path) {
  std::ifstream in = open_in(path, true);
  const uint64_t count = take<uint64_t>(in, path);
  std::vector<MapPoint> points(count);
  for (MapPoint& pt : points) {
    pt.xyz.x() = take<double>(in, path);
    pt.xyz.y() = take<double>(in, path);
    pt.xyz.z() = take<double>(in, path);
    const int32_t kind = take<int32_t>(in, path);
    if (kind != 0 && kind != 1) fail(path, "kind must be 0 or 1");
    pt.kind = kind == 0 ? FeatureKind::kEdge : FeatureKind::kPlane;
  }
  return points;
}

}  // namespace

void write_scan(const RawScan& scan, const std::string& path) {
  if (has_extension(path, ".bin")) {
    write_scan_binary(scan, path);
  } else {
    write_scan_text(scan, path);
  }
}

RawScan read_scan(const std::string& path) {
  return has_extension(path, ".bin") ? read_scan_binary(path)
                                     : read_scan_text(path);
}

std::vector<ScanIndexEntry> index_scan_dir(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) fail(dir, "not a directory");
  std::vector<ScanIndexEntry> entries;
  for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    const bool binary = p.extension() == ".bin";
    if (!binary && p.extension() != ".txt") continue;
    const std::string path = p.string();
    std::ifstream in = open_in(path, binary);
    double t_start = 0.0;
    if (binary) {
      take<int32_t>(in, path);
      t_start = take<double>(in, path);
    } else {
      std::string line;
      if (!std::getline(in, line)) fail(path, "empty scan file");
      Cursor c{line.c_str(), path, 1};
      next_int(c);
      t_start = next_double(c);
    }
    entries.push_back({t_start, path});
  }
  std::sort(entries.begin(), entries.end(),
            [](const ScanIndexEntry& a, const ScanIndexEntry& b) {
              return a.t_start != b.t_start ? a.t_start < b.t_start
                                            : a.path < b.path;
            });
  return entries;
}

std::vector<RawScan> read_scan_dir(const std::string& dir) {
  const std::vector<ScanIndexEntry> entries = index_scan_dir(dir);
  std::vector<RawScan> scans;
  scans.reserve(entries.size());
  for (const ScanIndexEntry& entry : entries) {
    scans.push_back(read_scan(entry.path));
  }
  return scans;
}

void write_imu_csv(const std::vector<ImuSample>& samples,
                   const std::string& path) {
  std::ofstream out = open_out(path, false);
  std::string text;
  text.reserve(samples.size() * 96);
  for (const ImuSample& s : samples) {
    const double fields[7] = {s.t,         s.gyro.x(),  s.gyro.y(),
                              s.gyro.z(),  s.accel.x(), s.accel.y(),
                              s.accel.z()};
    for (int i = 0; i < 7; ++i) {
      if (i > 0) text += ',';
      text += detail::double_text(fields[i]);
    }
    text += '\n';
  }
  out << text;
  if (!out) fail(path, "write failed");
}

std::vector<ImuSample> read_imu_csv(const std::string& path) {
  std::ifstream in = open_in(path, false);
  std::vector<ImuSample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    Cursor c{line.c_str(), path, line_no};
    while (*c.p == ' ' || *c.p == '\t' || *c.p == '\r') ++c.p;
    if (*c.p == '\0') continue;
    ImuSample s;
    s.t = next_double(c);
    s.gyro.x() = next_double(c);
    s.gyro.y() = next_double(c);
    s.gyro.z() = next_double(c);
    s.accel.x() = next_double(c);
    s.accel.y() = next_double(c);
    s.accel.z() = next_double(c);
    expect_line_end(c);
    if (!samples.empty() && s.t <= samples.back().t) {
      fail(path, line_no, "timestamps must be strictly increasing");
    }
    samples.push_back(s);
  }
  return samples;
}

void write_trajectory(const std::vector<TrajectoryRecord>& records,
                      const std::string& path) {
  std::ofstream out = open_out(path, false);
  std::string text;
  text.reserve(records.size() * 128);
  for (const TrajectoryRecord& r : records) {
    const double fields[8] = {r.t,   r.p.x(), r.p.y(), r.p.z(),
                              r.q.x, r.q.y,   r.q.z,   r.q.w};
    for (int i = 0; i < 8; ++i) {
      if (i > 0) text += ' ';
      text += detail::double_text(fields[i]);
    }
    text += '\n';
  }
  out << text;
  if (!out) fail(path, "write failed");
}

std::vector<TrajectoryRecord> read_trajectory(const std::string& path) {
  std::ifstream in = open_in(path, false);
  std::vector<TrajectoryRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    Cursor c{line.c_str(), path, line_no};
    while (*c.p == ' ' || *c.p == '\t' || *c.p == '\r') ++c.p;
    if (*c.p == '\0') continue;
    TrajectoryRecord r;
    r.t = next_double(c);
    r.p.x() = next_double(c);
    r.p.y() = next_double(c);
    r.p.z() = next_double(c);
    const double qx = next_double(c);
    const double qy = next_double(c);
    const double qz = next_double(c);
    const double qw = next_double(c);
    expect_line_end(c);
    r.q = UnitQuaternion(qw, qx, qy, qz);
    if (!records.empty() && r.t <= records.back().t) {
      fail(path, line_no, "timestamps must be strictly increasing");
    }
    records.push_back(r);
  }
  return records;
}

void write_map_points(const std::vector<MapPoint>& points,
                      const std::string& path) {
  if (has_extension(path, ".bin")) {
    write_map_binary(points, path);
  } else {
    write_map_text(points, path);
  }
}

std::vector<MapPoint> read_map_points(const std::string& path) {
  return has_extension(path, ".bin") ? read_map_binary(path)
                                     : read_map_text(path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in = open_in(path, false);
  DatasetManifest manifest;
  manifest.root = fs::path(path).parent_path().string();
  if (manifest.root.empty()) manifest.root = ".";
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string key;
    if (!(fields >> key)) continue;
    if (key == "imu" || key == "ground_truth" || key == "config") {
      std::string file;
      if (!(fields >> file)) fail(path, line_no, "'" + key + "' needs a file");
      if (key == "imu") manifest.imu_file = file;
      if (key == "ground_truth") manifest.ground_truth_file = file;
      if (key == "config") manifest.config_file = file;
    } else if (key == "lidar") {
      LidarSource source;
      std::string role;
      if (!(fields >> source.lidar_id >> role >> source.scan_dir)) {
        fail(path, line_no, "'lidar' needs `id primary|secondary dir`");
      }
      if (role != "primary" && role != "secondary") {
        fail(path, line_no, "lidar role must be primary or secondary");
      }
      source.primary = role == "primary";
      manifest.lidars.push_back(source);
    } else {
      fail(path, line_no, "unknown key '" + key + "'");
    }
    std::string extra;
    if (fields >> extra) fail(path, line_no, "trailing token '" + extra + "'");
  }

  if (manifest.lidars.empty()) fail(path, "manifest names no lidars");
  if (manifest.imu_file.empty()) fail(path, "manifest names no imu file");
  int primaries = 0;
  for (size_t i = 0; i < manifest.lidars.size(); ++i) {
    if (manifest.lidars[i].primary) ++primaries;
    for (size_t j = i + 1; j < manifest.lidars.size(); ++j) {
      if (manifest.lidars[i].lidar_id == manifest.lidars[j].lidar_id) {
        fail(path, "duplicate lidar id " +
                       std::to_string(manifest.lidars[i].lidar_id));
      }
    }
  }
  if (primaries != 1) {
    fail(path, "manifest must name exactly one primary lidar, found " +
                   std::to_string(primaries));
  }
  if (!fs::exists(dataset_path(manifest, manifest.imu_file))) {
    fail(path, "imu file '" + manifest.imu_file + "' does not exist");
  }
  for (const LidarSource& source : manifest.lidars) {
    if (!fs::is_directory(dataset_path(manifest, source.scan_dir))) {
      fail(path, "scan dir '" + source.scan_dir + "' does not exist");
    }
  }
  if (!manifest.ground_truth_file.empty() &&
      !fs::exists(dataset_path(manifest, manifest.ground_truth_file))) {
    fail(path, "ground truth file '" + manifest.ground_truth_file +
                   "' does not exist");
  }
  if (!manifest.config_file.empty() &&
      !fs::exists(dataset_path(manifest, manifest.config_file))) {
    fail(path, "config file '" + manifest.config_file + "' does not exist");
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out = open_out(path, false);
  if (!manifest.config_file.empty()) out << "config " << manifest.config_file << "\n";
  out << "imu " << manifest.imu_file << "\n";
  if (!manifest.ground_truth_file.empty()) {
    out << "ground_truth " << manifest.ground_truth_file << "\n";
  }
  for (const LidarSource& source : manifest.lidars) {
    out << "lidar " << source.lidar_id << " "
        << (source.primary ? "primary" : "secondary") << " "
        << source.scan_dir << "\n";
  }
  if (!out) fail(path, "write failed");
}

std::string dataset_path(const DatasetManifest& manifest,
                         const std::string& relative) {
  const fs::path p(relative);
  if (p.is_absolute()) return relative;
  return (fs::path(manifest.root) / p).string();
}

DatasetManifest write_dataset(const SimulatedDataset& data,
                              const std::string& dir,
                              const PipelineConfig& config,
                              bool binary_scans) {
  fs::create_directories(dir);
  DatasetManifest manifest;
  manifest.root = dir;
  manifest.imu_file = "imu.csv";
  manifest.ground_truth_file = "ground_truth.txt";
  manifest.config_file = "config.cfg";

  save_config(config, dataset_path(manifest, manifest.config_file));
  write_imu_csv(data.imu, dataset_path(manifest, manifest.imu_file));

  std::vector<TrajectoryRecord> truth;
  truth.reserve(data.ground_truth.size());
  for (const TimedState& s : data.ground_truth) {
    truth.push_back(TrajectoryRecord{s.t, s.q, s.p});
  }
  write_trajectory(truth, dataset_path(manifest, manifest.ground_truth_file));

  const char* ext = binary_scans ? ".bin" : ".txt";
  for (size_t i = 0; i < data.lidars.size(); ++i) {
    LidarSource source;
    source.lidar_id = data.lidars[i].lidar_id;
    source.primary = i == 0;  // scenario order puts the primary first
    source.scan_dir = "lidar" + std::to_string(source.lidar_id);
    const std::string scan_dir = dataset_path(manifest, source.scan_dir);
    fs::create_directories(scan_dir);
    char name[64];
    for (size_t k = 0; k < data.scans[i].size(); ++k) {
      std::snprintf(name, sizeof(name), "scan_%06zu%s", k, ext);
      write_scan(data.scans[i][k], scan_dir + "/" + name);
    }
    manifest.lidars.push_back(source);
  }

  save_manifest(manifest, dir + std::string("/manifest.txt"));
  return manifest;
}

}  // namespace miliom
