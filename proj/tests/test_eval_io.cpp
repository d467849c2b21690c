#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "miliom/config.hpp"
#include "miliom/dataset_io.hpp"
#include "miliom/evaluation.hpp"
#include "miliom/simulator.hpp"

using namespace miliom;
namespace fs = std::filesystem;

namespace {

/// Fresh empty directory under the system temp root, wiped on destruction.
struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("miliom_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

RawScan sample_scan() {
  RawScan scan;
  scan.lidar_id = 3;
  scan.t_start = 1.2345678901234567;
  scan.t_end = scan.t_start + 0.1;
  scan.channel_count = 4;
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> coord(-30.0, 30.0);
  for (int ring = 0; ring < 4; ++ring) {
    for (int i = 0; i < 50; ++i) {
      RawScan::Point pt;
      pt.ring = ring;
      pt.dt = 0.002 * i + 1e-4 * ring;
      pt.xyz = Vec3(coord(rng), coord(rng), coord(rng));
      scan.points.push_back(pt);
    }
  }
  return scan;
}

bool scans_identical(const RawScan& a, const RawScan& b) {
  if (a.lidar_id != b.lidar_id || a.channel_count != b.channel_count) {
    return false;
  }
  if (a.t_start != b.t_start || a.t_end != b.t_end) return false;
  if (a.points.size() != b.points.size()) return false;
  for (size_t i = 0; i < a.points.size(); ++i) {
    if (a.points[i].ring != b.points[i].ring) return false;
    if (a.points[i].dt != b.points[i].dt) return false;
    if (a.points[i].xyz != b.points[i].xyz) return false;
  }
  return true;
}

std::vector<TrajectoryRecord> figure_trajectory(int count) {
  std::vector<TrajectoryRecord> records;
  for (int i = 0; i < count; ++i) {
    const double t = 0.05 * i;
    TrajectoryRecord r;
    r.t = t;
    r.p = Vec3(std::sin(0.3 * t), 2.0 * std::cos(0.2 * t), 0.1 * t);
    r.q = exp_rotvec(Vec3(0.1 * std::sin(t), 0.05 * t, 0.2 * std::cos(t)));
    records.push_back(r);
  }
  return records;
}

std::string first_line_with(const std::string& text, const std::string& key) {
  size_t pos = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    if (line.rfind(key + " ", 0) == 0) return line;
    pos = end + 1;
  }
  return {};
}

}  // namespace

TEST_CASE("config format and parse round trip every key") {
  PipelineConfig cfg = default_config();
  cfg.window_size = 7;
  cfg.matching_rounds = 3;
  cfg.threads = 4;
  cfg.gravity_magnitude = 9.80665;
  cfg.extraction.half_window = 6;
  cfg.extraction.edge_threshold = 0.77;
  cfg.extraction.reject_unreliable = false;
  cfg.matcher.knn = 7;
  cfg.matcher.plane_leaf = 0.31;
  cfg.solver.max_iterations = 12;
  cfg.solver.lidar_sigma = 0.042;
  cfg.keyframes.min_angle = 0.3;
  cfg.keyframes.max_size = 123;
  cfg.imu_noise.gyro_bias_rw = 3e-6;

  const std::string text = format_config(cfg);
  const PipelineConfig back = parse_config(text);
  CHECK(format_config(back) == text);
  CHECK(back.window_size == 7);
  CHECK(back.extraction.reject_unreliable == false);
  CHECK(back.keyframes.max_size == 123);
  CHECK(back.imu_noise.gyro_bias_rw == 3e-6);
  CHECK(back.solver.lidar_sigma == 0.042);
}

TEST_CASE("config defaults print as the documented values") {
  const std::string text = format_config(default_config());
  CHECK(first_line_with(text, "window_size") == "window_size 10");
  CHECK(first_line_with(text, "matching_rounds") == "matching_rounds 2");
  CHECK(first_line_with(text, "gravity") == "gravity 9.81");
  CHECK(first_line_with(text, "extraction.half_window") ==
        "extraction.half_window 5");
  CHECK(first_line_with(text, "extraction.edge_threshold") ==
        "extraction.edge_threshold 0.5");
  CHECK(first_line_with(text, "extraction.plane_threshold") ==
        "extraction.plane_threshold 0.05");
  CHECK(first_line_with(text, "matcher.min_fitness") ==
        "matcher.min_fitness 0.1");
  CHECK(first_line_with(text, "matcher.map_keyframes") ==
        "matcher.map_keyframes 10");
  CHECK(first_line_with(text, "solver.lidar_sigma") ==
        "solver.lidar_sigma 0.05");
  CHECK(first_line_with(text, "keyframes.min_distance") ==
        "keyframes.min_distance 1");
  CHECK(first_line_with(text, "imu.gyro_sigma") == "imu.gyro_sigma 0.001");
  CHECK(first_line_with(text, "imu.gyro_bias_rw") == "imu.gyro_bias_rw 1e-05");
}

TEST_CASE("config partial override keeps the other defaults") {
  const PipelineConfig cfg = parse_config(
      "# tuning for a slow platform\n"
      "threads 8\n"
      "\n"
      "solver.max_iterations 4   # fewer passes\n"
      "extraction.plane_threshold 0.02\n");
  CHECK(cfg.threads == 8);
  CHECK(cfg.solver.max_iterations == 4);
  CHECK(cfg.extraction.plane_threshold == 0.02);
  CHECK(cfg.window_size == 10);
  CHECK(cfg.matcher.knn == 5);
  CHECK(cfg.solver.huber_delta == 1.0);
}

TEST_CASE("config parse errors carry the line number") {
  CHECK_THROWS_WITH_AS(parse_config("threads 2\nwarp_speed 11\n"),
                       doctest::Contains("config:2"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config("threads fast\n"),
                       doctest::Contains("config:1"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config("\n\nthreads\n"),
                       doctest::Contains("config:3"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config("threads 2 4\n"),
                       doctest::Contains("trailing"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config("gravity nan\n"),
                       doctest::Contains("bad value"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config("threads 2.5\n"),
                       doctest::Contains("bad value"), std::runtime_error);
}

TEST_CASE("config file save and load round trip") {
  TempDir dir;
  PipelineConfig cfg = default_config();
  cfg.matcher.edge_leaf = 0.123;
  cfg.threads = 3;
  save_config(cfg, dir.file("pipeline.cfg"));
  const PipelineConfig back = load_config(dir.file("pipeline.cfg"));
  CHECK(format_config(back) == format_config(cfg));
  CHECK_THROWS_WITH_AS(load_config(dir.file("missing.cfg")),
                       doctest::Contains("cannot open"), std::runtime_error);
}

TEST_CASE("scan files round trip in both formats") {
  TempDir dir;
  const RawScan scan = sample_scan();

  write_scan(scan, dir.file("sweep.txt"));
  const RawScan text_back = read_scan(dir.file("sweep.txt"));
  CHECK(scans_identical(scan, text_back));

  write_scan(scan, dir.file("sweep.bin"));
  const RawScan bin_back = read_scan(dir.file("sweep.bin"));
  CHECK(scans_identical(scan, bin_back));
  CHECK(scans_identical(text_back, bin_back));
}

TEST_CASE("scan directory reads are ordered by sweep time, not filename") {
  TempDir dir;
  RawScan scan = sample_scan();
  scan.t_start = 2.0;
  scan.t_end = 2.1;
  write_scan(scan, dir.file("a_late.txt"));
  scan.t_start = 0.5;
  scan.t_end = 0.6;
  write_scan(scan, dir.file("z_early.bin"));
  scan.t_start = 1.0;
  scan.t_end = 1.1;
  write_scan(scan, dir.file("m_middle.txt"));

  const std::vector<RawScan> scans = read_scan_dir(dir.path.string());
  REQUIRE(scans.size() == 3);
  CHECK(scans[0].t_start == 0.5);
  CHECK(scans[1].t_start == 1.0);
  CHECK(scans[2].t_start == 2.0);
}

TEST_CASE("malformed scan rows report the offending line") {
  TempDir dir;
  {
    std::FILE* f = std::fopen(dir.file("bad.txt").c_str(), "w");
    std::fputs("0 0 0.1 16\n1 0.001 1 2 3\n2 0.002 4 five 6\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_WITH_AS(read_scan(dir.file("bad.txt")),
                       doctest::Contains("line 3"), std::runtime_error);
  CHECK_THROWS_AS(read_scan(dir.file("absent.txt")), std::runtime_error);
}

TEST_CASE("imu csv round trip preserves every sample") {
  TempDir dir;
  std::vector<ImuSample> samples;
  std::mt19937 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 400; ++i) {
    ImuSample s;
    s.t = 0.005 * i;
    s.gyro = Vec3(n(rng), n(rng), n(rng));
    s.accel = Vec3(n(rng), n(rng), 9.81 + n(rng));
    samples.push_back(s);
  }
  write_imu_csv(samples, dir.file("imu.csv"));
  const std::vector<ImuSample> back = read_imu_csv(dir.file("imu.csv"));
  REQUIRE(back.size() == samples.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].t == samples[i].t);
    CHECK(back[i].gyro == samples[i].gyro);
    CHECK(back[i].accel == samples[i].accel);
  }

  {
    std::FILE* f = std::fopen(dir.file("shuffled.csv").c_str(), "w");
    std::fputs("0.1,0,0,0,0,0,9.81\n0.05,0,0,0,0,0,9.81\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_WITH_AS(read_imu_csv(dir.file("shuffled.csv")),
                       doctest::Contains("strictly increasing"),
                       std::runtime_error);
}

TEST_CASE("trajectory files round trip with quaternions intact") {
  TempDir dir;
  const std::vector<TrajectoryRecord> records = figure_trajectory(120);
  write_trajectory(records, dir.file("traj.txt"));
  const std::vector<TrajectoryRecord> back =
      read_trajectory(dir.file("traj.txt"));
  REQUIRE(back.size() == records.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].t == records[i].t);
    CHECK(back[i].p == records[i].p);
    CHECK(back[i].q.angle_to(records[i].q) <= 1e-12);
  }
}

TEST_CASE("map files round trip in both formats") {
  TempDir dir;
  std::vector<MapPoint> points;
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> coord(-50.0, 50.0);
  for (int i = 0; i < 500; ++i) {
    MapPoint pt;
    pt.xyz = Vec3(coord(rng), coord(rng), coord(rng));
    pt.kind = (i % 3 == 0) ? FeatureKind::kEdge : FeatureKind::kPlane;
    points.push_back(pt);
  }
  for (const char* name : {"map.txt", "map.bin"}) {
    write_map_points(points, dir.file(name));
    const std::vector<MapPoint> back = read_map_points(dir.file(name));
    REQUIRE(back.size() == points.size());
    for (size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].xyz == points[i].xyz);
      CHECK(back[i].kind == points[i].kind);
    }
  }
}

TEST_CASE("manifest validation rejects inconsistent layouts") {
  TempDir dir;
  fs::create_directories(dir.file("lidar0"));
  fs::create_directories(dir.file("lidar1"));
  write_imu_csv({}, dir.file("imu.csv"));

  auto manifest_with = [&](const std::string& body) {
    std::FILE* f = std::fopen(dir.file("manifest.txt").c_str(), "w");
    std::fputs(body.c_str(), f);
    std::fclose(f);
    return load_manifest(dir.file("manifest.txt"));
  };

  const DatasetManifest ok = manifest_with(
      "imu imu.csv\nlidar 0 primary lidar0\nlidar 1 secondary lidar1\n");
  CHECK(ok.lidars.size() == 2);
  CHECK(ok.lidars[0].primary);
  CHECK(ok.root == dir.path.string());
  CHECK(dataset_path(ok, ok.imu_file) == dir.file("imu.csv"));

  CHECK_THROWS_WITH_AS(
      manifest_with("imu imu.csv\nlidar 0 primary lidar0\n"
                    "lidar 0 secondary lidar1\n"),
      doctest::Contains("duplicate lidar id"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      manifest_with("imu imu.csv\nlidar 0 primary lidar0\n"
                    "lidar 1 primary lidar1\n"),
      doctest::Contains("exactly one primary"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      manifest_with("imu imu.csv\nlidar 0 secondary lidar0\n"),
      doctest::Contains("exactly one primary"), std::runtime_error);
  CHECK_THROWS_WITH_AS(manifest_with("lidar 0 primary lidar0\n"),
                       doctest::Contains("no imu file"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      manifest_with("imu nope.csv\nlidar 0 primary lidar0\n"),
      doctest::Contains("does not exist"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      manifest_with("imu imu.csv\nlidar 0 primary lidar9\n"),
      doctest::Contains("does not exist"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      manifest_with("imu imu.csv\nrover 1\nlidar 0 primary lidar0\n"),
      doctest::Contains("unknown key"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      manifest_with("imu imu.csv\nlidar 0 captain lidar0\n"),
      doctest::Contains("primary or secondary"), std::runtime_error);
}

TEST_CASE("simulated dataset writes to disk and reloads identically") {
  TempDir dir;
  ScenarioConfig scenario;
  scenario.duration = 0.55;
  scenario.seed = 21;
  const SimulatedDataset data =
      simulate_scenario(ScenarioKind::kHover, scenario);
  REQUIRE(data.scans.size() == 2);

  PipelineConfig cfg = default_config();
  cfg.threads = 2;
  const DatasetManifest written =
      write_dataset(data, dir.path.string(), cfg, false);
  CHECK(written.lidars.size() == 2);

  const DatasetManifest manifest =
      load_manifest((dir.path / "manifest.txt").string());
  REQUIRE(manifest.lidars.size() == 2);
  CHECK(manifest.lidars[0].primary);
  CHECK_FALSE(manifest.lidars[1].primary);

  const PipelineConfig cfg_back =
      load_config(dataset_path(manifest, manifest.config_file));
  CHECK(format_config(cfg_back) == format_config(cfg));

  const std::vector<ImuSample> imu_back =
      read_imu_csv(dataset_path(manifest, manifest.imu_file));
  REQUIRE(imu_back.size() == data.imu.size());
  CHECK(imu_back.back().t == data.imu.back().t);
  CHECK(imu_back.back().accel == data.imu.back().accel);

  const std::vector<TrajectoryRecord> truth = read_trajectory(
      dataset_path(manifest, manifest.ground_truth_file));
  CHECK(truth.size() == data.ground_truth.size());

  for (size_t i = 0; i < manifest.lidars.size(); ++i) {
    const std::vector<RawScan> scans =
        read_scan_dir(dataset_path(manifest, manifest.lidars[i].scan_dir));
    REQUIRE(scans.size() == data.scans[i].size());
    for (size_t k = 0; k < scans.size(); ++k) {
      CHECK(scans_identical(scans[k], data.scans[i][k]));
    }
  }
}

TEST_CASE("ate of a trajectory against itself is zero") {
  const std::vector<TrajectoryRecord> truth = figure_trajectory(100);
  const AteResult r = evaluate_ate(truth, truth);
  CHECK(r.pairs == 100);
  CHECK(r.rmse <= 1e-12);
  CHECK(r.max <= 1e-12);
  CHECK(r.orientation_max_deg <= 1e-9);
}

TEST_CASE("alignment removes a common rigid displacement") {
  const std::vector<TrajectoryRecord> truth = figure_trajectory(150);
  const RigidTransform offset{exp_rotvec(Vec3(0.4, -0.2, 1.1)),
                              Vec3(10.0, -3.0, 25.0)};
  std::vector<TrajectoryRecord> est = truth;
  for (TrajectoryRecord& r : est) {
    r.p = offset(r.p);
    r.q = offset.q * r.q;
  }

  const AteResult aligned = evaluate_ate(est, truth);
  CHECK(aligned.rmse <= 1e-9);
  CHECK(aligned.orientation_max_deg <= 1e-6);

  AteOptions raw;
  raw.align = false;
  const AteResult unaligned = evaluate_ate(est, truth, raw);
  CHECK(unaligned.rmse > 1.0);
}

TEST_CASE("unaligned error statistics match a hand-built offset") {
  const std::vector<TrajectoryRecord> truth = figure_trajectory(100);
  std::vector<TrajectoryRecord> est = truth;
  for (size_t i = 0; i < est.size(); i += 2) est[i].p.x() += 0.1;

  AteOptions opts;
  opts.align = false;
  const AteResult r = evaluate_ate(est, truth, opts);
  CHECK(r.pairs == 100);
  CHECK(r.rmse == doctest::Approx(0.1 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(r.mean == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(r.max == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(r.per_axis_error[0].x() == doctest::Approx(0.1));
  CHECK(r.per_axis_error[1].x() == doctest::Approx(0.0));
}

TEST_CASE("orientation errors are reported independently of position") {
  const std::vector<TrajectoryRecord> truth = figure_trajectory(60);
  std::vector<TrajectoryRecord> est = truth;
  est[30].q = est[30].q * exp_rotvec(Vec3(0.01, 0.0, 0.0));

  AteOptions opts;
  opts.align = false;
  const AteResult r = evaluate_ate(est, truth, opts);
  CHECK(r.rmse <= 1e-12);
  CHECK(r.orientation_max_deg ==
        doctest::Approx(0.01 * 180.0 / M_PI).epsilon(1e-6));
}

TEST_CASE("association respects the timestamp gap") {
  const std::vector<TrajectoryRecord> truth = figure_trajectory(100);

  std::vector<TrajectoryRecord> est = truth;
  for (TrajectoryRecord& r : est) r.t += 0.004;
  const AteResult near = evaluate_ate(est, truth);
  CHECK(near.pairs == 100);

  for (TrajectoryRecord& r : est) r.t += 0.021;
  CHECK_THROWS_WITH_AS(evaluate_ate(est, truth),
                       doctest::Contains("at least 10"), std::runtime_error);

  const std::vector<TrajectoryRecord> tiny(truth.begin(), truth.begin() + 5);
  CHECK_THROWS_AS(evaluate_ate(tiny, truth), std::runtime_error);
}
