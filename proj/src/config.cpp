/// @file
/// Flat-text configuration parsing and formatting over a dotted-key table.

#include "miliom/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "number_format.hpp"

namespace miliom {
namespace {

struct KeyDef {
  const char* name;
  bool integer;
  std::function<double(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, double)> set;
};

// One entry per tunable; the cast in the setter restores the field's type.
#define MILIOM_CONFIG_KEY(key, is_int, field)                             \
  KeyDef {                                                                \
    key, is_int,                                                          \
        [](const PipelineConfig& c) {                                     \
          return static_cast<double>(c.field);                            \
        },                                                                \
        [](PipelineConfig& c, double v) {                                 \
          c.field = static_cast<decltype(PipelineConfig{}.field)>(v);     \
        }                                                                 \
  }

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      MILIOM_CONFIG_KEY("window_size", true, window_size),
      MILIOM_CONFIG_KEY("matching_rounds", true, matching_rounds),
      MILIOM_CONFIG_KEY("threads", true, threads),
      MILIOM_CONFIG_KEY("gravity", false, gravity_magnitude),
      MILIOM_CONFIG_KEY("extraction.half_window", true, extraction.half_window),
      MILIOM_CONFIG_KEY("extraction.sectors", true, extraction.sectors),
      MILIOM_CONFIG_KEY("extraction.max_edges_per_sector", true,
                        extraction.max_edges_per_sector),
      MILIOM_CONFIG_KEY("extraction.max_planes_per_sector", true,
                        extraction.max_planes_per_sector),
      MILIOM_CONFIG_KEY("extraction.edge_threshold", false,
                        extraction.edge_threshold),
      MILIOM_CONFIG_KEY("extraction.plane_threshold", false,
                        extraction.plane_threshold),
      MILIOM_CONFIG_KEY("extraction.reject_unreliable", true,
                        extraction.reject_unreliable),
      MILIOM_CONFIG_KEY("extraction.min_range", false, extraction.min_range),
      MILIOM_CONFIG_KEY("extraction.occlusion_gap", false,
                        extraction.occlusion_gap),
      MILIOM_CONFIG_KEY("extraction.parallel_ratio", false,
                        extraction.parallel_ratio),
      MILIOM_CONFIG_KEY("matcher.knn", true, matcher.knn),
      MILIOM_CONFIG_KEY("matcher.max_neighbor_radius", false,
                        matcher.max_neighbor_radius),
      MILIOM_CONFIG_KEY("matcher.min_fitness", false, matcher.min_fitness),
      MILIOM_CONFIG_KEY("matcher.plane_fit_max_dist", false,
                        matcher.plane_fit_max_dist),
      MILIOM_CONFIG_KEY("matcher.plane_spread_ratio", false,
                        matcher.plane_spread_ratio),
      MILIOM_CONFIG_KEY("matcher.max_match_dist", false,
                        matcher.max_match_dist),
      MILIOM_CONFIG_KEY("matcher.normal_max_angle_deg", false,
                        matcher.normal_max_angle_deg),
      MILIOM_CONFIG_KEY("matcher.edge_eigen_ratio", false,
                        matcher.edge_eigen_ratio),
      MILIOM_CONFIG_KEY("matcher.plane_leaf", false, matcher.plane_leaf),
      MILIOM_CONFIG_KEY("matcher.edge_leaf", false, matcher.edge_leaf),
      MILIOM_CONFIG_KEY("matcher.map_keyframes", true, matcher.map_keyframes),
      MILIOM_CONFIG_KEY("solver.max_iterations", true, solver.max_iterations),
      MILIOM_CONFIG_KEY("solver.function_tolerance", false,
                        solver.function_tolerance),
      MILIOM_CONFIG_KEY("solver.gradient_tolerance", false,
                        solver.gradient_tolerance),
      MILIOM_CONFIG_KEY("solver.step_tolerance", false, solver.step_tolerance),
      MILIOM_CONFIG_KEY("solver.initial_lambda", false, solver.initial_lambda),
      MILIOM_CONFIG_KEY("solver.huber_delta", false, solver.huber_delta),
      MILIOM_CONFIG_KEY("solver.lidar_sigma", false, solver.lidar_sigma),
      MILIOM_CONFIG_KEY("keyframes.min_distance", false,
                        keyframes.min_distance),
      MILIOM_CONFIG_KEY("keyframes.min_angle", false, keyframes.min_angle),
      MILIOM_CONFIG_KEY("keyframes.admission_knn", true,
                        keyframes.admission_knn),
      MILIOM_CONFIG_KEY("keyframes.max_size", true, keyframes.max_size),
      MILIOM_CONFIG_KEY("imu.gyro_sigma", false, imu_noise.gyro_sigma),
      MILIOM_CONFIG_KEY("imu.accel_sigma", false, imu_noise.accel_sigma),
      MILIOM_CONFIG_KEY("imu.gyro_bias_rw", false, imu_noise.gyro_bias_rw),
      MILIOM_CONFIG_KEY("imu.accel_bias_rw", false, imu_noise.accel_bias_rw),
  };
  return table;
}

#undef MILIOM_CONFIG_KEY

const KeyDef* find_key(const std::string& name) {
  for (const KeyDef& def : key_table()) {
    if (name == def.name) return &def;
  }
  return nullptr;
}

[[noreturn]] void fail(const std::string& source, int line,
                       const std::string& message) {
  throw std::runtime_error(source + ":" + std::to_string(line) + ": " +
                           message);
}

}  // namespace

PipelineConfig default_config() { return PipelineConfig{}; }

PipelineConfig parse_config(const std::string& text,
                            const std::string& source) {
  PipelineConfig config = default_config();
  std::istringstream stream(text);
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string key;
    if (!(fields >> key)) continue;
    std::string value;
    if (!(fields >> value)) fail(source, line_no, "key '" + key + "' has no value");
    std::string extra;
    if (fields >> extra) fail(source, line_no, "trailing token '" + extra + "'");
    const KeyDef* def = find_key(key);
    if (def == nullptr) fail(source, line_no, "unknown key '" + key + "'");
    const char* begin = value.c_str();
    char* end = nullptr;
    double parsed = 0.0;
    if (def->integer) {
      parsed = static_cast<double>(std::strtoll(begin, &end, 10));
    } else {
      parsed = std::strtod(begin, &end);
    }
    if (end != begin + value.size() || !std::isfinite(parsed)) {
      fail(source, line_no, "bad value '" + value + "' for key '" + key + "'");
    }
    def->set(config, parsed);
  }
  return config;
}

std::string format_config(const PipelineConfig& config) {
  std::string out;
  for (const KeyDef& def : key_table()) {
    out += def.name;
    out += ' ';
    if (def.integer) {
      out += std::to_string(
          static_cast<long long>(std::llround(def.get(config))));
    } else {
      out += detail::double_text(def.get(config));
    }
    out += '\n';
  }
  return out;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open config file");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path);
}

void save_config(const PipelineConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << format_config(config);
  if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace miliom
