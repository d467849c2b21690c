/// @file
/// Runtime configuration: one aggregate covering every tunable stage, plus a
/// flat `key value` text format for loading and saving it.

#pragma once

#include <string>

#include "miliom/estimator.hpp"
#include "miliom/frontend.hpp"
#include "miliom/imu.hpp"
#include "miliom/keyframes.hpp"
#include "miliom/matching.hpp"

namespace miliom {

/// Every tunable in one place. Defaults reproduce the stock pipeline; a file
/// only needs to name the keys it overrides.
struct PipelineConfig {
  FrontendConfig extraction;
  MatcherConfig matcher;
  SolverConfig solver;
  KeyframeConfig keyframes;
  ImuNoise imu_noise;
  int window_size = 10;      // sliding-window states
  int matching_rounds = 2;   // re-match + re-solve passes per frame
  int threads = 1;           // worker threads for map matching
  double gravity_magnitude = 9.81;
};

PipelineConfig default_config();

/// Parses the flat text format: one `key value` pair per line, `#` starts a
/// comment, blank lines ignored. Unknown keys and malformed values throw
/// std::runtime_error carrying `source` and the line number. Keys not present
/// keep their defaults.
PipelineConfig parse_config(const std::string& text,
                            const std::string& source = "config");

/// Emits every key with its current value, doubles at full precision, so
/// parse_config(format_config(c)) reproduces c exactly.
std::string format_config(const PipelineConfig& config);

PipelineConfig load_config(const std::string& path);
void save_config(const PipelineConfig& config, const std::string& path);

}  // namespace miliom
