#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "chebyodo/data.hpp"
#include "chebyodo/training.hpp"

namespace chebyodo {

// Synthetic dataset description: `count` sequences cycling through `shapes`.
// Sequence i is seeded with base_seed + i * 257 so that both the geometry
// bits (seed >> 8) and the noise bits (low byte) change from file to file.
struct SynthConfig {
  std::vector<SynthSpec::Shape> shapes = {SynthSpec::Shape::kLine,
                                          SynthSpec::Shape::kCircle,
                                          SynthSpec::Shape::kLissajous};
  int count = 6;
  double speed = 1.0;
  double duration = 60.0;
  double sample_rate_hz = 200.0;
  NoiseSpec noise{1e-4, 1e-3};
  std::array<double, 3> gyro_bias{0.0, 0.0, 0.0};
  std::array<double, 3> accel_bias{0.0, 0.0, 0.0};
  bool include_gravity = false;
  std::uint64_t base_seed = 1;
};

// Windowing and reporting knobs that sit outside the model itself.
struct PipelineConfig {
  int train_stride = 100;
  int eval_stride = 10;
  int val_sequences = 1;  // trailing sequences (by sorted name) held for validation
  double rte_interval_s = 60.0;
  // Refuse windows over sequences that still contain gravity. Turned off for
  // ablation studies that deliberately train on raw signals.
  bool require_gravity_removed = true;
};

// Everything a run needs, parsed from a flat `key = value` file. Every field
// has a default, so an empty file is a valid config.
struct RunConfig {
  ModelConfig model;
  SynthConfig synth;
  PipelineConfig pipeline;
};

// Parses UTF-8 text in `key = value` form. `#` starts a comment (full line or
// trailing), blank lines are skipped, and keys may appear at most once.
// Unknown keys, malformed lines, and unparsable values raise FormatError with
// `source` and the line number. Range validation beyond parsing is left to
// resolve_config / synthesize at the point of use.
RunConfig parse_run_config(const std::string& text, const std::string& source);

// Reads `path` and parses it; a missing file raises ContractError.
RunConfig load_run_config(const std::string& path);

// Writes every key with its resolved value (defaults included) in canonical
// order, one `key = value` per line. Parsing the echo reproduces the config.
void echo_run_config(const RunConfig& config, std::ostream& out);

const char* shape_name(SynthSpec::Shape shape);
SynthSpec::Shape shape_from_name(const std::string& name);

// Expands the synth block into one spec per sequence.
std::vector<SynthSpec> synth_specs(const SynthConfig& config);

}  // namespace chebyodo
