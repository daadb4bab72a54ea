#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "chebyodo/tensor.hpp"

namespace chebyodo {

inline constexpr double kStandardGravity = 9.80665;  // m/s^2

// One recorded (or synthesized) IMU sequence. Inertial samples are stored in
// the body frame; `orientation` holds the body-to-world rotation per sample.
struct ImuSequence {
  double sample_rate_hz = 0.0;
  bool gravity_removed = false;
  std::vector<double> t;                          // s, strictly increasing
  std::vector<std::array<double, 3>> gyro;        // rad/s, body frame
  std::vector<std::array<double, 3>> accel;       // m/s^2, body frame
  std::vector<std::array<double, 4>> orientation; // unit quaternion (w,x,y,z)
  std::vector<std::array<double, 3>> gt_pos;      // m, world frame

  std::size_t size() const { return t.size(); }
};

// Integrity checks shared by the reader and the synthesizer: equal array
// lengths (>= 2), unit quaternions (1e-6), time deltas within 1% of the
// nominal sample interval. Violations raise FormatError.
void validate_sequence(const ImuSequence& seq);

// CSV round trip. First line `#imuseq v1 rate=<hz> gravity_removed=<bool>`,
// then a named column header and one row per sample at 17 significant
// digits, which round-trips doubles to better than 1e-9 relative error.
ImuSequence read_sequence(const std::string& path);
void write_sequence(const ImuSequence& seq, const std::string& path);

// Rotate v from the body frame to the world frame by unit quaternion q.
std::array<double, 3> quat_rotate(const std::array<double, 4>& q,
                                  const std::array<double, 3>& v);
// The inverse rotation (world to body).
std::array<double, 3> quat_rotate_inverse(const std::array<double, 4>& q,
                                          const std::array<double, 3>& v);

// Per-sample world-frame inertial signals.
struct WorldSignals {
  std::vector<std::array<double, 3>> gyro;
  std::vector<std::array<double, 3>> accel;
};
WorldSignals rotate_to_world(const ImuSequence& seq);

// Subtract gravity in the world frame and store the result back in the body
// frame: accel' = R(q)^T (R(q) accel - (0,0,g)). Sets gravity_removed; a
// second application is a contract error.
ImuSequence remove_gravity(const ImuSequence& seq, double g = kStandardGravity);

// Windowed training batch. inputs stacks world-frame rows [gyro; accel] per
// window; the target is the window-mean 2-D world velocity
// (gt_xy[start+W-1] - gt_xy[start]) * rate / (W-1).
struct WindowBatch {
  Tensor inputs;   // [B x 6 x W]
  Tensor targets;  // [B x 2]
  std::vector<int> window_starts;
  int window_size = 0;

  int count() const { return static_cast<int>(window_starts.size()); }
};

WindowBatch make_windows(const ImuSequence& seq, int window, int stride,
                         bool require_gravity_removed = true);
// Copy window `index` out of the batch as a [6 x W] tensor.
Tensor window_input(const WindowBatch& batch, int index);
std::array<double, 2> window_target(const WindowBatch& batch, int index);

// Concatenate batches from several sequences along the batch axis. All parts
// must share window_size; window_starts keep their per-sequence values, so the
// merged batch is suitable for training (which ignores starts) but not for
// trajectory reconstruction.
WindowBatch merge_windows(const std::vector<WindowBatch>& parts);

// ---- Synthetic trajectories ---------------------------------------------------

struct NoiseSpec {
  double gyro_density = 0.0;   // rad/s/sqrt(Hz)
  double accel_density = 0.0;  // m/s^2/sqrt(Hz)
};

// Closed-form desk-scale trajectories. The low 8 seed bits drive the noise
// realization; the remaining bits vary the path geometry (start heading,
// figure rotation, phase), so distinct experiment seeds trace distinct
// trajectories while staying fully reproducible.
struct SynthSpec {
  enum class Shape { kLine, kCircle, kLissajous };
  Shape shape = Shape::kLine;
  double speed = 1.0;            // m/s; see the per-shape notes in synth_path_state
  double duration = 60.0;        // s
  double sample_rate_hz = 200.0;
  NoiseSpec noise;
  std::array<double, 3> gyro_bias{0.0, 0.0, 0.0};
  std::array<double, 3> accel_bias{0.0, 0.0, 0.0};
  bool include_gravity = false;
  std::uint64_t seed = 0;
};

// Analytic state of the noise-free path at time t (world frame).
//   line:      constant velocity `speed` along a seed-chosen heading.
//   circle:    one revolution per 20 s, radius = speed / omega, so the
//              tangential speed equals `speed`.
//   lissajous: 4 s fundamental; x at omega, y at 2*omega, plus a vertical
//              z oscillation at omega (per-axis peak speeds {1, 1.6, 0.5} x
//              `speed`); the horizontal speed never reaches zero, keeping the
//              heading well-defined.
// Orientation is heading-following yaw only.
struct PathState {
  std::array<double, 3> pos{};
  std::array<double, 3> vel{};
  std::array<double, 3> acc{};
  double yaw = 0.0;
  double yaw_rate = 0.0;
};
PathState synth_path_state(const SynthSpec& spec, double t);

// Sample the path at the configured rate: exact gt_pos, heading quaternions,
// body-frame gyro/accel with optional gravity, bias, and white noise
// (discrete std = density * sqrt(rate)). Deterministic per spec.
ImuSequence synthesize(const SynthSpec& spec);

}  // namespace chebyodo
