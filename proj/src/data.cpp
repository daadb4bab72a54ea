#include "chebyodo/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "chebyodo/errors.hpp"
#include "chebyodo/rng.hpp"

namespace chebyodo {

namespace {

constexpr char kHeaderColumns[] = "t,gx,gy,gz,ax,ay,az,qw,qx,qy,qz,px,py,pz";
constexpr int kColumnCount = 14;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& token, int line_no, const char* what) {
  const char* begin = token.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw FormatError("sequence line " + std::to_string(line_no) + ": bad " + what +
                      " value '" + token + "'");
  }
  return v;
}

double frac(double x) { return x - std::floor(x); }

// Geometry parameters derived from the high seed bits.
struct PathGeometry {
  double heading = 0.0;   // line/circle start heading, lissajous figure rotation
  double time_shift = 0.0;  // lissajous start-phase shift, in seconds
  double turn_sign = 1.0;   // circle direction
};

PathGeometry path_geometry(const SynthSpec& spec) {
  const auto geo = static_cast<double>(spec.seed >> 8);
  PathGeometry g;
  g.heading = 2.0 * std::numbers::pi * frac(geo * 0.6180339887498949);
  g.time_shift = frac(geo * 0.3819660112501051);
  g.turn_sign = ((spec.seed >> 8) & 1) ? -1.0 : 1.0;
  return g;
}

void validate_spec(const SynthSpec& spec) {
  if (!(spec.speed > 0.0)) throw ContractError("synth: speed must be positive");
  if (!(spec.duration > 0.0)) throw ContractError("synth: duration must be positive");
  if (!(spec.sample_rate_hz > 0.0)) throw ContractError("synth: sample rate must be positive");
  if (spec.noise.gyro_density < 0.0 || spec.noise.accel_density < 0.0) {
    throw ContractError("synth: noise densities must be non-negative");
  }
}

std::array<double, 4> yaw_quaternion(double yaw) {
  return {std::cos(0.5 * yaw), 0.0, 0.0, std::sin(0.5 * yaw)};
}

}  // namespace

void validate_sequence(const ImuSequence& seq) {
  const std::size_t n = seq.size();
  if (n < 2) throw FormatError("sequence: needs at least 2 samples");
  if (seq.gyro.size() != n || seq.accel.size() != n || seq.orientation.size() != n ||
      seq.gt_pos.size() != n) {
    throw FormatError("sequence: arrays have mismatched lengths");
  }
  if (!(seq.sample_rate_hz > 0.0)) throw FormatError("sequence: sample rate must be positive");
  const double dt_nominal = 1.0 / seq.sample_rate_hz;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      const double dt = seq.t[i] - seq.t[i - 1];
      if (!(dt > 0.0)) {
        throw FormatError("sequence: timestamps must be strictly increasing (sample " +
                          std::to_string(i) + ")");
      }
      if (std::abs(dt - dt_nominal) > 0.01 * dt_nominal) {
        throw FormatError("sequence: time step at sample " + std::to_string(i) +
                          " deviates more than 1% from the nominal interval");
      }
    }
    const auto& q = seq.orientation[i];
    const double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (std::abs(norm - 1.0) > 1e-6) {
      throw FormatError("sequence: non-unit quaternion at sample " + std::to_string(i));
    }
  }
}

ImuSequence read_sequence(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open sequence file '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw FormatError("sequence file '" + path + "' is empty");
  std::istringstream meta(line);
  std::string tag, version, token;
  meta >> tag >> version;
  if (tag != "#imuseq" || version != "v1") {
    throw FormatError("sequence file '" + path + "': missing '#imuseq v1' header");
  }
  ImuSequence seq;
  bool have_rate = false, have_flag = false;
  while (meta >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw FormatError("sequence header: bad token '" + token + "'");
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    if (key == "rate") {
      seq.sample_rate_hz = parse_double(value, 1, "rate");
      have_rate = true;
    } else if (key == "gravity_removed") {
      if (value != "true" && value != "false") {
        throw FormatError("sequence header: gravity_removed must be true or false");
      }
      seq.gravity_removed = value == "true";
      have_flag = true;
    } else {
      throw FormatError("sequence header: unknown key '" + key + "'");
    }
  }
  if (!have_rate || !have_flag) {
    throw FormatError("sequence header: rate and gravity_removed are required");
  }

  if (!std::getline(in, line) || line != kHeaderColumns) {
    throw FormatError("sequence file '" + path + "': column header must be '" +
                      std::string(kHeaderColumns) + "'");
  }

  int line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::array<double, kColumnCount> row{};
    std::size_t pos = 0;
    for (int c = 0; c < kColumnCount; ++c) {
      const std::size_t next = line.find(',', pos);
      const bool last = c == kColumnCount - 1;
      if (!last && next == std::string::npos) {
        throw FormatError("sequence line " + std::to_string(line_no) + ": expected " +
                          std::to_string(kColumnCount) + " columns");
      }
      if (last && next != std::string::npos) {
        throw FormatError("sequence line " + std::to_string(line_no) + ": too many columns");
      }
      const std::string token_str =
          last ? line.substr(pos) : line.substr(pos, next - pos);
      row[c] = parse_double(token_str, line_no, "column");
      pos = next + 1;
    }
    seq.t.push_back(row[0]);
    seq.gyro.push_back({row[1], row[2], row[3]});
    seq.accel.push_back({row[4], row[5], row[6]});
    seq.orientation.push_back({row[7], row[8], row[9], row[10]});
    seq.gt_pos.push_back({row[11], row[12], row[13]});
  }
  validate_sequence(seq);
  return seq;
}

void write_sequence(const ImuSequence& seq, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write sequence file '" + path + "'");
  out << "#imuseq v1 rate=" << format_double(seq.sample_rate_hz) << " gravity_removed="
      << (seq.gravity_removed ? "true" : "false") << '\n';
  out << kHeaderColumns << '\n';
  for (std::size_t i = 0; i < seq.size(); ++i) {
    out << format_double(seq.t[i]);
    for (double v : seq.gyro[i]) out << ',' << format_double(v);
    for (double v : seq.accel[i]) out << ',' << format_double(v);
    for (double v : seq.orientation[i]) out << ',' << format_double(v);
    for (double v : seq.gt_pos[i]) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw FormatError("failed while writing sequence file '" + path + "'");
}

std::array<double, 3> quat_rotate(const std::array<double, 4>& q,
                                  const std::array<double, 3>& v) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {
      (1 - 2 * (y * y + z * z)) * v[0] + 2 * (x * y - w * z) * v[1] +
          2 * (x * z + w * y) * v[2],
      2 * (x * y + w * z) * v[0] + (1 - 2 * (x * x + z * z)) * v[1] +
          2 * (y * z - w * x) * v[2],
      2 * (x * z - w * y) * v[0] + 2 * (y * z + w * x) * v[1] +
          (1 - 2 * (x * x + y * y)) * v[2],
  };
}

std::array<double, 3> quat_rotate_inverse(const std::array<double, 4>& q,
                                          const std::array<double, 3>& v) {
  return quat_rotate({q[0], -q[1], -q[2], -q[3]}, v);
}

WorldSignals rotate_to_world(const ImuSequence& seq) {
  WorldSignals out;
  out.gyro.reserve(seq.size());
  out.accel.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    out.gyro.push_back(quat_rotate(seq.orientation[i], seq.gyro[i]));
    out.accel.push_back(quat_rotate(seq.orientation[i], seq.accel[i]));
  }
  return out;
}

ImuSequence remove_gravity(const ImuSequence& seq, double g) {
  if (seq.gravity_removed) {
    throw ContractError("remove_gravity: gravity was already removed from this sequence");
  }
  ImuSequence out = seq;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::array<double, 3> world = quat_rotate(seq.orientation[i], seq.accel[i]);
    world[2] -= g;
    out.accel[i] = quat_rotate_inverse(seq.orientation[i], world);
  }
  out.gravity_removed = true;
  return out;
}

WindowBatch make_windows(const ImuSequence& seq, int window, int stride,
                         bool require_gravity_removed) {
  if (window < 2) throw ContractError("make_windows: window must span at least 2 samples");
  if (stride < 1) throw ContractError("make_windows: stride must be >= 1");
  const int n = static_cast<int>(seq.size());
  if (window > n) {
    throw ContractError("make_windows: window of " + std::to_string(window) +
                        " exceeds sequence length " + std::to_string(n));
  }
  if (require_gravity_removed && !seq.gravity_removed) {
    throw ContractError(
        "make_windows: sequence still contains gravity; remove it first or override");
  }

  const WorldSignals world = rotate_to_world(seq);
  WindowBatch batch;
  batch.window_size = window;
  for (int s = 0; s + window <= n; s += stride) batch.window_starts.push_back(s);
  const int b = batch.count();

  std::vector<double> inputs(static_cast<std::size_t>(b) * 6 * window);
  std::vector<double> targets(static_cast<std::size_t>(b) * 2);
  const double rate = seq.sample_rate_hz;
  for (int wi = 0; wi < b; ++wi) {
    const int s = batch.window_starts[wi];
    double* block = inputs.data() + static_cast<std::size_t>(wi) * 6 * window;
    for (int c = 0; c < window; ++c) {
      const auto& gy = world.gyro[s + c];
      const auto& ac = world.accel[s + c];
      for (int a = 0; a < 3; ++a) {
        block[static_cast<std::size_t>(a) * window + c] = gy[a];
        block[static_cast<std::size_t>(3 + a) * window + c] = ac[a];
      }
    }
    const int e = s + window - 1;
    const double inv_dt = rate / static_cast<double>(window - 1);
    targets[static_cast<std::size_t>(wi) * 2 + 0] =
        (seq.gt_pos[e][0] - seq.gt_pos[s][0]) * inv_dt;
    targets[static_cast<std::size_t>(wi) * 2 + 1] =
        (seq.gt_pos[e][1] - seq.gt_pos[s][1]) * inv_dt;
  }
  batch.inputs = Tensor::from({b, 6, window}, std::move(inputs));
  batch.targets = Tensor::from({b, 2}, std::move(targets));
  return batch;
}

Tensor window_input(const WindowBatch& batch, int index) {
  if (index < 0 || index >= batch.count()) {
    throw ContractError("window_input: index out of range");
  }
  const int w = batch.window_size;
  const std::size_t block = static_cast<std::size_t>(6) * w;
  std::vector<double> values(batch.inputs.vec().begin() + index * block,
                             batch.inputs.vec().begin() + (index + 1) * block);
  return Tensor::from({6, w}, std::move(values));
}

std::array<double, 2> window_target(const WindowBatch& batch, int index) {
  if (index < 0 || index >= batch.count()) {
    throw ContractError("window_target: index out of range");
  }
  return {batch.targets.vec()[static_cast<std::size_t>(index) * 2],
          batch.targets.vec()[static_cast<std::size_t>(index) * 2 + 1]};
}

WindowBatch merge_windows(const std::vector<WindowBatch>& parts) {
  if (parts.empty()) throw ContractError("merge_windows: no batches given");
  const int window = parts.front().window_size;
  std::size_t total = 0;
  for (const WindowBatch& part : parts) {
    if (part.window_size != window) {
      throw ContractError("merge_windows: mismatched window sizes " +
                          std::to_string(window) + " and " +
                          std::to_string(part.window_size));
    }
    total += part.window_starts.size();
  }
  if (total == 0) throw ContractError("merge_windows: all batches are empty");

  WindowBatch merged;
  merged.window_size = window;
  merged.window_starts.reserve(total);
  std::vector<double> inputs;
  std::vector<double> targets;
  inputs.reserve(total * 6 * static_cast<std::size_t>(window));
  targets.reserve(total * 2);
  for (const WindowBatch& part : parts) {
    if (part.count() == 0) continue;
    merged.window_starts.insert(merged.window_starts.end(),
                                part.window_starts.begin(),
                                part.window_starts.end());
    inputs.insert(inputs.end(), part.inputs.vec().begin(), part.inputs.vec().end());
    targets.insert(targets.end(), part.targets.vec().begin(), part.targets.vec().end());
  }
  const int b = static_cast<int>(total);
  merged.inputs = Tensor::from({b, 6, window}, std::move(inputs));
  merged.targets = Tensor::from({b, 2}, std::move(targets));
  return merged;
}

PathState synth_path_state(const SynthSpec& spec, double t) {
  validate_spec(spec);
  const PathGeometry geo = path_geometry(spec);
  PathState s;
  switch (spec.shape) {
    case SynthSpec::Shape::kLine: {
      const double c = std::cos(geo.heading), sn = std::sin(geo.heading);
      s.pos = {spec.speed * t * c, spec.speed * t * sn, 0.0};
      s.vel = {spec.speed * c, spec.speed * sn, 0.0};
      s.acc = {0.0, 0.0, 0.0};
      s.yaw = geo.heading;
      s.yaw_rate = 0.0;
      break;
    }
    case SynthSpec::Shape::kCircle: {
      // One revolution per 20 s keeps the radius at desk scale.
      const double omega = geo.turn_sign * 2.0 * std::numbers::pi / 20.0;
      const double r = spec.speed / std::abs(omega);
      const double theta0 = geo.heading;
      const double theta = theta0 + omega * t;
      s.pos = {r * (std::cos(theta) - std::cos(theta0)),
               r * (std::sin(theta) - std::sin(theta0)), 0.0};
      s.vel = {-r * omega * std::sin(theta), r * omega * std::cos(theta), 0.0};
      s.acc = {-r * omega * omega * std::cos(theta), -r * omega * omega * std::sin(theta),
               0.0};
      s.yaw = std::atan2(s.vel[1], s.vel[0]);
      s.yaw_rate = omega;
      break;
    }
    case SynthSpec::Shape::kLissajous: {
      // 4 s fundamental; the y phase of pi/4 keeps the horizontal velocity
      // bounded away from zero so the heading never degenerates. The whole
      // figure is rotated in the plane by the seed-derived heading.
      const double omega = 2.0 * std::numbers::pi / 4.0;
      const double amp = spec.speed / omega;
      const double ay_amp = 0.8 * amp;
      const double az_amp = 0.5 * amp;
      const double tau = t + geo.time_shift * 4.0;
      const double py = std::numbers::pi / 4.0;
      const double pz = std::numbers::pi / 3.0;

      const double x = amp * std::sin(omega * tau);
      const double y = ay_amp * std::sin(2.0 * omega * tau + py);
      const double vx = amp * omega * std::cos(omega * tau);
      const double vy = 2.0 * ay_amp * omega * std::cos(2.0 * omega * tau + py);
      const double ax = -amp * omega * omega * std::sin(omega * tau);
      const double ay = -4.0 * ay_amp * omega * omega * std::sin(2.0 * omega * tau + py);

      const double c = std::cos(geo.heading), sn = std::sin(geo.heading);
      auto rot = [&](double u, double v) {
        return std::array<double, 2>{c * u - sn * v, sn * u + c * v};
      };
      const auto p0 = rot(x, y);
      const auto p_start = rot(amp * std::sin(omega * geo.time_shift * 4.0),
                               ay_amp * std::sin(2.0 * omega * geo.time_shift * 4.0 + py));
      const auto v2 = rot(vx, vy);
      const auto a2 = rot(ax, ay);
      const double z0 = az_amp * std::sin(omega * geo.time_shift * 4.0 + pz);

      s.pos = {p0[0] - p_start[0], p0[1] - p_start[1],
               az_amp * std::sin(omega * tau + pz) - z0};
      s.vel = {v2[0], v2[1], az_amp * omega * std::cos(omega * tau + pz)};
      s.acc = {a2[0], a2[1], -az_amp * omega * omega * std::sin(omega * tau + pz)};
      s.yaw = std::atan2(s.vel[1], s.vel[0]);
      const double speed_sq = s.vel[0] * s.vel[0] + s.vel[1] * s.vel[1];
      s.yaw_rate = (s.vel[0] * s.acc[1] - s.vel[1] * s.acc[0]) / speed_sq;
      break;
    }
  }
  return s;
}

ImuSequence synthesize(const SynthSpec& spec) {
  validate_spec(spec);
  const auto n = static_cast<std::size_t>(std::llround(spec.duration * spec.sample_rate_hz));
  if (n < 2) throw ContractError("synth: duration too short for the sample rate");

  Rng rng(spec.seed);
  const double gyro_std = spec.noise.gyro_density * std::sqrt(spec.sample_rate_hz);
  const double accel_std = spec.noise.accel_density * std::sqrt(spec.sample_rate_hz);

  ImuSequence seq;
  seq.sample_rate_hz = spec.sample_rate_hz;
  seq.gravity_removed = !spec.include_gravity;
  seq.t.reserve(n);
  seq.gyro.reserve(n);
  seq.accel.reserve(n);
  seq.orientation.reserve(n);
  seq.gt_pos.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / spec.sample_rate_hz;
    const PathState state = synth_path_state(spec, t);
    const std::array<double, 4> q = yaw_quaternion(state.yaw);

    std::array<double, 3> accel_world = state.acc;
    if (spec.include_gravity) accel_world[2] += kStandardGravity;
    std::array<double, 3> accel_body = quat_rotate_inverse(q, accel_world);
    // Yaw-only rotation leaves the vertical axis fixed, so the body-frame
    // angular rate is simply the yaw rate about z.
    std::array<double, 3> gyro_body{0.0, 0.0, state.yaw_rate};
    for (int a = 0; a < 3; ++a) {
      gyro_body[a] += spec.gyro_bias[a] + gyro_std * rng.gaussian();
      accel_body[a] += spec.accel_bias[a] + accel_std * rng.gaussian();
    }

    seq.t.push_back(t);
    seq.gyro.push_back(gyro_body);
    seq.accel.push_back(accel_body);
    seq.orientation.push_back(q);
    seq.gt_pos.push_back(state.pos);
  }
  return seq;
}

}  // namespace chebyodo
