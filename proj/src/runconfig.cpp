#include "chebyodo/runconfig.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <vector>

#include "chebyodo/errors.hpp"

namespace chebyodo {
namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

[[noreturn]] void fail(const std::string& source, int line, const std::string& what) {
  throw FormatError(source + ":" + std::to_string(line) + ": " + what);
}

long long parse_ll(const std::string& value, const std::string& source, int line,
                   const std::string& key) {
  long long out = 0;
  const char* first = value.data();
  const char* last = first + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    fail(source, line, "key '" + key + "' expects an integer, got '" + value + "'");
  }
  return out;
}

int parse_int(const std::string& value, const std::string& source, int line,
              const std::string& key) {
  return static_cast<int>(parse_ll(value, source, line, key));
}

std::uint64_t parse_u64(const std::string& value, const std::string& source, int line,
                        const std::string& key) {
  std::uint64_t out = 0;
  const char* first = value.data();
  const char* last = first + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    fail(source, line,
         "key '" + key + "' expects a non-negative integer, got '" + value + "'");
  }
  return out;
}

double parse_double(const std::string& value, const std::string& source, int line,
                    const std::string& key) {
  if (value.empty()) fail(source, line, "key '" + key + "' expects a number");
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    fail(source, line, "key '" + key + "' expects a number, got '" + value + "'");
  }
  if (used != value.size()) {
    fail(source, line, "key '" + key + "' expects a number, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& value, const std::string& source, int line,
                const std::string& key) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  fail(source, line, "key '" + key + "' expects true or false, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::size_t pos = 0;
  while (pos <= value.size()) {
    const std::size_t comma = value.find(',', pos);
    const std::size_t end = comma == std::string::npos ? value.size() : comma;
    items.push_back(trim(value.substr(pos, end - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return items;
}

template <std::size_t N>
std::array<int, N> parse_int_array(const std::string& value, const std::string& source,
                                   int line, const std::string& key) {
  const std::vector<std::string> items = split_list(value);
  if (items.size() != N) {
    fail(source, line, "key '" + key + "' expects " + std::to_string(N) +
                            " comma-separated integers, got '" + value + "'");
  }
  std::array<int, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_int(items[i], source, line, key);
  return out;
}

template <std::size_t N>
std::array<double, N> parse_double_array(const std::string& value,
                                         const std::string& source, int line,
                                         const std::string& key) {
  const std::vector<std::string> items = split_list(value);
  if (items.size() != N) {
    fail(source, line, "key '" + key + "' expects " + std::to_string(N) +
                            " comma-separated numbers, got '" + value + "'");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_double(items[i], source, line, key);
  return out;
}

std::vector<int> parse_int_list(const std::string& value, const std::string& source,
                                int line, const std::string& key) {
  const std::vector<std::string> items = split_list(value);
  std::vector<int> out;
  out.reserve(items.size());
  for (const std::string& item : items) out.push_back(parse_int(item, source, line, key));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const T& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<typename T::value_type>) {
      out += format_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

}  // namespace

const char* shape_name(SynthSpec::Shape shape) {
  switch (shape) {
    case SynthSpec::Shape::kLine: return "line";
    case SynthSpec::Shape::kCircle: return "circle";
    case SynthSpec::Shape::kLissajous: return "lissajous";
  }
  throw ContractError("shape_name: unknown shape");
}

SynthSpec::Shape shape_from_name(const std::string& name) {
  if (name == "line") return SynthSpec::Shape::kLine;
  if (name == "circle") return SynthSpec::Shape::kCircle;
  if (name == "lissajous") return SynthSpec::Shape::kLissajous;
  throw FormatError("unknown shape '" + name + "' (expected line, circle, or lissajous)");
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  RunConfig config;

  using Handler = std::function<void(const std::string&, int)>;
  const std::map<std::string, Handler> handlers = {
      {"model.stage_channels",
       [&](const std::string& v, int ln) {
         config.model.backbone.stage_channels =
             parse_int_array<4>(v, source, ln, "model.stage_channels");
       }},
      {"model.stage_strides",
       [&](const std::string& v, int ln) {
         config.model.backbone.stage_strides =
             parse_int_array<4>(v, source, ln, "model.stage_strides");
       }},
      {"model.degree",
       [&](const std::string& v, int ln) {
         config.model.backbone.degree = parse_int(v, source, ln, "model.degree");
       }},
      {"model.groups",
       [&](const std::string& v, int ln) {
         config.model.backbone.groups = parse_int(v, source, ln, "model.groups");
       }},
      {"model.kernel_size",
       [&](const std::string& v, int ln) {
         config.model.backbone.kernel_size = parse_int(v, source, ln, "model.kernel_size");
       }},
      {"model.eksa_enabled",
       [&](const std::string& v, int ln) {
         config.model.eksa_enabled = parse_bool(v, source, ln, "model.eksa_enabled");
       }},
      {"model.taylor_order",
       [&](const std::string& v, int ln) {
         config.model.eksa.taylor_order = parse_int(v, source, ln, "model.taylor_order");
       }},
      {"model.sigma",
       [&](const std::string& v, int ln) {
         config.model.eksa.sigma = parse_double(v, source, ln, "model.sigma");
       }},
      {"model.normalize_output",
       [&](const std::string& v, int ln) {
         config.model.eksa.normalize_output =
             parse_bool(v, source, ln, "model.normalize_output");
       }},
      {"model.head_widths",
       [&](const std::string& v, int ln) {
         config.model.head_widths = parse_int_list(v, source, ln, "model.head_widths");
       }},
      {"model.window_size",
       [&](const std::string& v, int ln) {
         config.model.window_size = parse_int(v, source, ln, "model.window_size");
       }},
      {"model.learning_rate",
       [&](const std::string& v, int ln) {
         config.model.learning_rate = parse_double(v, source, ln, "model.learning_rate");
       }},
      {"model.beta1",
       [&](const std::string& v, int ln) {
         config.model.beta1 = parse_double(v, source, ln, "model.beta1");
       }},
      {"model.beta2",
       [&](const std::string& v, int ln) {
         config.model.beta2 = parse_double(v, source, ln, "model.beta2");
       }},
      {"model.epsilon",
       [&](const std::string& v, int ln) {
         config.model.epsilon = parse_double(v, source, ln, "model.epsilon");
       }},
      {"model.batch_size",
       [&](const std::string& v, int ln) {
         config.model.batch_size = parse_int(v, source, ln, "model.batch_size");
       }},
      {"model.epochs",
       [&](const std::string& v, int ln) {
         config.model.epochs = parse_int(v, source, ln, "model.epochs");
       }},
      {"model.seed",
       [&](const std::string& v, int ln) {
         config.model.seed = parse_u64(v, source, ln, "model.seed");
       }},
      {"synth.shapes",
       [&](const std::string& v, int ln) {
         std::vector<SynthSpec::Shape> shapes;
         for (const std::string& item : split_list(v)) {
           try {
             shapes.push_back(shape_from_name(item));
           } catch (const FormatError& e) {
             fail(source, ln, std::string("key 'synth.shapes': ") + e.what());
           }
         }
         if (shapes.empty()) fail(source, ln, "key 'synth.shapes' expects at least one shape");
         config.synth.shapes = std::move(shapes);
       }},
      {"synth.count",
       [&](const std::string& v, int ln) {
         config.synth.count = parse_int(v, source, ln, "synth.count");
       }},
      {"synth.speed",
       [&](const std::string& v, int ln) {
         config.synth.speed = parse_double(v, source, ln, "synth.speed");
       }},
      {"synth.duration",
       [&](const std::string& v, int ln) {
         config.synth.duration = parse_double(v, source, ln, "synth.duration");
       }},
      {"synth.sample_rate_hz",
       [&](const std::string& v, int ln) {
         config.synth.sample_rate_hz = parse_double(v, source, ln, "synth.sample_rate_hz");
       }},
      {"synth.gyro_noise",
       [&](const std::string& v, int ln) {
         config.synth.noise.gyro_density = parse_double(v, source, ln, "synth.gyro_noise");
       }},
      {"synth.accel_noise",
       [&](const std::string& v, int ln) {
         config.synth.noise.accel_density = parse_double(v, source, ln, "synth.accel_noise");
       }},
      {"synth.gyro_bias",
       [&](const std::string& v, int ln) {
         config.synth.gyro_bias = parse_double_array<3>(v, source, ln, "synth.gyro_bias");
       }},
      {"synth.accel_bias",
       [&](const std::string& v, int ln) {
         config.synth.accel_bias = parse_double_array<3>(v, source, ln, "synth.accel_bias");
       }},
      {"synth.include_gravity",
       [&](const std::string& v, int ln) {
         config.synth.include_gravity = parse_bool(v, source, ln, "synth.include_gravity");
       }},
      {"synth.base_seed",
       [&](const std::string& v, int ln) {
         config.synth.base_seed = parse_u64(v, source, ln, "synth.base_seed");
       }},
      {"pipeline.train_stride",
       [&](const std::string& v, int ln) {
         config.pipeline.train_stride = parse_int(v, source, ln, "pipeline.train_stride");
       }},
      {"pipeline.eval_stride",
       [&](const std::string& v, int ln) {
         config.pipeline.eval_stride = parse_int(v, source, ln, "pipeline.eval_stride");
       }},
      {"pipeline.val_sequences",
       [&](const std::string& v, int ln) {
         config.pipeline.val_sequences = parse_int(v, source, ln, "pipeline.val_sequences");
       }},
      {"pipeline.rte_interval_s",
       [&](const std::string& v, int ln) {
         config.pipeline.rte_interval_s =
             parse_double(v, source, ln, "pipeline.rte_interval_s");
       }},
      {"pipeline.require_gravity_removed",
       [&](const std::string& v, int ln) {
         config.pipeline.require_gravity_removed =
             parse_bool(v, source, ln, "pipeline.require_gravity_removed");
       }},
  };

  std::set<std::string> seen;
  std::istringstream stream(text);
  std::string raw;
  int line = 0;
  while (std::getline(stream, raw)) {
    ++line;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string stripped = trim(raw);
    if (stripped.empty()) continue;

    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      fail(source, line, "expected 'key = value', got '" + stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) fail(source, line, "missing key before '='");

    const auto it = handlers.find(key);
    if (it == handlers.end()) fail(source, line, "unknown key '" + key + "'");
    if (!seen.insert(key).second) fail(source, line, "duplicate key '" + key + "'");
    it->second(value, line);
  }
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open config file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str(), path);
}

void echo_run_config(const RunConfig& config, std::ostream& out) {
  const ModelConfig& m = config.model;
  const SynthConfig& s = config.synth;
  const PipelineConfig& p = config.pipeline;

  out << "model.stage_channels = " << join(std::vector<int>(m.backbone.stage_channels.begin(),
                                                            m.backbone.stage_channels.end()))
      << '\n';
  out << "model.stage_strides = " << join(std::vector<int>(m.backbone.stage_strides.begin(),
                                                           m.backbone.stage_strides.end()))
      << '\n';
  out << "model.degree = " << m.backbone.degree << '\n';
  out << "model.groups = " << m.backbone.groups << '\n';
  out << "model.kernel_size = " << m.backbone.kernel_size << '\n';
  out << "model.eksa_enabled = " << (m.eksa_enabled ? "true" : "false") << '\n';
  out << "model.taylor_order = " << m.eksa.taylor_order << '\n';
  out << "model.sigma = " << format_double(m.eksa.sigma) << '\n';
  out << "model.normalize_output = " << (m.eksa.normalize_output ? "true" : "false") << '\n';
  out << "model.head_widths = " << join(m.head_widths) << '\n';
  out << "model.window_size = " << m.window_size << '\n';
  out << "model.learning_rate = " << format_double(m.learning_rate) << '\n';
  out << "model.beta1 = " << format_double(m.beta1) << '\n';
  out << "model.beta2 = " << format_double(m.beta2) << '\n';
  out << "model.epsilon = " << format_double(m.epsilon) << '\n';
  out << "model.batch_size = " << m.batch_size << '\n';
  out << "model.epochs = " << m.epochs << '\n';
  out << "model.seed = " << m.seed << '\n';

  std::string shapes;
  for (std::size_t i = 0; i < s.shapes.size(); ++i) {
    if (i) shapes += ',';
    shapes += shape_name(s.shapes[i]);
  }
  out << "synth.shapes = " << shapes << '\n';
  out << "synth.count = " << s.count << '\n';
  out << "synth.speed = " << format_double(s.speed) << '\n';
  out << "synth.duration = " << format_double(s.duration) << '\n';
  out << "synth.sample_rate_hz = " << format_double(s.sample_rate_hz) << '\n';
  out << "synth.gyro_noise = " << format_double(s.noise.gyro_density) << '\n';
  out << "synth.accel_noise = " << format_double(s.noise.accel_density) << '\n';
  out << "synth.gyro_bias = " << join(s.gyro_bias) << '\n';
  out << "synth.accel_bias = " << join(s.accel_bias) << '\n';
  out << "synth.include_gravity = " << (s.include_gravity ? "true" : "false") << '\n';
  out << "synth.base_seed = " << s.base_seed << '\n';

  out << "pipeline.train_stride = " << p.train_stride << '\n';
  out << "pipeline.eval_stride = " << p.eval_stride << '\n';
  out << "pipeline.val_sequences = " << p.val_sequences << '\n';
  out << "pipeline.rte_interval_s = " << format_double(p.rte_interval_s) << '\n';
  out << "pipeline.require_gravity_removed = "
      << (p.require_gravity_removed ? "true" : "false") << '\n';
}

std::vector<SynthSpec> synth_specs(const SynthConfig& config) {
  if (config.count < 1) throw ContractError("synth.count must be >= 1");
  if (config.shapes.empty()) throw ContractError("synth.shapes must not be empty");
  std::vector<SynthSpec> specs;
  specs.reserve(static_cast<std::size_t>(config.count));
  for (int i = 0; i < config.count; ++i) {
    SynthSpec spec;
    spec.shape = config.shapes[static_cast<std::size_t>(i) % config.shapes.size()];
    spec.speed = config.speed;
    spec.duration = config.duration;
    spec.sample_rate_hz = config.sample_rate_hz;
    spec.noise = config.noise;
    spec.gyro_bias = config.gyro_bias;
    spec.accel_bias = config.accel_bias;
    spec.include_gravity = config.include_gravity;
    spec.seed = config.base_seed + static_cast<std::uint64_t>(i) * 257;
    specs.push_back(spec);
  }
  return specs;
}

}  // namespace chebyodo
