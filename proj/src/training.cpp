#include "chebyodo/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace chebyodo {

namespace {

constexpr char kMagic[8] = {'C', 'H', 'B', 'Y', 'C', 'K', 'P', '1'};
constexpr int kFormatVersion = 1;
constexpr int kEarlyStopPatience = 10;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Tensor init_linear_weight(int out_width, int in_width, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_width));
  std::vector<double> w(static_cast<std::size_t>(out_width) * in_width);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  return Tensor::param({out_width, in_width}, std::move(w));
}

Tensor linear(const Tensor& weight, const Tensor& bias, const Tensor& x) {
  return row_affine(matmul(weight, x), Tensor::ones({weight.dim(0)}), bias);
}

// Targets of the selected windows as prediction-shaped columns [2 x B].
Tensor target_columns(const WindowBatch& batch, const std::vector<int>& indices) {
  std::vector<double> values(2 * indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const auto t = window_target(batch, indices[j]);
    values[j] = t[0];
    values[indices.size() + j] = t[1];
  }
  return Tensor::from({2, static_cast<int>(indices.size())}, std::move(values));
}

std::string first_nonfinite_parameter(
    const std::vector<std::pair<std::string, Tensor>>& params) {
  for (const auto& [name, tensor] : params) {
    if (!all_finite(tensor)) return name;
  }
  return {};
}

[[noreturn]] void abort_nonfinite(const std::vector<std::pair<std::string, Tensor>>& params,
                                  int epoch, const char* phase) {
  const std::string name = first_nonfinite_parameter(params);
  std::string msg = std::string("non-finite ") + phase + " loss at epoch " +
                    std::to_string(epoch) + "; ";
  msg += name.empty() ? "all parameters are finite (check the input data)"
                      : "first non-finite parameter: " + name;
  throw NumericalError(msg);
}

// Average MSE over a whole batch, evaluated in minibatches without a tape.
double dataset_mse(const Model& model, const WindowBatch& data, int batch_size) {
  double weighted_sum = 0.0;
  int total = 0;
  std::vector<int> chunk;
  for (int start = 0; start < data.count(); start += batch_size) {
    const int n = std::min(batch_size, data.count() - start);
    chunk.resize(n);
    std::iota(chunk.begin(), chunk.end(), start);
    Tensor pred = model_forward(model, data, chunk);
    const double loss = mse_loss(pred, target_columns(data, chunk)).item();
    weighted_sum += loss * n;
    total += n;
  }
  return weighted_sum / total;
}

// ---- Checkpoint byte serialization (little-endian) --------------------------

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i32(std::string& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_int_vec(std::string& out, const std::vector<int>& v) {
  put_u32(out, static_cast<std::uint32_t>(v.size()));
  for (int x : v) put_i32(out, x);
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& buf) : buf_(buf) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8_raw()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8_raw()) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<int> int_vec() {
    const std::uint32_t n = u32();
    std::vector<int> v(n);
    for (auto& x : v) x = i32();
    return v;
  }
  bool exhausted() const { return pos_ == buf_.size(); }

 private:
  std::uint8_t u8_raw() { return static_cast<std::uint8_t>(buf_[pos_++]); }
  void need(std::size_t n) {
    if (buf_.size() - pos_ < n) throw FormatError("truncated checkpoint");
  }
  const std::string& buf_;
  std::size_t pos_ = 0;
};

void put_config(std::string& out, const ModelConfig& c) {
  put_int_vec(out, {c.backbone.stage_channels.begin(), c.backbone.stage_channels.end()});
  put_int_vec(out, {c.backbone.stage_strides.begin(), c.backbone.stage_strides.end()});
  put_i32(out, c.backbone.degree);
  put_i32(out, c.backbone.groups);
  put_i32(out, c.backbone.kernel_size);
  put_i32(out, c.eksa.feature_dim);
  put_i32(out, c.eksa.seq_len);
  put_i32(out, c.eksa.taylor_order);
  put_f64(out, c.eksa.sigma);
  put_u8(out, c.eksa.normalize_output ? 1 : 0);
  put_u8(out, c.eksa_enabled ? 1 : 0);
  put_int_vec(out, c.head_widths);
  put_i32(out, c.window_size);
  put_f64(out, c.learning_rate);
  put_f64(out, c.beta1);
  put_f64(out, c.beta2);
  put_f64(out, c.epsilon);
  put_i32(out, c.batch_size);
  put_i32(out, c.epochs);
  put_u64(out, c.seed);
}

void read_int_array(ByteReader& in, std::array<int, 4>& out) {
  const std::vector<int> v = in.int_vec();
  if (v.size() != out.size()) {
    throw FormatError("checkpoint config: expected 4 stage entries, got " +
                      std::to_string(v.size()));
  }
  std::copy(v.begin(), v.end(), out.begin());
}

ModelConfig read_config(ByteReader& in) {
  ModelConfig c;
  read_int_array(in, c.backbone.stage_channels);
  read_int_array(in, c.backbone.stage_strides);
  c.backbone.degree = in.i32();
  c.backbone.groups = in.i32();
  c.backbone.kernel_size = in.i32();
  c.eksa.feature_dim = in.i32();
  c.eksa.seq_len = in.i32();
  c.eksa.taylor_order = in.i32();
  c.eksa.sigma = in.f64();
  c.eksa.normalize_output = in.u8() != 0;
  c.eksa_enabled = in.u8() != 0;
  c.head_widths = in.int_vec();
  c.window_size = in.i32();
  c.learning_rate = in.f64();
  c.beta1 = in.f64();
  c.beta2 = in.f64();
  c.epsilon = in.f64();
  c.batch_size = in.i32();
  c.epochs = in.i32();
  c.seed = in.u64();
  return c;
}

}  // namespace

ModelConfig resolve_config(const ModelConfig& config) {
  ModelConfig c = config;
  if (c.window_size < 2) {
    throw ContractError("model config: window_size must be at least 2");
  }
  if (c.head_widths.size() != 3) {
    throw ContractError("model config: exactly three head widths required");
  }
  for (int w : c.head_widths) {
    if (w <= 0) throw ContractError("model config: head widths must be positive");
  }
  if (c.head_widths.back() != 2) {
    throw ContractError("model config: final head width must be 2 (planar velocity)");
  }
  if (c.learning_rate < 0 || !(c.beta1 >= 0 && c.beta1 < 1) ||
      !(c.beta2 >= 0 && c.beta2 < 1) || c.epsilon <= 0) {
    throw ContractError("model config: optimizer hyperparameters out of range");
  }
  if (c.batch_size < 1 || c.epochs < 1) {
    throw ContractError("model config: batch_size and epochs must be positive");
  }

  const int derived_n = c.backbone.stage_channels.empty() ? 0 : c.backbone.stage_channels.back();
  const int derived_l = backbone_output_length(c.backbone, c.window_size);
  if (c.eksa.feature_dim == 0) c.eksa.feature_dim = derived_n;
  if (c.eksa.seq_len == 0) c.eksa.seq_len = derived_l;
  if (c.eksa.feature_dim != derived_n || c.eksa.seq_len != derived_l) {
    throw ContractError(
        "model config: attention dims " + std::to_string(c.eksa.feature_dim) + "x" +
        std::to_string(c.eksa.seq_len) + " disagree with backbone output " +
        std::to_string(derived_n) + "x" + std::to_string(derived_l));
  }
  return c;
}

Head Head::init(int in_width, const std::vector<int>& widths, Rng& rng) {
  Head head;
  head.w1 = init_linear_weight(widths[0], in_width, rng);
  head.b1 = Tensor::param({widths[0]}, std::vector<double>(widths[0], 0.0));
  head.w2 = init_linear_weight(widths[1], widths[0], rng);
  head.b2 = Tensor::param({widths[1]}, std::vector<double>(widths[1], 0.0));
  head.w3 = init_linear_weight(widths[2], widths[1], rng);
  head.b3 = Tensor::param({widths[2]}, std::vector<double>(widths[2], 0.0));
  return head;
}

std::vector<std::pair<std::string, Tensor>> Head::parameters(const std::string& prefix) const {
  return {
      {prefix + ".fc1.weight", w1}, {prefix + ".fc1.bias", b1},
      {prefix + ".fc2.weight", w2}, {prefix + ".fc2.bias", b2},
      {prefix + ".fc3.weight", w3}, {prefix + ".fc3.bias", b3},
  };
}

Tensor head_forward(const Head& head, const Tensor& x) {
  if (x.ndim() != 2 || x.dim(0) != head.w1.dim(1)) {
    throw ShapeError("head: input " + shape_str(x.shape()) + " does not match width " +
                     std::to_string(head.w1.dim(1)));
  }
  Tensor h = relu(linear(head.w1, head.b1, x));
  h = relu(linear(head.w2, head.b2, h));
  return linear(head.w3, head.b3, h);
}

Model Model::init(const ModelConfig& config) {
  Rng rng(config.seed);
  return init(config, rng);
}

Model Model::init(const ModelConfig& config, Rng& rng) {
  Model model;
  model.config = resolve_config(config);
  model.backbone = Backbone::init(model.config.backbone, rng);
  if (model.config.eksa_enabled) {
    model.eksa = EksaLayer::init(model.config.eksa, rng);
  }
  model.head = Head::init(model.config.backbone.stage_channels.back(),
                          model.config.head_widths, rng);
  return model;
}

std::vector<std::pair<std::string, Tensor>> Model::parameters() const {
  auto out = backbone.parameters("backbone");
  if (eksa) {
    for (auto& p : eksa->parameters("eksa")) out.push_back(std::move(p));
  }
  for (auto& p : head.parameters("head")) out.push_back(std::move(p));
  return out;
}

Tensor model_features(const Model& model, const Tensor& window) {
  Tensor h = backbone_forward(model.backbone, window);
  if (model.eksa) h = eksa_forward(*model.eksa, h);
  return reduce_mean(h, 1);
}

Tensor model_forward(const Model& model, const WindowBatch& batch,
                     const std::vector<int>& indices) {
  if (indices.empty()) throw ContractError("model_forward: empty index list");
  std::vector<Tensor> columns;
  columns.reserve(indices.size());
  for (int idx : indices) {
    columns.push_back(model_features(model, window_input(batch, idx)));
  }
  return head_forward(model.head, concat(columns, 1));
}

std::array<double, 2> predict_window(const Model& model, const Tensor& window) {
  const Tensor pred = head_forward(model.head, model_features(model, window));
  return {pred.at(0, 0), pred.at(1, 0)};
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  const Tensor sq = square(sub(pred, target));
  const Tensor total = reduce_sum(reduce_sum(sq, 1), 0);
  return scale(total, 1.0 / static_cast<double>(pred.size()));
}

Adam::Adam(std::vector<Tensor> params, double learning_rate, double beta1, double beta2,
           double epsilon)
    : params_(std::move(params)),
      lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double m_corr = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double v_corr = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_[i].ensure_grad();
    const auto& g = params_[i].grad();
    auto& values = params_[i].vec();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double m_hat = m[j] / m_corr;
      const double v_hat = v[j] / v_corr;
      values[j] -= lr_ * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Checkpoint Checkpoint::from_model(const Model& model) {
  Checkpoint ckpt;
  ckpt.format_version = kFormatVersion;
  ckpt.config = model.config;
  for (const auto& [name, tensor] : model.parameters()) {
    ckpt.manifest.emplace_back(name, tensor.shape());
    const auto& v = tensor.vec();
    ckpt.payload.insert(ckpt.payload.end(), v.begin(), v.end());
  }
  return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.format_version != kFormatVersion) {
    throw FormatError("unsupported checkpoint format_version " +
                      std::to_string(ckpt.format_version));
  }
  Model model = Model::init(ckpt.config);
  auto params = model.parameters();
  if (params.size() != ckpt.manifest.size()) {
    throw FormatError("checkpoint manifest lists " + std::to_string(ckpt.manifest.size()) +
                      " parameters, model has " + std::to_string(params.size()));
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, shape] = ckpt.manifest[i];
    if (name != params[i].first || shape != params[i].second.shape()) {
      throw FormatError("checkpoint manifest entry '" + name +
                        "' does not match model parameter '" + params[i].first + "'");
    }
    auto& values = params[i].second.vec();
    if (offset + values.size() > ckpt.payload.size()) {
      throw FormatError("checkpoint payload shorter than manifest");
    }
    std::copy_n(ckpt.payload.begin() + static_cast<std::ptrdiff_t>(offset), values.size(),
                values.begin());
    offset += values.size();
  }
  if (offset != ckpt.payload.size()) {
    throw FormatError("checkpoint payload longer than manifest");
  }
  return model;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(ckpt.format_version));
  put_config(out, ckpt.config);
  put_u32(out, static_cast<std::uint32_t>(ckpt.manifest.size()));
  for (const auto& [name, shape] : ckpt.manifest) {
    put_str(out, name);
    put_int_vec(out, shape);
  }
  put_u64(out, ckpt.payload.size());
  for (double v : ckpt.payload) put_f64(out, v);

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw FormatError("cannot open checkpoint for writing: " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw FormatError("short write to checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("cannot open checkpoint: " + path);
  std::ostringstream buf;
  buf << file.rdbuf();
  const std::string bytes = buf.str();

  if (bytes.size() < sizeof(kMagic) ||
      !std::equal(kMagic, kMagic + sizeof(kMagic), bytes.begin())) {
    throw FormatError("not a checkpoint file: " + path);
  }
  const std::string body = bytes.substr(sizeof(kMagic));
  ByteReader in(body);
  Checkpoint ckpt;
  ckpt.format_version = static_cast<int>(in.u32());
  if (ckpt.format_version != kFormatVersion) {
    throw FormatError("unsupported checkpoint format_version " +
                      std::to_string(ckpt.format_version));
  }
  ckpt.config = read_config(in);
  const std::uint32_t n_params = in.u32();
  std::size_t expected = 0;
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = in.str();
    Shape shape = in.int_vec();
    std::size_t count = 1;
    for (int d : shape) {
      if (d <= 0) throw FormatError("checkpoint manifest has a non-positive dimension");
      count *= static_cast<std::size_t>(d);
    }
    expected += count;
    ckpt.manifest.emplace_back(std::move(name), std::move(shape));
  }
  const std::uint64_t payload_count = in.u64();
  if (payload_count != expected) {
    throw FormatError("checkpoint payload length " + std::to_string(payload_count) +
                      " does not match manifest total " + std::to_string(expected));
  }
  ckpt.payload.resize(payload_count);
  for (auto& v : ckpt.payload) v = in.f64();
  if (!in.exhausted()) throw FormatError("trailing bytes after checkpoint payload");
  return ckpt;
}

TrainResult train(const ModelConfig& config, const WindowBatch& train_data,
                  const WindowBatch& val_data) {
  const ModelConfig resolved = resolve_config(config);
  if (train_data.count() == 0 || val_data.count() == 0) {
    throw ContractError("train: training and validation data must be nonempty");
  }
  for (const WindowBatch* data : {&train_data, &val_data}) {
    if (data->window_size != resolved.window_size) {
      throw ContractError("train: data window size " + std::to_string(data->window_size) +
                          " does not match config window_size " +
                          std::to_string(resolved.window_size));
    }
  }

  Rng rng(resolved.seed);
  Model model = Model::init(resolved, rng);
  const auto named_params = model.parameters();
  std::vector<Tensor> params;
  params.reserve(named_params.size());
  for (const auto& p : named_params) params.push_back(p.second);
  Adam optimizer(params, resolved.learning_rate, resolved.beta1, resolved.beta2,
                 resolved.epsilon);

  TrainResult result;
  result.best_val_mse = std::numeric_limits<double>::infinity();
  std::vector<int> order(static_cast<std::size_t>(train_data.count()));
  std::iota(order.begin(), order.end(), 0);
  int epochs_since_best = 0;

  for (int epoch = 1; epoch <= resolved.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    rng.shuffle(order);

    double train_sum = 0.0;
    int train_n = 0;
    for (int start = 0; start < train_data.count(); start += resolved.batch_size) {
      const int n = std::min(resolved.batch_size, train_data.count() - start);
      const std::vector<int> chunk(order.begin() + start, order.begin() + start + n);

      double loss_value = 0.0;
      try {
        Tape tape;
        Tape::Scope scope(tape);
        Tensor pred = model_forward(model, train_data, chunk);
        Tensor loss = mse_loss(pred, target_columns(train_data, chunk));
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) abort_nonfinite(named_params, epoch, "training");
        backward(loss);
      } catch (const DomainError& e) {
        // Diverged parameters poison activations before the loss is ever
        // computed (finite-but-huge weights overflow downstream); report it
        // as the numerical failure it is.
        const std::string name = first_nonfinite_parameter(named_params);
        throw NumericalError(
            "numerical breakdown during training at epoch " + std::to_string(epoch) +
            " (" + e.what() + "); " +
            (name.empty() ? "all parameters are finite (diverging or bad input data)"
                          : "first non-finite parameter: " + name));
      }
      optimizer.step();
      optimizer.zero_grad();
      train_sum += loss_value * n;
      train_n += n;
    }

    const double train_mse = train_sum / train_n;
    double val_mse = 0.0;
    try {
      val_mse = dataset_mse(model, val_data, resolved.batch_size);
    } catch (const DomainError& e) {
      const std::string name = first_nonfinite_parameter(named_params);
      throw NumericalError(
          "numerical breakdown during validation at epoch " + std::to_string(epoch) +
          " (" + e.what() + "); " +
          (name.empty() ? "all parameters are finite (diverging or bad input data)"
                        : "first non-finite parameter: " + name));
    }
    if (!std::isfinite(val_mse)) abort_nonfinite(named_params, epoch, "validation");
    const double wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.log.push_back({epoch, train_mse, val_mse, wall_s});

    if (val_mse < result.best_val_mse) {
      result.best_val_mse = val_mse;
      result.best_epoch = epoch;
      result.checkpoint = Checkpoint::from_model(model);
      epochs_since_best = 0;
    } else if (++epochs_since_best >= kEarlyStopPatience) {
      break;
    }
  }
  return result;
}

double zero_predictor_mse(const WindowBatch& data) {
  if (data.count() == 0) throw ContractError("zero_predictor_mse: empty batch");
  double sum = 0.0;
  for (int i = 0; i < data.count(); ++i) {
    const auto t = window_target(data, i);
    sum += t[0] * t[0] + t[1] * t[1];
  }
  return sum / (2.0 * data.count());
}

void write_metrics_csv(const std::vector<EpochStats>& log, std::ostream& out) {
  out << "epoch,train_mse,val_mse,wall_s\n";
  for (const auto& row : log) {
    out << row.epoch << ',' << format_double(row.train_mse) << ','
        << format_double(row.val_mse) << ',' << format_double(row.wall_s) << '\n';
  }
}

}  // namespace chebyodo
