#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "chebyodo/backbone.hpp"
#include "chebyodo/data.hpp"
#include "chebyodo/eksa.hpp"
#include "chebyodo/rng.hpp"
#include "chebyodo/tensor.hpp"

namespace chebyodo {

// Complete description of a velocity-regression model and its training run.
//
// The attention block's feature_dim/seq_len may be left at 0; resolve_config
// derives them from the backbone and the window size. A provided nonzero
// value must agree with the derived one.
struct ModelConfig {
  BackboneConfig backbone;
  EksaConfig eksa;
  bool eksa_enabled = true;
  // Output widths of the three fully connected head layers; last must be 2.
  std::vector<int> head_widths{512, 128, 2};
  int window_size = 200;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 32;
  int epochs = 30;
  std::uint64_t seed = 0;
};

// Validates the config and fills in derived attention dimensions.
// Throws ContractError on an inconsistent or out-of-range field.
ModelConfig resolve_config(const ModelConfig& config);

// Three fully connected layers with a rectifier after the first and second.
struct Head {
  Tensor w1, b1;  // [h1 x in], [h1]
  Tensor w2, b2;  // [h2 x h1], [h2]
  Tensor w3, b3;  // [2 x h2], [2]

  static Head init(int in_width, const std::vector<int>& widths, Rng& rng);
  std::vector<std::pair<std::string, Tensor>> parameters(const std::string& prefix) const;
};

// x: [in_width x B] columns of flattened features -> predictions [2 x B].
Tensor head_forward(const Head& head, const Tensor& x);

struct Model {
  ModelConfig config;  // resolved
  Backbone backbone;
  std::optional<EksaLayer> eksa;  // engaged iff config.eksa_enabled
  Head head;

  // Builds a model with freshly initialized weights, seeded by config.seed.
  static Model init(const ModelConfig& config);
  static Model init(const ModelConfig& config, Rng& rng);

  // Every trainable tensor in a stable, documented order (backbone, then
  // attention when enabled, then head). Checkpoints serialize this order.
  std::vector<std::pair<std::string, Tensor>> parameters() const;
};

// One window [6 x W] -> pooled feature column [C x 1]: backbone, optional
// attention, then a global average over the sequence axis.
Tensor model_features(const Model& model, const Tensor& window);

// Predict velocities for the selected windows of a batch: [2 x B].
Tensor model_forward(const Model& model, const WindowBatch& batch,
                     const std::vector<int>& indices);

// Single-window convenience wrapper (no tape interaction).
std::array<double, 2> predict_window(const Model& model, const Tensor& window);

// Mean over the batch and both velocity components of the squared error.
// pred/target: [2 x B]. Shape mismatch -> ShapeError.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// Adam with decoupled first/second moments and bias correction. step()
// consumes the .grad() buffers of the registered parameters; callers zero
// gradients between steps via zero_grad().
class Adam {
 public:
  Adam(std::vector<Tensor> params, double learning_rate, double beta1, double beta2,
       double epsilon);

  void step();
  void zero_grad();
  long step_count() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, epsilon_;
  long t_ = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double wall_s = 0.0;
};

// Serialized model snapshot. The payload holds every parameter's values,
// concatenated in manifest order; loading and re-saving a checkpoint must
// produce byte-identical files.
struct Checkpoint {
  int format_version = 1;
  ModelConfig config;
  std::vector<std::pair<std::string, Shape>> manifest;
  std::vector<double> payload;

  static Checkpoint from_model(const Model& model);
};

Model model_from_checkpoint(const Checkpoint& ckpt);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct TrainResult {
  Checkpoint checkpoint;  // best-validation snapshot
  std::vector<EpochStats> log;
  double best_val_mse = 0.0;
  int best_epoch = 0;
};

// Full training run: shuffled minibatches, Adam, per-epoch train/val MSE,
// early stopping (patience 10 on validation MSE), best-validation
// checkpoint. Deterministic for a fixed config. Empty data -> ContractError;
// a non-finite loss aborts with a NumericalError naming the first non-finite
// parameter.
TrainResult train(const ModelConfig& config, const WindowBatch& train_data,
                  const WindowBatch& val_data);

// MSE of always predicting zero velocity; the reference baseline for
// verifying that training learned anything.
double zero_predictor_mse(const WindowBatch& data);

// CSV: header `epoch,train_mse,val_mse,wall_s`, one row per epoch.
void write_metrics_csv(const std::vector<EpochStats>& log, std::ostream& out);

}  // namespace chebyodo
