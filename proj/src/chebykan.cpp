#include "chebyodo/chebykan.hpp"

#include <cmath>

#include "chebyodo/errors.hpp"

namespace chebyodo {

namespace {

// Keeps arccos away from the endpoints where its derivative diverges.
constexpr double kClampBound = 1.0 - 1e-7;

void validate(const ChebyKANConfig& c) {
  if (c.in_channels <= 0 || c.out_channels <= 0) {
    throw ContractError("chebykan: channel counts must be positive");
  }
  if (c.groups <= 0 || c.in_channels % c.groups != 0 || c.out_channels % c.groups != 0) {
    throw ContractError("chebykan: groups must divide both channel counts");
  }
  if (c.degree < 0) throw ContractError("chebykan: degree must be non-negative");
  if (c.kernel_size <= 0 || c.stride <= 0 || c.padding < 0) {
    throw ContractError("chebykan: bad kernel/stride/padding");
  }
}

}  // namespace

ChebyKANLayer ChebyKANLayer::init(const ChebyKANConfig& config, Rng& rng) {
  validate(config);
  ChebyKANLayer layer;
  layer.config = config;
  const int feat_per_group = config.in_channels * (config.degree + 1) / config.groups;
  const int fan_in = feat_per_group * config.kernel_size;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(static_cast<std::size_t>(config.out_channels) * feat_per_group *
                        config.kernel_size);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  layer.conv_weight =
      Tensor::param({config.out_channels, feat_per_group, config.kernel_size}, std::move(w));
  layer.norm_scale =
      Tensor::param({config.out_channels}, std::vector<double>(config.out_channels, 1.0));
  layer.norm_bias =
      Tensor::param({config.out_channels}, std::vector<double>(config.out_channels, 0.0));
  return layer;
}

std::vector<std::pair<std::string, Tensor>> ChebyKANLayer::parameters(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back(prefix + ".conv_weight", conv_weight);
  if (config.norm_enabled) {
    out.emplace_back(prefix + ".norm_scale", norm_scale);
    out.emplace_back(prefix + ".norm_bias", norm_bias);
  }
  return out;
}

Tensor cheb_angle(const Tensor& x) {
  return arccos(clamp(tanh(x), -kClampBound, kClampBound));
}

Tensor cheb_features(const Tensor& x, int degree) {
  if (x.ndim() != 2) {
    throw ShapeError("cheb_features: expected [C x L], got " + shape_str(x.shape()));
  }
  if (degree < 0) throw ContractError("cheb_features: degree must be non-negative");
  Tensor angle = cheb_angle(x);
  const int channels = x.dim(0);
  // Channel-major, degree-minor: all degrees of channel 0 first.
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(channels) * (degree + 1));
  for (int c = 0; c < channels; ++c) {
    Tensor channel_angle = slice(angle, 0, c, 1);
    for (int n = 0; n <= degree; ++n) {
      // cos(n * arccos(t)) == T_n(t); n == 0 gives the constant 1 feature.
      rows.push_back(cos(scale(channel_angle, static_cast<double>(n))));
    }
  }
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

int chebykan_output_length(const ChebyKANConfig& config, int length) {
  return (length + 2 * config.padding - config.kernel_size) / config.stride + 1;
}

Tensor chebykan_forward(const ChebyKANLayer& layer, const Tensor& x) {
  const ChebyKANConfig& cfg = layer.config;
  if (x.ndim() != 2 || x.dim(0) != cfg.in_channels) {
    throw ShapeError("chebykan_forward: expected [" + std::to_string(cfg.in_channels) +
                     " x L], got " + shape_str(x.shape()));
  }

  const int groups = cfg.groups;
  const int in_per_group = cfg.in_channels / groups;
  const int out_per_group = cfg.out_channels / groups;
  const int feat_per_group = in_per_group * (cfg.degree + 1);

  // Expand each group's channels, then run a single grouped convolution over
  // the concatenated features: the group blocks line up with conv1d's group
  // slicing, which is exactly "apply each group's weight block to its own
  // expanded slice".
  Tensor features;
  if (groups == 1) {
    features = cheb_features(x, cfg.degree);
  } else {
    std::vector<Tensor> parts;
    parts.reserve(groups);
    for (int g = 0; g < groups; ++g) {
      parts.push_back(cheb_features(slice(x, 0, g * in_per_group, in_per_group), cfg.degree));
    }
    features = concat(parts, 0);
  }
  (void)feat_per_group;
  (void)out_per_group;

  Tensor y = conv1d(features, layer.conv_weight, cfg.stride, cfg.padding, groups);
  if (!cfg.norm_enabled) return y;
  Tensor normed = standardize_rows(y, 1e-5);
  return row_affine(normed, layer.norm_scale, layer.norm_bias);
}

}  // namespace chebyodo
