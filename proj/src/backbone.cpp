#include "chebyodo/backbone.hpp"

#include <cmath>
#include <string>

#include "chebyodo/errors.hpp"

namespace chebyodo {

namespace {

constexpr double kNormEps = 1e-5;

void validate(const BackboneConfig& c) {
  int prev = 0;
  for (int ch : c.stage_channels) {
    if (ch <= 0) throw ContractError("backbone: stage channels must be positive");
    if (ch < prev) throw ContractError("backbone: stage channels must be nondecreasing");
    prev = ch;
  }
  for (int s : c.stage_strides) {
    if (s < 1) throw ContractError("backbone: stage strides must be >= 1");
  }
  if (c.degree < 0) throw ContractError("backbone: degree must be non-negative");
  if (c.kernel_size <= 0 || c.kernel_size % 2 == 0) {
    throw ContractError("backbone: kernel size must be odd and positive");
  }
  if (c.groups <= 0) throw ContractError("backbone: groups must be positive");
}

ChebyKANConfig unit_config(const BackboneConfig& c, int in_ch, int out_ch, int stride,
                           int groups) {
  ChebyKANConfig u;
  u.in_channels = in_ch;
  u.out_channels = out_ch;
  u.groups = groups;
  u.degree = c.degree;
  u.kernel_size = c.kernel_size;
  u.stride = stride;
  u.padding = c.kernel_size / 2;
  u.norm_enabled = true;
  return u;
}

}  // namespace

Tensor shortcut_forward(const Shortcut& shortcut, const Tensor& x) {
  Tensor y = conv1d(x, shortcut.weight, shortcut.stride, 0, 1);
  return row_affine(standardize_rows(y, kNormEps), shortcut.scale, shortcut.bias);
}

ResBlock ResBlock::init(int in_channels, int out_channels, int stride, int degree,
                        int groups, int kernel_size, Rng& rng) {
  BackboneConfig shim;
  shim.degree = degree;
  shim.kernel_size = kernel_size;
  ResBlock block;
  block.unit1 =
      ChebyKANLayer::init(unit_config(shim, in_channels, out_channels, stride, groups), rng);
  block.unit2 =
      ChebyKANLayer::init(unit_config(shim, out_channels, out_channels, 1, groups), rng);
  if (in_channels != out_channels || stride != 1) {
    Shortcut sc;
    sc.stride = stride;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels));
    std::vector<double> w(static_cast<std::size_t>(out_channels) * in_channels);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    sc.weight = Tensor::param({out_channels, in_channels, 1}, std::move(w));
    sc.scale = Tensor::param({out_channels}, std::vector<double>(out_channels, 1.0));
    sc.bias = Tensor::param({out_channels}, std::vector<double>(out_channels, 0.0));
    block.shortcut = std::move(sc);
  }
  return block;
}

std::vector<std::pair<std::string, Tensor>> ResBlock::parameters(
    const std::string& prefix) const {
  auto out = unit1.parameters(prefix + ".unit1");
  for (auto& p : unit2.parameters(prefix + ".unit2")) out.push_back(std::move(p));
  if (shortcut) {
    out.emplace_back(prefix + ".shortcut_weight", shortcut->weight);
    out.emplace_back(prefix + ".shortcut_scale", shortcut->scale);
    out.emplace_back(prefix + ".shortcut_bias", shortcut->bias);
  }
  return out;
}

Tensor resblock_forward(const ResBlock& block, const Tensor& x) {
  Tensor h = chebykan_forward(block.unit2, chebykan_forward(block.unit1, x));
  Tensor s = block.shortcut ? shortcut_forward(*block.shortcut, x) : x;
  if (h.shape() != s.shape()) {
    throw ShapeError("resblock: residual path " + shape_str(h.shape()) +
                     " does not match shortcut path " + shape_str(s.shape()));
  }
  return add(h, s);
}

Backbone Backbone::init(const BackboneConfig& config, Rng& rng) {
  validate(config);
  Backbone backbone;
  backbone.config = config;
  backbone.blocks.reserve(8);
  int in_ch = kImuChannels;
  for (int s = 0; s < 4; ++s) {
    const int out_ch = config.stage_channels[s];
    // The stem block consumes the raw 6-channel window; when the configured
    // group count does not divide 6 it falls back to dense mixing there.
    const int block_groups =
        (s == 0 && kImuChannels % config.groups != 0) ? 1 : config.groups;
    backbone.blocks.push_back(ResBlock::init(in_ch, out_ch, config.stage_strides[s],
                                             config.degree, block_groups,
                                             config.kernel_size, rng));
    backbone.blocks.push_back(ResBlock::init(out_ch, out_ch, 1, config.degree,
                                             config.groups, config.kernel_size, rng));
    in_ch = out_ch;
  }
  return backbone;
}

std::vector<std::pair<std::string, Tensor>> Backbone::parameters(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string block_prefix = prefix + ".stage" + std::to_string(i / 2) +
                                     ".block" + std::to_string(i % 2);
    for (auto& p : blocks[i].parameters(block_prefix)) out.push_back(std::move(p));
  }
  return out;
}

Tensor backbone_forward(const Backbone& backbone, const Tensor& x) {
  if (x.ndim() != 2 || x.dim(0) != kImuChannels) {
    throw ContractError("backbone: input must have exactly " +
                        std::to_string(kImuChannels) + " channels, got " +
                        shape_str(x.shape()));
  }
  Tensor h = x;
  for (const ResBlock& block : backbone.blocks) {
    h = resblock_forward(block, h);
  }
  return h;
}

int backbone_output_length(const BackboneConfig& config, int window) {
  validate(config);
  int length = window;
  for (int s = 0; s < 4; ++s) {
    // Two blocks of two units each; only the first unit of the first block
    // strides, and every unit pads by kernel_size/2.
    const int strides[4] = {config.stage_strides[s], 1, 1, 1};
    for (int stride : strides) {
      // Odd kernel with symmetric padding: L -> (L - 1)/stride + 1, never
      // below one sample.
      length = (length + 2 * (config.kernel_size / 2) - config.kernel_size) / stride + 1;
    }
  }
  return length;
}

}  // namespace chebyodo
