#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "chebyodo/chebykan.hpp"
#include "chebyodo/rng.hpp"
#include "chebyodo/tensor.hpp"

namespace chebyodo {

// Residual backbone: four stages of two residual blocks, each block built
// from two Chebyshev-KAN convolution units. The first unit of each stage's
// first block carries that stage's stride, paired with a strided 1x1
// projection shortcut; all other blocks use identity shortcuts.

inline constexpr int kImuChannels = 6;

// Projection shortcut: strided 1x1 convolution followed by per-channel
// standardization and a learned affine, used whenever the residual path
// changes channel count or length.
struct Shortcut {
  Tensor weight;  // [out_channels x in_channels x 1]
  Tensor scale;   // [out_channels]
  Tensor bias;    // [out_channels]
  int stride = 1;
};

Tensor shortcut_forward(const Shortcut& shortcut, const Tensor& x);

struct ResBlock {
  ChebyKANLayer unit1;
  ChebyKANLayer unit2;
  std::optional<Shortcut> shortcut;  // absent => identity

  static ResBlock init(int in_channels, int out_channels, int stride, int degree,
                       int groups, int kernel_size, Rng& rng);
  std::vector<std::pair<std::string, Tensor>> parameters(const std::string& prefix) const;
};

// unit2(unit1(x)) + shortcut(x).
Tensor resblock_forward(const ResBlock& block, const Tensor& x);

struct BackboneConfig {
  std::array<int, 4> stage_channels{64, 128, 256, 512};
  std::array<int, 4> stage_strides{1, 2, 2, 2};
  int degree = 3;
  int groups = 1;
  int kernel_size = 3;  // must be odd so residual and shortcut lengths match
};

struct Backbone {
  BackboneConfig config;
  std::vector<ResBlock> blocks;  // 8 blocks: stage-major, two per stage

  static Backbone init(const BackboneConfig& config, Rng& rng);
  std::vector<std::pair<std::string, Tensor>> parameters(const std::string& prefix) const;
};

// Full forward pass; x must be [6 x W].
Tensor backbone_forward(const Backbone& backbone, const Tensor& x);

// Output length the backbone announces for a window of `window` samples,
// derived by folding the convolution length arithmetic over every unit.
int backbone_output_length(const BackboneConfig& config, int window);

}  // namespace chebyodo
