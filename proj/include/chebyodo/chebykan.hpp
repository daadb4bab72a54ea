#pragma once

#include <string>
#include <utility>
#include <vector>

#include "chebyodo/rng.hpp"
#include "chebyodo/tensor.hpp"

namespace chebyodo {

// Chebyshev-basis Kolmogorov-Arnold convolution unit.
//
// The unit squashes its input through tanh, re-maps it to an angle via
// arccos, and evaluates the first (degree+1) Chebyshev polynomials of the
// first kind as cos(n * angle). Those per-channel polynomial features are the
// learnable surface a grouped 1-D convolution mixes; a per-channel
// standardization plus learned affine keeps activations in a stable range.

struct ChebyKANConfig {
  int in_channels = 0;
  int out_channels = 0;
  int groups = 1;
  int degree = 3;       // highest Chebyshev degree d; features are T_0..T_d
  int kernel_size = 3;
  int stride = 1;
  int padding = 1;
  // When false the standardization + affine stage is skipped entirely. Keeps
  // constant-signal behaviour inspectable: standardization maps any constant
  // channel to zero, which would otherwise mask the convolution output.
  bool norm_enabled = true;
};

struct ChebyKANLayer {
  ChebyKANConfig config;
  // [out_channels x (in_channels*(degree+1))/groups x kernel_size]
  Tensor conv_weight;
  Tensor norm_scale;  // [out_channels]
  Tensor norm_bias;   // [out_channels]

  static ChebyKANLayer init(const ChebyKANConfig& config, Rng& rng);

  // Parameter tensors in a stable order, names prefixed by `prefix`.
  std::vector<std::pair<std::string, Tensor>> parameters(const std::string& prefix) const;
};

// Angle re-map x' = arccos(clamp(tanh(x))). The clamp bound keeps arccos away
// from its infinite-derivative endpoints; saturated inputs therefore carry
// zero gradient rather than an unstable one.
Tensor cheb_angle(const Tensor& x);

// Per-channel Chebyshev features. Input [C x L] becomes
// [C*(degree+1) x L] ordered channel-major, degree-minor: output row
// c*(degree+1)+n holds T_n evaluated on channel c.
Tensor cheb_features(const Tensor& x, int degree);

// Full unit: per group, slice channels, expand features, convolve with that
// group's weight block, then concatenate group outputs and normalize.
Tensor chebykan_forward(const ChebyKANLayer& layer, const Tensor& x);

// Output length for a given input length under this config.
int chebykan_output_length(const ChebyKANConfig& config, int length);

}  // namespace chebyodo
