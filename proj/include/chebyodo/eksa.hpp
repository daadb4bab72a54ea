#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "chebyodo/rng.hpp"
#include "chebyodo/tensor.hpp"

namespace chebyodo {

// Efficient kernel-based self-attention over the feature axis.
//
// Tokens are the N rows of the input (the feature dimension), not the L
// columns: N grows much faster than L in this architecture, so replacing the
// O(L*N^2) softmax product with a factorized kernel product of cost
// O(N*L^2) is where the speedup lives. The kernel is exp(rho^2/sigma) with
// rho the Pearson correlation between token rows, approximated by an
// m-term truncated feature expansion so attention factorizes as
// phi(Q) * (phi(K)^T * V) without ever materializing an N x N matrix.

struct EksaConfig {
  int feature_dim = 0;   // N: rows, the token axis
  int seq_len = 0;       // L: columns
  int taylor_order = 2;  // m: non-constant expansion terms retained
  double sigma = 1.0;    // damps higher-order terms
  // The factorized product sums unnormalized kernel weights, which scales
  // with N; dividing by phi(Q) * (phi(K)^T * 1) restores weights that sum to
  // one per row. Off gives the raw product for oracle comparisons.
  bool normalize_output = true;
};

// One projection: 1x1 channel-mixing convolution followed by a depthwise
// temporal convolution (kernel 3, padding 1), mapping [N x L] -> [N x L].
struct EksaProjection {
  Tensor pointwise;  // [N x N x 1]
  Tensor depthwise;  // [N x 1 x 3]
};

struct EksaLayer {
  EksaConfig config;
  EksaProjection q_proj;
  EksaProjection k_proj;
  EksaProjection v_proj;

  static EksaLayer init(const EksaConfig& config, Rng& rng);
  std::vector<std::pair<std::string, Tensor>> parameters(const std::string& prefix) const;
};

// Exact softmax attention softmax(q k^T / sqrt(gamma)) v with row-wise
// softmax over the N token rows. Reference implementation for oracles and
// benchmarks only: O(L*N^2) and NOT differentiable (records no backward
// rules even under an active tape).
Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, double gamma);

// Squared Pearson correlation between two rows. Zero-variance rows correlate
// to 0 by convention; single-element rows use the sign convention of
// center_normalize_rows, giving rho^2 = 1 for two nonzero scalars.
double corr_sq(const std::vector<double>& q_row, const std::vector<double>& k_row);

// Expansion stage applied to already centered-and-normalized rows xhat
// [N x L]: emits [1, xhat^2 / (sqrt(1!) sigma^(1/2)), xhat^4 / (sqrt(2!)
// sigma), ..., xhat^(2m) / (sqrt(m!) sigma^(m/2))], width 1 + m*L.
// Elementwise even powers make every feature sign-free.
Tensor power_features(const Tensor& xhat, int taylor_order, double sigma);

// Full feature map: center and L2-normalize each row (zero-variance rows map
// to the zero vector; single-column inputs to their sign), then expand.
// Row products phi(q_i) . phi(k_j) approximate exp(corr_sq(q_i,k_j)/sigma);
// the identity is exact in the scalar (L=1) case as m grows.
Tensor feature_map(const Tensor& x, int taylor_order, double sigma);

// q,k,v = projections(x); returns phi(q) * (phi(k)^T * v), divided row-wise
// by phi(q) * (phi(k)^T * 1) when normalize_output is set. Differentiable.
Tensor eksa_forward(const EksaLayer& layer, const Tensor& x);

// Wall-clock comparison of the softmax reference against the factorized
// path at fixed L over a grid of token counts.
struct BenchRow {
  int n = 0;
  double t_softmax_us = 0.0;
  double t_eksa_us = 0.0;
};

std::vector<BenchRow> complexity_bench(const std::vector<int>& n_grid, int seq_len,
                                       int repetitions, int taylor_order = 2,
                                       double sigma = 1.0, unsigned long long seed = 42);

// CSV with header `n,t_softmax_us,t_eksa_us`, one row per grid point.
void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out);

}  // namespace chebyodo
