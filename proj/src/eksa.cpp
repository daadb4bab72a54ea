#include "chebyodo/eksa.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>

#include "chebyodo/errors.hpp"

namespace chebyodo {

namespace {

constexpr int kDepthwiseKernel = 3;
constexpr double kDegenerateNorm = 1e-12;

void validate(const EksaConfig& c) {
  if (c.feature_dim <= 0 || c.seq_len <= 0) {
    throw ContractError("eksa: feature_dim and seq_len must be positive");
  }
  if (c.taylor_order < 0) throw ContractError("eksa: taylor_order must be >= 0");
  if (!(c.sigma > 0.0)) throw ContractError("eksa: sigma must be positive");
}

EksaProjection init_projection(int n, Rng& rng) {
  EksaProjection proj;
  const double pw_bound = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<double> pw(static_cast<std::size_t>(n) * n);
  for (auto& v : pw) v = rng.uniform(-pw_bound, pw_bound);
  proj.pointwise = Tensor::param({n, n, 1}, std::move(pw));

  const double dw_bound = 1.0 / std::sqrt(static_cast<double>(kDepthwiseKernel));
  std::vector<double> dw(static_cast<std::size_t>(n) * kDepthwiseKernel);
  for (auto& v : dw) v = rng.uniform(-dw_bound, dw_bound);
  proj.depthwise = Tensor::param({n, 1, kDepthwiseKernel}, std::move(dw));
  return proj;
}

Tensor project(const EksaProjection& proj, const Tensor& x) {
  Tensor h = conv1d(x, proj.pointwise, 1, 0, 1);
  return conv1d(h, proj.depthwise, 1, kDepthwiseKernel / 2, h.dim(0),
                /*depthwise=*/true);
}

double median_us(std::vector<double>& samples) {
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  return n % 2 == 1 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

}  // namespace

EksaLayer EksaLayer::init(const EksaConfig& config, Rng& rng) {
  validate(config);
  EksaLayer layer;
  layer.config = config;
  layer.q_proj = init_projection(config.feature_dim, rng);
  layer.k_proj = init_projection(config.feature_dim, rng);
  layer.v_proj = init_projection(config.feature_dim, rng);
  return layer;
}

std::vector<std::pair<std::string, Tensor>> EksaLayer::parameters(
    const std::string& prefix) const {
  return {
      {prefix + ".q_proj.pointwise", q_proj.pointwise},
      {prefix + ".q_proj.depthwise", q_proj.depthwise},
      {prefix + ".k_proj.pointwise", k_proj.pointwise},
      {prefix + ".k_proj.depthwise", k_proj.depthwise},
      {prefix + ".v_proj.pointwise", v_proj.pointwise},
      {prefix + ".v_proj.depthwise", v_proj.depthwise},
  };
}

Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, double gamma) {
  if (q.ndim() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("softmax_attention: q/k/v must share one 2-D shape");
  }
  if (!(gamma > 0.0)) throw ContractError("softmax_attention: gamma must be positive");
  const int n = q.dim(0);
  const int l = q.dim(1);
  const double inv_scale = 1.0 / std::sqrt(gamma);
  const double* qd = q.data();
  const double* kd = k.data();
  const double* vd = v.data();

  Tensor out = Tensor::zeros({n, l});
  double* od = out.data();
  std::vector<double> scores(n);
  for (int i = 0; i < n; ++i) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int c = 0; c < l; ++c) s += qd[i * l + c] * kd[j * l + c];
      scores[j] = s * inv_scale;
      row_max = std::max(row_max, scores[j]);
    }
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      scores[j] = std::exp(scores[j] - row_max);
      z += scores[j];
    }
    for (int j = 0; j < n; ++j) {
      const double w = scores[j] / z;
      for (int c = 0; c < l; ++c) od[i * l + c] += w * vd[j * l + c];
    }
  }
  return out;
}

double corr_sq(const std::vector<double>& q_row, const std::vector<double>& k_row) {
  if (q_row.size() != k_row.size() || q_row.empty()) {
    throw ShapeError("corr_sq: rows must be non-empty and the same length");
  }
  const std::size_t l = q_row.size();
  if (l == 1) {
    // Single samples carry no variance; the scalar convention treats two
    // nonzero values as perfectly correlated.
    const double rho = (q_row[0] > 0 ? 1.0 : q_row[0] < 0 ? -1.0 : 0.0) *
                       (k_row[0] > 0 ? 1.0 : k_row[0] < 0 ? -1.0 : 0.0);
    return rho * rho;
  }
  double mq = 0.0, mk = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    mq += q_row[i];
    mk += k_row[i];
  }
  mq /= static_cast<double>(l);
  mk /= static_cast<double>(l);
  double dot = 0.0, nq = 0.0, nk = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    const double a = q_row[i] - mq;
    const double b = k_row[i] - mk;
    dot += a * b;
    nq += a * a;
    nk += b * b;
  }
  nq = std::sqrt(nq);
  nk = std::sqrt(nk);
  if (nq < kDegenerateNorm || nk < kDegenerateNorm) return 0.0;
  const double rho = dot / (nq * nk);
  return rho * rho;
}

Tensor power_features(const Tensor& xhat, int taylor_order, double sigma) {
  if (xhat.ndim() != 2) {
    throw ShapeError("power_features: expected [N x L], got " + shape_str(xhat.shape()));
  }
  if (taylor_order < 0) throw ContractError("power_features: taylor_order must be >= 0");
  if (!(sigma > 0.0)) throw ContractError("power_features: sigma must be positive");
  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(taylor_order) + 1);
  parts.push_back(Tensor::ones({xhat.dim(0), 1}));
  Tensor sq;      // xhat^2
  Tensor power;   // xhat^(2n)
  double fact = 1.0;
  for (int n = 1; n <= taylor_order; ++n) {
    if (n == 1) {
      sq = mul(xhat, xhat);
      power = sq;
    } else {
      power = mul(power, sq);
    }
    fact *= static_cast<double>(n);
    parts.push_back(scale(power, 1.0 / (std::sqrt(fact) * std::pow(sigma, 0.5 * n))));
  }
  return parts.size() == 1 ? parts[0] : concat(parts, 1);
}

Tensor feature_map(const Tensor& x, int taylor_order, double sigma) {
  return power_features(center_normalize_rows(x), taylor_order, sigma);
}

Tensor eksa_forward(const EksaLayer& layer, const Tensor& x) {
  const EksaConfig& cfg = layer.config;
  if (x.ndim() != 2 || x.dim(0) != cfg.feature_dim || x.dim(1) != cfg.seq_len) {
    throw ShapeError("eksa_forward: expected [" + std::to_string(cfg.feature_dim) + " x " +
                     std::to_string(cfg.seq_len) + "], got " + shape_str(x.shape()));
  }
  Tensor q = project(layer.q_proj, x);
  Tensor k = project(layer.k_proj, x);
  Tensor v = project(layer.v_proj, x);

  Tensor phi_q = feature_map(q, cfg.taylor_order, cfg.sigma);  // [N x F]
  Tensor phi_k = feature_map(k, cfg.taylor_order, cfg.sigma);  // [N x F]
  Tensor phi_k_t = transpose(phi_k);                           // [F x N]

  // Factorized order: (F x N)(N x L) then (N x F)(F x L) — never N x N.
  Tensor out = matmul(phi_q, matmul(phi_k_t, v));
  if (!cfg.normalize_output) return out;
  // Row weights of the implicit kernel matrix sum to phi_q . (phi_k^T 1);
  // every kernel entry is >= 1 (constant feature plus even powers), so the
  // divisor is at least N and never degenerate.
  Tensor denom = matmul(phi_q, matmul(phi_k_t, Tensor::ones({cfg.feature_dim, 1})));
  return div_rows(out, denom);
}

std::vector<BenchRow> complexity_bench(const std::vector<int>& n_grid, int seq_len,
                                       int repetitions, int taylor_order, double sigma,
                                       unsigned long long seed) {
  if (!std::is_sorted(n_grid.begin(), n_grid.end())) {
    throw ContractError("complexity_bench: grid must be sorted ascending");
  }
  if (seq_len <= 0 || repetitions <= 0) {
    throw ContractError("complexity_bench: seq_len and repetitions must be positive");
  }
  using clock = std::chrono::steady_clock;
  Rng rng(seed);
  const std::size_t sizes = n_grid.size();
  // The timed quantity is the attention computation given q,k,v: both paths
  // share projections, so those are excluded.
  volatile double sink = 0.0;
  std::vector<Tensor> qs, ks, vs;
  for (int n : n_grid) {
    const std::size_t count = static_cast<std::size_t>(n) * seq_len;
    std::vector<double> qv(count), kv(count), vv(count);
    for (auto& a : qv) a = rng.gaussian();
    for (auto& a : kv) a = rng.gaussian();
    for (auto& a : vv) a = rng.gaussian();
    qs.push_back(Tensor::from({n, seq_len}, std::move(qv)));
    ks.push_back(Tensor::from({n, seq_len}, std::move(kv)));
    vs.push_back(Tensor::from({n, seq_len}, std::move(vv)));
  }

  // Repetitions are interleaved across sizes (and preceded by one untimed
  // warm-up sweep) so cold-start costs, frequency ramps, and scheduler noise
  // spread over the whole grid instead of biasing one size's median.
  std::vector<std::vector<double>> t_soft(sizes), t_eksa(sizes);
  for (int r = -1; r < repetitions; ++r) {
    for (std::size_t i = 0; i < sizes; ++i) {
      const int n = n_grid[i];
      const Tensor &q = qs[i], &k = ks[i], &v = vs[i];

      auto t0 = clock::now();
      Tensor ys = softmax_attention(q, k, v, static_cast<double>(seq_len));
      auto t1 = clock::now();
      sink = sink + ys.vec()[0];

      auto t2 = clock::now();
      Tensor phi_q = feature_map(q, taylor_order, sigma);
      Tensor phi_k_t = transpose(feature_map(k, taylor_order, sigma));
      Tensor ye = matmul(phi_q, matmul(phi_k_t, v));
      Tensor denom = matmul(phi_q, matmul(phi_k_t, Tensor::ones({n, 1})));
      Tensor yn = div_rows(ye, denom);
      auto t3 = clock::now();
      sink = sink + yn.vec()[0];

      if (r >= 0) {
        t_soft[i].push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
        t_eksa[i].push_back(std::chrono::duration<double, std::micro>(t3 - t2).count());
      }
    }
  }

  std::vector<BenchRow> rows;
  rows.reserve(sizes);
  for (std::size_t i = 0; i < sizes; ++i) {
    rows.push_back({n_grid[i], median_us(t_soft[i]), median_us(t_eksa[i])});
  }
  (void)sink;
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out) {
  out << "n,t_softmax_us,t_eksa_us\n";
  for (const BenchRow& row : rows) {
    out << row.n << ',' << row.t_softmax_us << ',' << row.t_eksa_us << '\n';
  }
}

}  // namespace chebyodo
