#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstddef>
#include <sstream>
#include <vector>

#include "chebyodo/eksa.hpp"
#include "chebyodo/errors.hpp"
#include "chebyodo/rng.hpp"
#include "chebyodo/tensor.hpp"
#include "oracles.hpp"

using namespace chebyodo;

namespace {

// Layer whose three projections are exact identities: pointwise = identity
// matrix, depthwise = unit center tap. Then q = k = v = x.
EksaLayer identity_layer(const EksaConfig& cfg) {
  Rng rng(0);
  EksaLayer layer = EksaLayer::init(cfg, rng);
  const int n = cfg.feature_dim;
  for (EksaProjection* proj : {&layer.q_proj, &layer.k_proj, &layer.v_proj}) {
    std::vector<double> pw(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) pw[static_cast<std::size_t>(i) * n + i] = 1.0;
    proj->pointwise = Tensor::param({n, n, 1}, std::move(pw));
    std::vector<double> dw(static_cast<std::size_t>(n) * 3, 0.0);
    for (int i = 0; i < n; ++i) dw[static_cast<std::size_t>(i) * 3 + 1] = 1.0;
    proj->depthwise = Tensor::param({n, 1, 3}, std::move(dw));
  }
  return layer;
}

}  // namespace

TEST_CASE("softmax attention with a single token returns v") {
  Rng rng(1);
  Tensor q = oracle::random_tensor({1, 5}, rng);
  Tensor k = oracle::random_tensor({1, 5}, rng);
  Tensor v = oracle::random_tensor({1, 5}, rng);
  Tensor y = softmax_attention(q, k, v, 5.0);
  for (std::size_t i = 0; i < v.vec().size(); ++i) {
    CHECK(y.vec()[i] == doctest::Approx(v.vec()[i]).epsilon(1e-14));
  }
}

TEST_CASE("softmax attention with zero queries averages v uniformly") {
  Rng rng(2);
  const int n = 6, l = 4;
  Tensor q = Tensor::zeros({n, l});
  Tensor k = oracle::random_tensor({n, l}, rng);
  Tensor v = oracle::random_tensor({n, l}, rng);
  Tensor y = softmax_attention(q, k, v, 4.0);
  for (int c = 0; c < l; ++c) {
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += v.at(j, c);
    mean /= n;
    for (int i = 0; i < n; ++i) {
      CHECK(y.at(i, c) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax attention matches the loop oracle") {
  Rng rng(3);
  const int n = 8, l = 4;
  Tensor q = oracle::random_tensor({n, l}, rng);
  Tensor k = oracle::random_tensor({n, l}, rng);
  Tensor v = oracle::random_tensor({n, l}, rng);
  Tensor y = softmax_attention(q, k, v, static_cast<double>(l));
  auto want = oracle::softmax_attention(q.vec(), k.vec(), v.vec(), n, l, l);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(want[i] - y.vec()[i]));
  }
  CHECK(max_diff < 1e-12);

  CHECK_THROWS_AS(softmax_attention(q, k, Tensor::zeros({n, l + 1}), 1.0), ShapeError);
  CHECK_THROWS_AS(softmax_attention(q, k, v, 0.0), ContractError);
}

TEST_CASE("corr_sq known values") {
  CHECK(corr_sq({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(corr_sq({1, 0, -1}, {0, 1, 0}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(corr_sq({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.64).epsilon(1e-10));
  // Zero-variance rows correlate to zero by convention.
  CHECK(corr_sq({5, 5, 5}, {1, 2, 3}) == 0.0);
  // Scalar rows: two nonzero values are perfectly correlated; zero is not.
  CHECK(corr_sq({2.0}, {-3.5}) == 1.0);
  CHECK(corr_sq({0.0}, {1.0}) == 0.0);
  CHECK_THROWS_AS(corr_sq({1, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("corr_sq matches the oracle and is affine-invariant") {
  Rng rng(20240812);
  const int l = 9;
  double max_diff = 0.0, max_inv = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> q(l), k(l);
    for (auto& v : q) v = rng.gaussian();
    for (auto& v : k) v = rng.gaussian();
    const double base = corr_sq(q, k);
    max_diff = std::max(max_diff, std::abs(base - oracle::corr_sq(q, k)));

    double a = 0.0;
    while (std::abs(a) < 1e-3) a = rng.uniform(-3.0, 3.0);
    const double b = rng.uniform(-5.0, 5.0);
    std::vector<double> qa(l);
    for (int i = 0; i < l; ++i) qa[i] = a * q[i] + b;
    max_inv = std::max(max_inv, std::abs(corr_sq(qa, k) - base));
  }
  CHECK(max_diff < 1e-12);
  CHECK(max_inv < 1e-10);
}

TEST_CASE("power features known rows") {
  // m=0: only the constant term survives.
  Tensor ones_only = power_features(Tensor::from({3, 4}, std::vector<double>(12, 0.5)), 0, 1.0);
  REQUIRE(ones_only.shape() == Shape{3, 1});
  for (double v : ones_only.vec()) CHECK(v == 1.0);

  // m=1, sigma=1 on a unit row: squares of the entries.
  Tensor xhat = Tensor::from({1, 2}, {0.6, 0.8});
  Tensor f = power_features(xhat, 1, 1.0);
  REQUIRE(f.shape() == Shape{1, 3});
  CHECK(f.vec()[0] == 1.0);
  CHECK(f.vec()[1] == doctest::Approx(0.36).epsilon(1e-12));
  CHECK(f.vec()[2] == doctest::Approx(0.64).epsilon(1e-12));

  // Higher orders carry 1/(sqrt(n!) sigma^(n/2)).
  const double sigma = 4.0;
  Tensor g = power_features(xhat, 2, sigma);
  REQUIRE(g.shape() == Shape{1, 5});
  CHECK(g.vec()[1] == doctest::Approx(0.36 / (std::sqrt(1.0) * 2.0)).epsilon(1e-12));
  CHECK(g.vec()[2] == doctest::Approx(0.64 / (std::sqrt(1.0) * 2.0)).epsilon(1e-12));
  CHECK(g.vec()[3] == doctest::Approx(std::pow(0.6, 4) / (std::sqrt(2.0) * 4.0)).epsilon(1e-12));
  CHECK(g.vec()[4] == doctest::Approx(std::pow(0.8, 4) / (std::sqrt(2.0) * 4.0)).epsilon(1e-12));
}

TEST_CASE("feature map width, degenerate rows, and affine invariance") {
  Rng rng(5);
  const int n = 7, l = 6, m = 3;
  Tensor x = oracle::random_tensor({n, l}, rng);
  Tensor f = feature_map(x, m, 1.0);
  REQUIRE(f.shape() == Shape{n, 1 + m * l});

  // A constant row contributes only the leading 1.
  Tensor flat = feature_map(Tensor::full({1, l}, 3.25), m, 1.0);
  CHECK(flat.vec()[0] == 1.0);
  for (std::size_t i = 1; i < flat.vec().size(); ++i) CHECK(flat.vec()[i] == 0.0);

  // Row-wise invariance under x -> a*x + b, including negative a.
  for (double a : {2.5, -0.75}) {
    Tensor xa = add_scalar(scale(x, a), 1.7);
    Tensor fa = feature_map(xa, m, 1.0);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < f.vec().size(); ++i) {
      max_diff = std::max(max_diff, std::abs(fa.vec()[i] - f.vec()[i]));
    }
    CHECK(max_diff < 1e-10);
  }
}

TEST_CASE("scalar-case kernel converges monotonically to exp(corr_sq)") {
  // For single-column rows the normalized values are signs, every even power
  // is 1, and the feature product is the m-term partial sum of e^(1/sigma).
  Tensor q = Tensor::from({1, 1}, {2.0});
  Tensor k = Tensor::from({1, 1}, {-3.5});
  const double target = std::exp(corr_sq({2.0}, {-3.5}));  // e^1
  double prev = 0.0;
  std::vector<double> rel(12, 0.0);
  for (int m = 0; m <= 11; ++m) {
    Tensor prod = matmul(feature_map(q, m, 1.0), transpose(feature_map(k, m, 1.0)));
    const double got = prod.item();
    CHECK(got > prev);        // strictly increasing in m
    CHECK(got < target);      // from below
    prev = got;
    rel[m] = std::abs(got - target) / target;
    // The truncated sum is exactly sum_{j<=m} 1/j!.
    double partial = 0.0, fact = 1.0;
    for (int j = 0; j <= m; ++j) {
      if (j > 0) fact *= j;
      partial += 1.0 / fact;
    }
    CHECK(got == doctest::Approx(partial).epsilon(1e-13));
  }
  // Truncation gap: just above 1e-6 at m=8, below it from m=9 on.
  CHECK(rel[8] > 1.0e-6);
  CHECK(rel[8] < 1.3e-6);
  CHECK(rel[9] < 1.0e-6);
}

TEST_CASE("kernel matrix is symmetric exactly and positive semidefinite") {
  Rng rng(6);
  const int n = 10, l = 6, m = 2;
  Tensor q = oracle::random_tensor({n, l}, rng);
  Tensor k = oracle::random_tensor({n, l}, rng);
  Tensor phi_q = feature_map(q, m, 1.0);
  Tensor phi_k = feature_map(k, m, 1.0);

  Tensor k1 = matmul(phi_q, transpose(phi_k));
  Tensor k2t = transpose(matmul(phi_k, transpose(phi_q)));
  for (std::size_t i = 0; i < k1.vec().size(); ++i) {
    CHECK(k1.vec()[i] == k2t.vec()[i]);  // bitwise: same products, same order
  }

  // Sanity-check the eigenvalue oracle on a known matrix first.
  CHECK(oracle::min_eigenvalue_sym({2, 1, 1, 2}, 2) == doctest::Approx(1.0).epsilon(1e-12));

  Tensor x = oracle::random_tensor({n, l}, rng);
  Tensor phi = feature_map(x, m, 1.0);
  Tensor gram = matmul(phi, transpose(phi));
  CHECK(oracle::min_eigenvalue_sym(gram.vec(), n) >= -1e-8);
}

TEST_CASE("order-zero attention sums or averages the values") {
  const int n = 5, l = 4;
  EksaConfig cfg;
  cfg.feature_dim = n;
  cfg.seq_len = l;
  cfg.taylor_order = 0;
  cfg.normalize_output = false;
  Rng rng(7);
  Tensor x = oracle::random_tensor({n, l}, rng);

  Tensor sums = eksa_forward(identity_layer(cfg), x);
  for (int c = 0; c < l; ++c) {
    double want = 0.0;
    for (int j = 0; j < n; ++j) want += x.at(j, c);
    for (int i = 0; i < n; ++i) {
      CHECK(sums.at(i, c) == doctest::Approx(want).epsilon(1e-12));
    }
  }

  cfg.normalize_output = true;
  Tensor means = eksa_forward(identity_layer(cfg), x);
  for (int c = 0; c < l; ++c) {
    double want = 0.0;
    for (int j = 0; j < n; ++j) want += x.at(j, c);
    want /= n;
    for (int i = 0; i < n; ++i) {
      CHECK(means.at(i, c) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("factorized product equals the quadratic-path product") {
  Rng rng(8);
  const int n = 16, l = 8, m = 2;
  Tensor q = oracle::random_tensor({n, l}, rng);
  Tensor k = oracle::random_tensor({n, l}, rng);
  Tensor v = oracle::random_tensor({n, l}, rng);
  Tensor phi_q = feature_map(q, m, 1.0);
  Tensor phi_k = feature_map(k, m, 1.0);

  Tensor linear = matmul(phi_q, matmul(transpose(phi_k), v));
  Tensor quadratic = matmul(matmul(phi_q, transpose(phi_k)), v);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < linear.vec().size(); ++i) {
    max_diff = std::max(max_diff, std::abs(linear.vec()[i] - quadratic.vec()[i]));
  }
  CHECK(max_diff < 1e-10);

  // End to end: the full forward with identity projections equals the
  // explicitly normalized quadratic path.
  EksaConfig cfg;
  cfg.feature_dim = n;
  cfg.seq_len = l;
  cfg.taylor_order = m;
  cfg.normalize_output = true;
  Tensor x = oracle::random_tensor({n, l}, rng);
  Tensor got = eksa_forward(identity_layer(cfg), x);

  Tensor phi = feature_map(x, m, 1.0);
  Tensor kmat = matmul(phi, transpose(phi));
  double max_err = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += kmat.at(i, j);
    for (int c = 0; c < l; ++c) {
      double want = 0.0;
      for (int j = 0; j < n; ++j) want += kmat.at(i, j) * x.at(j, c);
      max_err = std::max(max_err, std::abs(got.at(i, c) - want / z));
    }
  }
  CHECK(max_err < 1e-12);
}

TEST_CASE("forward validates shapes and config") {
  EksaConfig cfg;
  cfg.feature_dim = 4;
  cfg.seq_len = 6;
  Rng rng(9);
  EksaLayer layer = EksaLayer::init(cfg, rng);
  CHECK_THROWS_AS(eksa_forward(layer, Tensor::zeros({4, 5})), ShapeError);
  CHECK_THROWS_AS(eksa_forward(layer, Tensor::zeros({5, 6})), ShapeError);

  cfg.sigma = 0.0;
  CHECK_THROWS_AS(EksaLayer::init(cfg, rng), ContractError);
  cfg.sigma = 1.0;
  cfg.taylor_order = -1;
  CHECK_THROWS_AS(EksaLayer::init(cfg, rng), ContractError);
}

TEST_CASE("gradients agree with finite differences in both normalize modes") {
  for (bool normalize : {false, true}) {
    CAPTURE(normalize);
    EksaConfig cfg;
    cfg.feature_dim = 6;
    cfg.seq_len = 7;
    cfg.taylor_order = 2;
    cfg.sigma = 1.0;
    cfg.normalize_output = normalize;
    Rng rng(1234);
    EksaLayer layer = EksaLayer::init(cfg, rng);
    Tensor x = oracle::random_tensor({6, 7}, rng, 1.0, /*requires_grad=*/true);
    Tensor mixer = oracle::random_tensor({6, 7}, rng);

    auto forward = [&]() {
      Tensor y = eksa_forward(layer, x);
      return reduce_sum(reduce_sum(mul(y, mixer), 1), 0).item();
    };

    Tape tape;
    {
      Tape::Scope scope(tape);
      Tensor y = eksa_forward(layer, x);
      Tensor s = reduce_sum(reduce_sum(mul(y, mixer), 1), 0);
      backward(s);
    }

    Rng pick(55);
    for (auto& [name, p] : layer.parameters("eksa")) {
      INFO("parameter ", name);
      CHECK(oracle::fd_check(forward, p, p.grad(), pick).max_rel < 1e-4);
    }
    CHECK(oracle::fd_check(forward, x, x.grad(), pick).max_rel < 1e-4);
  }
}

TEST_CASE("forward is deterministic") {
  EksaConfig cfg;
  cfg.feature_dim = 8;
  cfg.seq_len = 10;
  Rng rng(10);
  EksaLayer layer = EksaLayer::init(cfg, rng);
  Tensor x = oracle::random_tensor({8, 10}, rng);
  Tensor y1 = eksa_forward(layer, x);
  Tensor y2 = eksa_forward(layer, x);
  for (std::size_t i = 0; i < y1.vec().size(); ++i) {
    CHECK(y1.vec()[i] == y2.vec()[i]);
  }
}

TEST_CASE("complexity bench produces plausible rows and CSV") {
  std::vector<int> grid{32, 64};
  auto rows = complexity_bench(grid, 8, 3);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].n == 32);
  CHECK(rows[1].n == 64);
  for (const auto& row : rows) {
    CHECK(row.t_softmax_us > 0.0);
    CHECK(row.t_eksa_us > 0.0);
  }

  std::ostringstream csv;
  write_bench_csv(rows, csv);
  const std::string text = csv.str();
  CHECK(text.rfind("n,t_softmax_us,t_eksa_us\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);

  CHECK_THROWS_AS(complexity_bench({64, 32}, 8, 3), ContractError);
  CHECK_THROWS_AS(complexity_bench(grid, 0, 3), ContractError);
}
