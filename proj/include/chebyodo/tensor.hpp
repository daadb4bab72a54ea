#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "chebyodo/errors.hpp"

namespace chebyodo {

using Shape = std::vector<int>;

// Dense row-major tensor of 64-bit floats with reverse-mode autodiff.
//
// A Tensor is a cheap value handle onto shared storage. Operations are free
// functions declared below; when a Tape is active (see Tape::Scope) and an
// input requires gradients, the operation records a backward rule so that
// backward(loss) later fills the .grad() buffer of every tensor that
// requires gradients. Gradients accumulate: repeated backward calls without
// zero_grad() sum their contributions.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value) { return from({1}, {value}); }
  // Leaf tensor that participates in gradient computation (a parameter).
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int ndim() const;
  int dim(int axis) const;
  std::size_t size() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  std::vector<double>& vec();
  const std::vector<double>& vec() const;
  double* data();
  const double* data() const;

  // Scalar extraction; requires size() == 1.
  double item() const;

  // 2-D element access (row-major).
  double at(int r, int c) const;
  double& at(int r, int c);

  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool has_grad() const;
  void ensure_grad();  // allocate a zero gradient buffer if absent
  void zero_grad();

  // Deep copy of values (fresh storage, gradients not copied).
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  Impl& impl();
  const Impl& impl() const;
};

// Records the backward rules of operations executed under its scope, in
// execution order. backward(loss) replays them in reverse. A tape is
// confined to one thread; independent tapes on different threads may run in
// parallel. Entering a Scope makes the tape active for the current thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers the backward rule of one operation together with the
  // operation's output tensor (whose gradient buffer is reset at the start of
  // each backward pass, so that repeated backward calls accumulate exactly
  // one contribution per call into the leaves).
  void record(Tensor output, std::function<void()> backward_rule);
  std::size_t size() const { return records_.size(); }
  void clear() {
    records_.clear();
    outputs_.clear();
  }

  // Seeds d(loss)/d(loss) = 1 and replays every recorded rule in reverse.
  void backward(Tensor& loss);

  static Tape* active();

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  std::vector<std::function<void()>> records_;
  std::vector<Tensor> outputs_;
};

// Convenience: runs Tape::active()->backward(loss). Requires an active tape
// and a scalar loss.
void backward(Tensor& loss);

// ---- Elementwise operations ------------------------------------------------
// All elementwise binaries require identical shapes; scalar second operands
// get dedicated overloads. Inputs must be finite and inside the declared
// domains; arccos throws DomainError outside [-1, 1].

Tensor tanh(const Tensor& x);
Tensor arccos(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor scale(const Tensor& x, double c);       // x * c
Tensor add_scalar(const Tensor& x, double c);  // x + c

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // elementwise; b must be nonzero

// ---- Linear algebra ---------------------------------------------------------

// [M x K] * [K x P] -> [M x P]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);  // 2-D only

// Grouped 1-D cross-correlation.
// x: [C_in x L], weight: [C_out x C_in/groups x K] -> [C_out x L_out] with
// L_out = (L + 2*padding - K)/stride + 1. depthwise is a convenience flag
// asserting groups == C_in == C_out.
Tensor conv1d(const Tensor& x, const Tensor& weight, int stride, int padding,
              int groups, bool depthwise = false);

// ---- Reductions --------------------------------------------------------------
// Reduce one axis of a 1-D or 2-D tensor to size 1 (shape is kept, e.g.
// [C x L] -> [C x 1] for axis=1).

Tensor reduce_sum(const Tensor& x, int axis);
Tensor reduce_mean(const Tensor& x, int axis);
Tensor reduce_l2norm(const Tensor& x, int axis);

// ---- Structural operations ---------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis);  // 2-D, axis 0/1
Tensor slice(const Tensor& x, int axis, int start, int length);  // 2-D

// ---- Fused normalization helpers --------------------------------------------

// Per-row standardization over the column axis: y = (x - mean) / sqrt(var + eps)
// with population variance. Exactly constant rows come out as zero.
Tensor standardize_rows(const Tensor& x, double eps);

// Per-row affine y[r][c] = x[r][c] * scale[r] + bias[r]; scale/bias are 1-D [R].
Tensor row_affine(const Tensor& x, const Tensor& scale, const Tensor& bias);

// Per-row center-and-L2-normalize: y_r = (x_r - mean(x_r)) / ||x_r - mean(x_r)||.
// Rows with (near-)zero centered norm map to the zero vector. Single-column
// inputs skip centering and reduce to the sign of the entry, the perfectly
// correlated scalar limit.
Tensor center_normalize_rows(const Tensor& x);

// Divide each row of x [R x C] by d[r]; d is [R x 1] and must be nonzero.
Tensor div_rows(const Tensor& x, const Tensor& d);

// ---- Utilities ----------------------------------------------------------------

bool all_finite(const Tensor& x);
std::string shape_str(const Shape& shape);

}  // namespace chebyodo
