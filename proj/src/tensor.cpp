#include "chebyodo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace chebyodo {

namespace {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

void check_shape_valid(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor axes must be positive, got " + shape_str(shape));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

void check_2d(const Tensor& x, const char* op) {
  if (x.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(x.shape()));
  }
}

thread_local Tape* t_active_tape = nullptr;

bool tracked(const Tensor& t) { return t_active_tape != nullptr && t.requires_grad(); }

// Marks `out` as gradient-carrying and gives it a zeroed grad buffer.
void mark_tracked(Tensor& out) {
  out.set_requires_grad(true);
  out.ensure_grad();
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// ---- Tensor -------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  check_shape_valid(shape);
  auto impl = std::make_shared<Impl>();
  impl->data.assign(shape_size(shape), 0.0);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.vec().begin(), t.vec().end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  check_shape_valid(shape);
  if (values.size() != shape_size(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not fill shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  t.ensure_grad();
  return t;
}

Tensor::Impl& Tensor::impl() {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

const Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
int Tensor::ndim() const { return static_cast<int>(impl().shape.size()); }

int Tensor::dim(int axis) const {
  const auto& s = impl().shape;
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return impl().data.size(); }

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool value) { impl().requires_grad = value; }

std::vector<double>& Tensor::vec() { return impl().data; }
const std::vector<double>& Tensor::vec() const { return impl().data; }
double* Tensor::data() { return impl().data.data(); }
const double* Tensor::data() const { return impl().data.data(); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() requires a scalar, got " + shape_str(shape()));
  return impl().data[0];
}

double Tensor::at(int r, int c) const {
  check_2d(*this, "at");
  return impl().data[static_cast<std::size_t>(r) * dim(1) + c];
}

double& Tensor::at(int r, int c) {
  check_2d(*this, "at");
  return impl().data[static_cast<std::size_t>(r) * dim(1) + c];
}

std::vector<double>& Tensor::grad() {
  ensure_grad();
  return impl().grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("gradient buffer was never allocated");
  return impl().grad;
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }

void Tensor::ensure_grad() {
  if (impl().grad.empty()) impl().grad.assign(impl().data.size(), 0.0);
}

void Tensor::zero_grad() {
  if (!impl().grad.empty()) std::fill(impl().grad.begin(), impl().grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  return Tensor::from(shape(), vec());
}

// ---- Tape ----------------------------------------------------------------------

void Tape::record(Tensor output, std::function<void()> backward_rule) {
  outputs_.push_back(std::move(output));
  records_.push_back(std::move(backward_rule));
}

void Tape::backward(Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward requires a loss that is connected to the tape");
  }
  // Intermediate gradients are per-pass scratch; leaves (which are never an
  // operation output) keep accumulating across passes.
  for (Tensor& out : outputs_) out.zero_grad();
  loss.ensure_grad();
  loss.grad()[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

Tape* Tape::active() { return t_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
Tape::Scope::~Scope() { t_active_tape = previous_; }

void backward(Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw ContractError("backward called with no active tape");
  tape->backward(loss);
}

// ---- Elementwise helpers ---------------------------------------------------------

namespace {

// Generic unary elementwise op. dfdx(x_i, y_i) is the local derivative.
template <class F, class D>
Tensor unary_op(const Tensor& x, F&& f, D&& dfdx) {
  Tensor out = Tensor::zeros(x.shape());
  const double* xs = x.data();
  double* ys = out.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) ys[i] = f(xs[i]);
  if (tracked(x)) {
    mark_tracked(out);
    Tensor xc = x;
    Tensor oc = out;
    Tape::active()->record(out, [xc, oc, dfdx]() mutable {
      const double* g = oc.grad().data();
      const double* xv = xc.data();
      const double* yv = oc.data();
      double* xg = xc.grad().data();
      const std::size_t n = xc.size();
      for (std::size_t i = 0; i < n; ++i) xg[i] += g[i] * dfdx(xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor arccos(const Tensor& x) {
  for (double v : x.vec()) {
    if (v < -1.0 || v > 1.0 || std::isnan(v)) {
      throw DomainError("arccos input " + std::to_string(v) + " outside [-1, 1]");
    }
  }
  return unary_op(
      x, [](double v) { return std::acos(v); },
      [](double v, double) {
        const double s = 1.0 - v * v;
        // The derivative is unbounded at |v| == 1; callers clamp away from the
        // boundary. Guard so an exact boundary value cannot produce inf.
        return s > 0.0 ? -1.0 / std::sqrt(s) : 0.0;
      });
}

Tensor cos(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::cos(v); },
      [](double v, double) { return -std::sin(v); });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor square(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo < hi)) throw DomainError("clamp requires lo < hi");
  return unary_op(
      x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor scale(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

namespace {

enum class BinOp { add, sub, mul, div };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  check_same_shape(a, b, name);
  Tensor out = Tensor::zeros(a.shape());
  const double* av = a.data();
  const double* bv = b.data();
  double* ov = out.data();
  const std::size_t n = a.size();
  switch (op) {
    case BinOp::add:
      for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
      break;
    case BinOp::sub:
      for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
      break;
    case BinOp::mul:
      for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
      break;
    case BinOp::div:
      for (std::size_t i = 0; i < n; ++i) {
        if (bv[i] == 0.0) throw DomainError("div: zero divisor");
        ov[i] = av[i] / bv[i];
      }
      break;
  }
  if (tracked(a) || tracked(b)) {
    mark_tracked(out);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record(out, [ac, bc, oc, op]() mutable {
      const double* g = oc.grad().data();
      const double* av = ac.data();
      const double* bv = bc.data();
      const std::size_t n = ac.size();
      const bool ga = ac.requires_grad();
      const bool gb = bc.requires_grad();
      double* agr = ga ? ac.grad().data() : nullptr;
      double* bgr = gb ? bc.grad().data() : nullptr;
      switch (op) {
        case BinOp::add:
          for (std::size_t i = 0; i < n; ++i) {
            if (ga) agr[i] += g[i];
            if (gb) bgr[i] += g[i];
          }
          break;
        case BinOp::sub:
          for (std::size_t i = 0; i < n; ++i) {
            if (ga) agr[i] += g[i];
            if (gb) bgr[i] -= g[i];
          }
          break;
        case BinOp::mul:
          for (std::size_t i = 0; i < n; ++i) {
            if (ga) agr[i] += g[i] * bv[i];
            if (gb) bgr[i] += g[i] * av[i];
          }
          break;
        case BinOp::div:
          for (std::size_t i = 0; i < n; ++i) {
            const double inv = 1.0 / bv[i];
            if (ga) agr[i] += g[i] * inv;
            if (gb) bgr[i] -= g[i] * av[i] * inv * inv;
          }
          break;
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::div, "div"); }

// ---- Linear algebra ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), p = b.dim(1);
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, p});
  {
    const double* av = a.data();
    const double* bv = b.data();
    double* ov = out.data();
    for (int i = 0; i < m; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        const double aik = av[static_cast<std::size_t>(i) * k + kk];
        if (aik == 0.0) continue;
        const double* brow = bv + static_cast<std::size_t>(kk) * p;
        double* orow = ov + static_cast<std::size_t>(i) * p;
        for (int j = 0; j < p; ++j) orow[j] += aik * brow[j];
      }
    }
  }
  if (tracked(a) || tracked(b)) {
    mark_tracked(out);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record(out, [ac, bc, oc, m, k, p]() mutable {
      const double* g = oc.grad().data();
      if (ac.requires_grad()) {
        // dA = G * B^T
        double* agr = ac.grad().data();
        const double* bv = bc.data();
        for (int i = 0; i < m; ++i) {
          const double* grow = g + static_cast<std::size_t>(i) * p;
          double* arow = agr + static_cast<std::size_t>(i) * k;
          for (int kk = 0; kk < k; ++kk) {
            const double* brow = bv + static_cast<std::size_t>(kk) * p;
            double acc = 0.0;
            for (int j = 0; j < p; ++j) acc += grow[j] * brow[j];
            arow[kk] += acc;
          }
        }
      }
      if (bc.requires_grad()) {
        // dB = A^T * G
        double* bgr = bc.grad().data();
        const double* av = ac.data();
        for (int i = 0; i < m; ++i) {
          const double* grow = g + static_cast<std::size_t>(i) * p;
          const double* arow = av + static_cast<std::size_t>(i) * k;
          for (int kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            if (aik == 0.0) continue;
            double* brow = bgr + static_cast<std::size_t>(kk) * p;
            for (int j = 0; j < p; ++j) brow[j] += aik * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  check_2d(x, "transpose");
  const int r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({c, r});
  const double* xv = x.data();
  double* ov = out.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) ov[static_cast<std::size_t>(j) * r + i] = xv[static_cast<std::size_t>(i) * c + j];
  if (tracked(x)) {
    mark_tracked(out);
    Tensor xc = x, oc = out;
    Tape::active()->record(out, [xc, oc, r, c]() mutable {
      const double* g = oc.grad().data();
      double* xg = xc.grad().data();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          xg[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
    });
  }
  return out;
}

Tensor conv1d(const Tensor& x, const Tensor& weight, int stride, int padding, int groups,
              bool depthwise) {
  check_2d(x, "conv1d");
  if (weight.ndim() != 3) {
    throw ShapeError("conv1d: weight must be [C_out x C_in/groups x K], got " +
                     shape_str(weight.shape()));
  }
  if (stride < 1) throw ShapeError("conv1d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv1d: padding must be >= 0");
  const int c_in = x.dim(0), len = x.dim(1);
  const int c_out = weight.dim(0), c_per_group = weight.dim(1), k = weight.dim(2);
  if (groups < 1 || c_in % groups != 0 || c_out % groups != 0) {
    throw ShapeError("conv1d: groups " + std::to_string(groups) + " must divide channels " +
                     std::to_string(c_in) + " and " + std::to_string(c_out));
  }
  if (c_per_group != c_in / groups) {
    throw ShapeError("conv1d: weight expects " + std::to_string(c_per_group) +
                     " channels per group, input provides " + std::to_string(c_in / groups));
  }
  if (depthwise && (groups != c_in || c_out != c_in)) {
    throw ShapeError("conv1d: depthwise requires groups == C_in == C_out");
  }
  const int l_out = (len + 2 * padding - k) / stride + 1;
  if (len + 2 * padding < k || l_out < 1) {
    throw ShapeError("conv1d: kernel " + std::to_string(k) + " too large for length " +
                     std::to_string(len) + " with padding " + std::to_string(padding));
  }

  Tensor out = Tensor::zeros({c_out, l_out});
  const int out_per_group = c_out / groups;
  {
    const double* xv = x.data();
    const double* wv = weight.data();
    double* ov = out.data();
    for (int oc = 0; oc < c_out; ++oc) {
      const int g = oc / out_per_group;
      double* orow = ov + static_cast<std::size_t>(oc) * l_out;
      for (int icg = 0; icg < c_per_group; ++icg) {
        const int ic = g * c_per_group + icg;
        const double* xrow = xv + static_cast<std::size_t>(ic) * len;
        const double* wrow =
            wv + (static_cast<std::size_t>(oc) * c_per_group + icg) * k;
        for (int kk = 0; kk < k; ++kk) {
          const double w = wrow[kk];
          if (w == 0.0) continue;
          // input index: li = lo*stride - padding + kk
          for (int lo = 0; lo < l_out; ++lo) {
            const int li = lo * stride - padding + kk;
            if (li >= 0 && li < len) orow[lo] += w * xrow[li];
          }
        }
      }
    }
  }

  if (tracked(x) || tracked(weight)) {
    mark_tracked(out);
    Tensor xc = x, wc = weight, oc2 = out;
    Tape::active()->record(out, [xc, wc, oc2, stride, padding, c_in, len, c_out, c_per_group, k,
                            l_out, out_per_group]() mutable {
      const double* g = oc2.grad().data();
      const double* xv = xc.data();
      const double* wv = wc.data();
      const bool gx = xc.requires_grad();
      const bool gw = wc.requires_grad();
      double* xg = gx ? xc.grad().data() : nullptr;
      double* wg = gw ? wc.grad().data() : nullptr;
      for (int oc = 0; oc < c_out; ++oc) {
        const int grp = oc / out_per_group;
        const double* grow = g + static_cast<std::size_t>(oc) * l_out;
        for (int icg = 0; icg < c_per_group; ++icg) {
          const int ic = grp * c_per_group + icg;
          const double* xrow = xv + static_cast<std::size_t>(ic) * len;
          const std::size_t woff = (static_cast<std::size_t>(oc) * c_per_group + icg) * k;
          double* xgrow = gx ? xg + static_cast<std::size_t>(ic) * len : nullptr;
          for (int kk = 0; kk < k; ++kk) {
            const double w = wv[woff + kk];
            double wacc = 0.0;
            for (int lo = 0; lo < l_out; ++lo) {
              const int li = lo * stride - padding + kk;
              if (li < 0 || li >= len) continue;
              const double go = grow[lo];
              if (gw) wacc += go * xrow[li];
              if (gx) xgrow[li] += go * w;
            }
            if (gw) wg[woff + kk] += wacc;
          }
        }
      }
    });
  }
  return out;
}

// ---- Reductions -----------------------------------------------------------------------

namespace {

enum class Reduce { sum, mean, l2norm };

Tensor reduce_op(const Tensor& x, int axis, Reduce kind, const char* name) {
  if (x.ndim() == 1) {
    if (axis != 0) throw ShapeError(std::string(name) + ": axis out of range for 1-D tensor");
  } else if (x.ndim() == 2) {
    if (axis != 0 && axis != 1) throw ShapeError(std::string(name) + ": axis must be 0 or 1");
  } else {
    throw ShapeError(std::string(name) + ": only 1-D and 2-D tensors supported");
  }

  // Normalize to a 2-D view [R x C]; reduce over columns when axis==1 (or 1-D).
  const bool one_d = x.ndim() == 1;
  const int rows = one_d ? 1 : x.dim(0);
  const int cols = one_d ? x.dim(0) : x.dim(1);
  const bool over_cols = one_d || axis == 1;

  Shape out_shape;
  if (one_d) {
    out_shape = {1};
  } else if (over_cols) {
    out_shape = {rows, 1};
  } else {
    out_shape = {1, cols};
  }
  Tensor out = Tensor::zeros(out_shape);

  const double* xv = x.data();
  double* ov = out.data();
  const int n_out = over_cols ? rows : cols;
  const int n_red = over_cols ? cols : rows;
  auto in_index = [over_cols, cols](int o, int r) -> std::size_t {
    return over_cols ? static_cast<std::size_t>(o) * cols + r
                     : static_cast<std::size_t>(r) * cols + o;
  };

  for (int o = 0; o < n_out; ++o) {
    double acc = 0.0;
    for (int r = 0; r < n_red; ++r) {
      const double v = xv[in_index(o, r)];
      acc += (kind == Reduce::l2norm) ? v * v : v;
    }
    if (kind == Reduce::mean) acc /= n_red;
    if (kind == Reduce::l2norm) acc = std::sqrt(acc);
    ov[o] = acc;
  }

  if (tracked(x)) {
    mark_tracked(out);
    Tensor xc = x, oc = out;
    Tape::active()->record(out, [xc, oc, kind, n_out, n_red, in_index]() mutable {
      const double* g = oc.grad().data();
      const double* yv = oc.data();
      const double* xv = xc.data();
      double* xg = xc.grad().data();
      for (int o = 0; o < n_out; ++o) {
        switch (kind) {
          case Reduce::sum:
            for (int r = 0; r < n_red; ++r) xg[in_index(o, r)] += g[o];
            break;
          case Reduce::mean:
            for (int r = 0; r < n_red; ++r) xg[in_index(o, r)] += g[o] / n_red;
            break;
          case Reduce::l2norm: {
            const double y = yv[o];
            if (y > 0.0) {
              for (int r = 0; r < n_red; ++r) xg[in_index(o, r)] += g[o] * xv[in_index(o, r)] / y;
            }
            break;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor reduce_sum(const Tensor& x, int axis) { return reduce_op(x, axis, Reduce::sum, "reduce_sum"); }
Tensor reduce_mean(const Tensor& x, int axis) { return reduce_op(x, axis, Reduce::mean, "reduce_mean"); }
Tensor reduce_l2norm(const Tensor& x, int axis) { return reduce_op(x, axis, Reduce::l2norm, "reduce_l2norm"); }

// ---- Structural ops ----------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no tensors given");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const Tensor& p : parts) check_2d(p, "concat");
  const int fixed_axis = 1 - axis;
  const int fixed = parts[0].dim(fixed_axis);
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.dim(fixed_axis) != fixed) {
      throw ShapeError("concat: tensors disagree on axis " + std::to_string(fixed_axis));
    }
    total += p.dim(axis);
  }

  Shape out_shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  Tensor out = Tensor::zeros(out_shape);
  const int out_cols = out.dim(1);

  int offset = 0;
  bool any_tracked = false;
  for (const Tensor& p : parts) any_tracked = any_tracked || tracked(p);

  std::vector<int> offsets;
  offsets.reserve(parts.size());
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const int pr = p.dim(0), pc = p.dim(1);
    const double* pv = p.data();
    double* ov = out.data();
    for (int i = 0; i < pr; ++i) {
      for (int j = 0; j < pc; ++j) {
        const int oi = axis == 0 ? i + offset : i;
        const int oj = axis == 0 ? j : j + offset;
        ov[static_cast<std::size_t>(oi) * out_cols + oj] = pv[static_cast<std::size_t>(i) * pc + j];
      }
    }
    offset += p.dim(axis);
  }

  if (any_tracked) {
    mark_tracked(out);
    std::vector<Tensor> pc = parts;
    Tensor oc = out;
    Tape::active()->record(out, [pc, oc, offsets, axis, out_cols]() mutable {
      const double* g = oc.grad().data();
      for (std::size_t pi = 0; pi < pc.size(); ++pi) {
        if (!pc[pi].requires_grad()) continue;
        const int pr = pc[pi].dim(0), pcols = pc[pi].dim(1);
        double* pg = pc[pi].grad().data();
        for (int i = 0; i < pr; ++i) {
          for (int j = 0; j < pcols; ++j) {
            const int oi = axis == 0 ? i + offsets[pi] : i;
            const int oj = axis == 0 ? j : j + offsets[pi];
            pg[static_cast<std::size_t>(i) * pcols + j] +=
                g[static_cast<std::size_t>(oi) * out_cols + oj];
          }
        }
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  check_2d(x, "slice");
  if (axis != 0 && axis != 1) throw ShapeError("slice: axis must be 0 or 1");
  if (start < 0 || length <= 0 || start + length > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of bounds for axis size " +
                     std::to_string(x.dim(axis)));
  }
  const int rows = axis == 0 ? length : x.dim(0);
  const int cols = axis == 0 ? x.dim(1) : length;
  Tensor out = Tensor::zeros({rows, cols});
  const int xc = x.dim(1);
  const double* xv = x.data();
  double* ov = out.data();
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const int xi = axis == 0 ? i + start : i;
      const int xj = axis == 0 ? j : j + start;
      ov[static_cast<std::size_t>(i) * cols + j] = xv[static_cast<std::size_t>(xi) * xc + xj];
    }
  }
  if (tracked(x)) {
    mark_tracked(out);
    Tensor xcpy = x, oc = out;
    Tape::active()->record(out, [xcpy, oc, axis, start, rows, cols, xc]() mutable {
      const double* g = oc.grad().data();
      double* xg = xcpy.grad().data();
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
          const int xi = axis == 0 ? i + start : i;
          const int xj = axis == 0 ? j : j + start;
          xg[static_cast<std::size_t>(xi) * xc + xj] += g[static_cast<std::size_t>(i) * cols + j];
        }
      }
    });
  }
  return out;
}

// ---- Fused normalization ops ------------------------------------------------------------

Tensor standardize_rows(const Tensor& x, double eps) {
  check_2d(x, "standardize_rows");
  if (eps <= 0.0) throw DomainError("standardize_rows: eps must be positive");
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor out = Tensor::zeros({rows, cols});
  std::vector<double> inv_std(rows);
  {
    const double* xv = x.data();
    double* ov = out.data();
    for (int r = 0; r < rows; ++r) {
      const double* xrow = xv + static_cast<std::size_t>(r) * cols;
      double mean = 0.0;
      for (int c = 0; c < cols; ++c) mean += xrow[c];
      mean /= cols;
      double var = 0.0;
      for (int c = 0; c < cols; ++c) {
        const double d = xrow[c] - mean;
        var += d * d;
      }
      var /= cols;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[r] = is;
      double* orow = ov + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) orow[c] = (xrow[c] - mean) * is;
    }
  }
  if (tracked(x)) {
    mark_tracked(out);
    Tensor xc = x, oc = out;
    Tape::active()->record(out, [xc, oc, rows, cols, inv_std]() mutable {
      const double* g = oc.grad().data();
      const double* yv = oc.data();
      double* xg = xc.grad().data();
      for (int r = 0; r < rows; ++r) {
        const double* grow = g + static_cast<std::size_t>(r) * cols;
        const double* yrow = yv + static_cast<std::size_t>(r) * cols;
        double gmean = 0.0, gymean = 0.0;
        for (int c = 0; c < cols; ++c) {
          gmean += grow[c];
          gymean += grow[c] * yrow[c];
        }
        gmean /= cols;
        gymean /= cols;
        const double is = inv_std[r];
        double* xgrow = xg + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
          xgrow[c] += is * (grow[c] - gmean - yrow[c] * gymean);
        }
      }
    });
  }
  return out;
}

Tensor row_affine(const Tensor& x, const Tensor& scale_t, const Tensor& bias_t) {
  check_2d(x, "row_affine");
  const int rows = x.dim(0), cols = x.dim(1);
  if (scale_t.ndim() != 1 || scale_t.dim(0) != rows || bias_t.ndim() != 1 ||
      bias_t.dim(0) != rows) {
    throw ShapeError("row_affine: scale/bias must be 1-D of length " + std::to_string(rows));
  }
  Tensor out = Tensor::zeros({rows, cols});
  {
    const double* xv = x.data();
    const double* sv = scale_t.data();
    const double* bv = bias_t.data();
    double* ov = out.data();
    for (int r = 0; r < rows; ++r) {
      const double s = sv[r], b = bv[r];
      const double* xrow = xv + static_cast<std::size_t>(r) * cols;
      double* orow = ov + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) orow[c] = xrow[c] * s + b;
    }
  }
  if (tracked(x) || tracked(scale_t) || tracked(bias_t)) {
    mark_tracked(out);
    Tensor xc = x, sc = scale_t, bc = bias_t, oc = out;
    Tape::active()->record(out, [xc, sc, bc, oc, rows, cols]() mutable {
      const double* g = oc.grad().data();
      const double* xv = xc.data();
      const double* sv = sc.data();
      const bool gx = xc.requires_grad(), gs = sc.requires_grad(), gb = bc.requires_grad();
      double* xg = gx ? xc.grad().data() : nullptr;
      double* sg = gs ? sc.grad().data() : nullptr;
      double* bg = gb ? bc.grad().data() : nullptr;
      for (int r = 0; r < rows; ++r) {
        const double* grow = g + static_cast<std::size_t>(r) * cols;
        const double* xrow = xv + static_cast<std::size_t>(r) * cols;
        const double s = sv[r];
        double sacc = 0.0, bacc = 0.0;
        for (int c = 0; c < cols; ++c) {
          if (gx) xg[static_cast<std::size_t>(r) * cols + c] += grow[c] * s;
          sacc += grow[c] * xrow[c];
          bacc += grow[c];
        }
        if (gs) sg[r] += sacc;
        if (gb) bg[r] += bacc;
      }
    });
  }
  return out;
}

Tensor center_normalize_rows(const Tensor& x) {
  check_2d(x, "center_normalize_rows");
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor out = Tensor::zeros({rows, cols});
  // Degenerate rows (norm below this) map to zero; their gradient is zero.
  constexpr double kDegenerate = 1e-12;
  std::vector<double> inv_norm(rows, 0.0);
  {
    const double* xv = x.data();
    double* ov = out.data();
    for (int r = 0; r < rows; ++r) {
      const double* xrow = xv + static_cast<std::size_t>(r) * cols;
      double* orow = ov + static_cast<std::size_t>(r) * cols;
      if (cols == 1) {
        // Scalar rows: centering would always produce zero, so normalize the
        // raw value instead -- the perfectly correlated scalar limit.
        const double v = xrow[0];
        orow[0] = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        continue;
      }
      double mean = 0.0;
      for (int c = 0; c < cols; ++c) mean += xrow[c];
      mean /= cols;
      double sq = 0.0;
      for (int c = 0; c < cols; ++c) {
        const double d = xrow[c] - mean;
        sq += d * d;
      }
      const double norm = std::sqrt(sq);
      if (norm <= kDegenerate) continue;  // row stays zero
      const double in = 1.0 / norm;
      inv_norm[r] = in;
      for (int c = 0; c < cols; ++c) orow[c] = (xrow[c] - mean) * in;
    }
  }
  if (tracked(x)) {
    mark_tracked(out);
    Tensor xc = x, oc = out;
    Tape::active()->record(out, [xc, oc, rows, cols, inv_norm]() mutable {
      if (cols == 1) return;  // sign() has zero gradient almost everywhere
      const double* g = oc.grad().data();
      const double* yv = oc.data();
      double* xg = xc.grad().data();
      for (int r = 0; r < rows; ++r) {
        const double in = inv_norm[r];
        if (in == 0.0) continue;  // degenerate row: zero gradient
        const double* grow = g + static_cast<std::size_t>(r) * cols;
        const double* yrow = yv + static_cast<std::size_t>(r) * cols;
        // dL/dc = (g - y * (y . g)) / ||c||, then remove the mean over the row
        // (the centering step distributes gradient uniformly).
        double ydotg = 0.0;
        for (int c = 0; c < cols; ++c) ydotg += yrow[c] * grow[c];
        double mean_dc = 0.0;
        for (int c = 0; c < cols; ++c) mean_dc += (grow[c] - yrow[c] * ydotg) * in;
        mean_dc /= cols;
        double* xgrow = xg + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
          xgrow[c] += (grow[c] - yrow[c] * ydotg) * in - mean_dc;
        }
      }
    });
  }
  return out;
}

Tensor div_rows(const Tensor& x, const Tensor& d) {
  check_2d(x, "div_rows");
  const int rows = x.dim(0), cols = x.dim(1);
  if (d.ndim() != 2 || d.dim(0) != rows || d.dim(1) != 1) {
    throw ShapeError("div_rows: divisor must be [" + std::to_string(rows) + " x 1], got " +
                     shape_str(d.shape()));
  }
  for (double v : d.vec()) {
    if (v == 0.0) throw DomainError("div_rows: zero divisor row");
  }
  Tensor out = Tensor::zeros({rows, cols});
  {
    const double* xv = x.data();
    const double* dv = d.data();
    double* ov = out.data();
    for (int r = 0; r < rows; ++r) {
      const double inv = 1.0 / dv[r];
      for (int c = 0; c < cols; ++c) {
        ov[static_cast<std::size_t>(r) * cols + c] = xv[static_cast<std::size_t>(r) * cols + c] * inv;
      }
    }
  }
  if (tracked(x) || tracked(d)) {
    mark_tracked(out);
    Tensor xc = x, dc = d, oc = out;
    Tape::active()->record(out, [xc, dc, oc, rows, cols]() mutable {
      const double* g = oc.grad().data();
      const double* xv = xc.data();
      const double* dv = dc.data();
      const bool gx = xc.requires_grad(), gd = dc.requires_grad();
      double* xg = gx ? xc.grad().data() : nullptr;
      double* dg = gd ? dc.grad().data() : nullptr;
      for (int r = 0; r < rows; ++r) {
        const double inv = 1.0 / dv[r];
        double dacc = 0.0;
        for (int c = 0; c < cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * cols + c;
          if (gx) xg[i] += g[i] * inv;
          dacc -= g[i] * xv[i] * inv * inv;
        }
        if (gd) dg[r] += dacc;
      }
    });
  }
  return out;
}

bool all_finite(const Tensor& x) {
  for (double v : x.vec()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace chebyodo
