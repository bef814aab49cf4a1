#include "vps/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vps/error.hpp"

VPS_BEGIN_NAMESPACE

namespace {

thread_local Tape* g_active_tape = nullptr;

using Acc = double;  // accumulator type for reductions

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Returns the active tape when the op must be recorded, else nullptr.
Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (tape == nullptr || !any_requires_grad(inputs)) return nullptr;
  return tape;
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + " tensor, got " +
                     shape_string(x.shape()));
  }
}

void require_defined(const Tensor& x, const char* op) {
  if (!x.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " invalid for shape " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

enum class BinaryOp { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, BinaryOp op, const char* name) {
  require_defined(a, name);
  require_defined(b, name);
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw ShapeError(std::string(name) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const Shape& out_shape = a_scalar ? b.shape() : a.shape();
  Tensor out = Tensor::zeros(out_shape);
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  const std::size_t n = ov.size();
  auto ai = [&](std::size_t i) { return a_scalar ? av[0] : av[i]; };
  auto bi = [&](std::size_t i) { return b_scalar ? bv[0] : bv[i]; };
  for (std::size_t i = 0; i < n; ++i) {
    switch (op) {
      case BinaryOp::kAdd: ov[i] = ai(i) + bi(i); break;
      case BinaryOp::kSub: ov[i] = ai(i) - bi(i); break;
      case BinaryOp::kMul: ov[i] = ai(i) * bi(i); break;
      case BinaryOp::kDiv: ov[i] = ai(i) / bi(i); break;
    }
  }
  if (Tape* tape = recording_tape({&a, &b})) {
    out.set_requires_grad(true);
    tape->push({a, b}, out, [a, b, out, op, a_scalar, b_scalar]() mutable {
      const auto g = std::as_const(out).grad();
      const auto av = std::as_const(a).data();
      const auto bv = std::as_const(b).data();
      const std::size_t n = g.size();
      auto aval = [&](std::size_t i) { return a_scalar ? av[0] : av[i]; };
      auto bval = [&](std::size_t i) { return b_scalar ? bv[0] : bv[i]; };
      if (a.requires_grad()) {
        auto ga = a.grad();
        Acc total = 0;
        for (std::size_t i = 0; i < n; ++i) {
          Real d = 0;
          switch (op) {
            case BinaryOp::kAdd: d = g[i]; break;
            case BinaryOp::kSub: d = g[i]; break;
            case BinaryOp::kMul: d = g[i] * bval(i); break;
            case BinaryOp::kDiv: d = g[i] / bval(i); break;
          }
          if (a_scalar) total += d; else ga[i] += d;
        }
        if (a_scalar) ga[0] += static_cast<Real>(total);
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        Acc total = 0;
        for (std::size_t i = 0; i < n; ++i) {
          Real d = 0;
          switch (op) {
            case BinaryOp::kAdd: d = g[i]; break;
            case BinaryOp::kSub: d = -g[i]; break;
            case BinaryOp::kMul: d = g[i] * aval(i); break;
            case BinaryOp::kDiv: {
              const Real bv_i = bval(i);
              d = -g[i] * aval(i) / (bv_i * bv_i);
              break;
            }
          }
          if (b_scalar) total += d; else gb[i] += d;
        }
        if (b_scalar) gb[0] += static_cast<Real>(total);
      }
    });
  }
  return out;
}

// Elementwise unary op with derivative expressed via input and output.
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  require_defined(x, name);
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = f(xv[i]);
  if (Tape* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    tape->push({x}, out, [x, out, df]() mutable {
      const auto g = std::as_const(out).grad();
      const auto xv = std::as_const(x).data();
      const auto ov = std::as_const(out).data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], ov[i]);
    });
  }
  return out;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  Tensor t;
  t.data_ = std::make_shared<detail::TensorData>();
  const std::size_t n = shape_numel(shape);
  t.data_->shape = std::move(shape);
  t.data_->value.assign(n, value);
  t.data_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  Tensor t;
  t.data_ = std::make_shared<detail::TensorData>();
  t.data_->shape = std::move(shape);
  t.data_->value = std::move(values);
  t.data_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Real Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on non-scalar tensor " + shape_string(shape()));
  }
  return data_->value[0];
}

void Tensor::set_requires_grad(bool on) { data_->requires_grad = on; }

std::span<Real> Tensor::grad() const {
  if (data_->grad.empty()) data_->grad.assign(data_->value.size(), Real(0));
  return data_->grad;
}

void Tensor::zero_grad() {
  std::fill(data_->grad.begin(), data_->grad.end(), Real(0));
}

Tensor Tensor::clone() const {
  Tensor t = from(shape(), data_->value, requires_grad());
  t.data_->grad = data_->grad;
  return t;
}

Tensor Tensor::detach() const { return from(shape(), data_->value, false); }

// ---------------------------------------------------------------- Tape

Tape::Recording::Recording(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

Tape::Recording::~Recording() { g_active_tape = previous_; }

Tape::Pause::Pause() : previous_(g_active_tape) { g_active_tape = nullptr; }

Tape::Pause::~Pause() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::push(std::vector<Tensor> inputs, Tensor output,
                std::function<void()> backward_fn) {
  nodes_.push_back({std::move(inputs), std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_string(loss.shape()));
  }
  bool connected = false;
  for (auto& node : nodes_) {
    for (auto& in : node.inputs) {
      if (in.requires_grad()) in.zero_grad();
    }
    node.output.zero_grad();
    if (node.output.same_storage(loss)) connected = true;
  }
  if (!connected && !loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to the tape");
  }
  Tensor seed = loss;
  seed.grad()[0] = Real(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward_fn();
  }
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinaryOp::kAdd, "add");
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinaryOp::kSub, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinaryOp::kMul, "mul");
}
Tensor div(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinaryOp::kDiv, "div");
}

Tensor scale(const Tensor& x, Real factor) {
  return unary(
      x, "scale", [factor](Real v) { return v * factor; },
      [factor](Real, Real) { return factor; });
}

Tensor add_scalar(const Tensor& x, Real value) {
  return unary(
      x, "add_scalar", [value](Real v) { return v + value; },
      [](Real, Real) { return Real(1); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](Real v) { return v > 0 ? v : Real(0); },
      [](Real v, Real) { return v > 0 ? Real(1) : Real(0); });
}

Tensor gelu(const Tensor& x) {
  // Exact form: x * Phi(x).
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, "gelu",
      [](Real v) {
        const double d = v;
        return static_cast<Real>(0.5 * d * (1.0 + std::erf(d * kInvSqrt2)));
      },
      [](Real v, Real) {
        const double d = v;
        const double cdf = 0.5 * (1.0 + std::erf(d * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * d * d);
        return static_cast<Real>(cdf + d * pdf);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](Real v) {
        if (v >= 0) return Real(1) / (Real(1) + std::exp(-v));
        const Real e = std::exp(v);
        return e / (Real(1) + e);
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](Real v) { return std::log(v); },
      [](Real v, Real) { return Real(1) / v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](Real v) { return std::exp(v); },
      [](Real, Real y) { return y; });
}

// ---------------------------------------------------------------- linear algebra

namespace {

// c[m×n] += a[m×k] · b[k×n]
void gemm_nn(std::span<const Real> a, std::span<const Real> b, std::span<Real> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = a[i * k + p];
      if (av == Real(0)) continue;
      const Real* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m×k] += g[m×n] · b[k×n]ᵀ
void gemm_nt(std::span<const Real> g, std::span<const Real> b, std::span<Real> c,
             std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* grow = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real* brow = b.data() + p * n;
      Real acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k×n] += a[m×k]ᵀ · g[m×n]
void gemm_tn(std::span<const Real> a, std::span<const Real> g, std::span<Real> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* grow = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = a[i * k + p];
      if (av == Real(0)) continue;
      Real* crow = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  gemm_nn(a.data(), b.data(), out.data(), m, k, n);
  if (Tape* tape = recording_tape({&a, &b})) {
    out.set_requires_grad(true);
    tape->push({a, b}, out, [a, b, out, m, k, n]() mutable {
      const auto g = std::as_const(out).grad();
      if (a.requires_grad()) gemm_nt(g, std::as_const(b).data(), a.grad(), m, n, k);
      if (b.requires_grad()) gemm_tn(std::as_const(a).data(), g, b.grad(), m, k, n);
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_defined(x, "transpose");
  require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m});
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = xv[i * n + j];
  if (Tape* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    tape->push({x}, out, [x, out, m, n]() mutable {
      const auto g = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  require_rank(x, 2, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) +
                     " does not match row length of " + shape_string(x.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.data();
  const auto bv = bias.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] + bv[j];
  if (Tape* tape = recording_tape({&x, &bias})) {
    out.set_requires_grad(true);
    tape->push({x, bias}, out, [x, bias, out, m, n]() mutable {
      const auto g = std::as_const(out).grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- softmax family

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined(x, "softmax");
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      Real mx = xv[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      Acc total = 0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const Real e = std::exp(xv[base + j * s.inner] - mx);
        ov[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j)
        ov[base + j * s.inner] = static_cast<Real>(ov[base + j * s.inner] / total);
    }
  }
  if (Tape* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    tape->push({x}, out, [x, out, s]() mutable {
      const auto g = std::as_const(out).grad();
      const auto y = std::as_const(out).data();
      auto gx = x.grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.n * s.inner + in;
          Acc dot = 0;
          for (std::size_t j = 0; j < s.n; ++j) {
            const std::size_t i = base + j * s.inner;
            dot += g[i] * y[i];
          }
          for (std::size_t j = 0; j < s.n; ++j) {
            const std::size_t i = base + j * s.inner;
            gx[i] += y[i] * (g[i] - static_cast<Real>(dot));
          }
        }
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  require_defined(x, "log_softmax");
  const AxisSplit s = split_axis(x.shape(), axis, "log_softmax");
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      Real mx = xv[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      Acc total = 0;
      for (std::size_t j = 0; j < s.n; ++j) total += std::exp(Acc(xv[base + j * s.inner] - mx));
      const Real lse = mx + static_cast<Real>(std::log(total));
      for (std::size_t j = 0; j < s.n; ++j)
        ov[base + j * s.inner] = xv[base + j * s.inner] - lse;
    }
  }
  if (Tape* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    tape->push({x}, out, [x, out, s]() mutable {
      const auto g = std::as_const(out).grad();
      const auto y = std::as_const(out).data();
      auto gx = x.grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.n * s.inner + in;
          Acc gsum = 0;
          for (std::size_t j = 0; j < s.n; ++j) gsum += g[base + j * s.inner];
          for (std::size_t j = 0; j < s.n; ++j) {
            const std::size_t i = base + j * s.inner;
            gx[i] += g[i] - std::exp(y[i]) * static_cast<Real>(gsum);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Real eps) {
  require_defined(x, "layer_norm");
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gain.numel() != n || bias.numel() != n) {
    throw ShapeError("layer_norm: gain/bias " + shape_string(gain.shape()) +
                     "/" + shape_string(bias.shape()) + " vs input " +
                     shape_string(x.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  std::vector<Real> xhat(m * n);
  std::vector<Real> rstd(m);
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    Acc mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[i * n + j];
    mu /= static_cast<Acc>(n);
    Acc var = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const Acc d = xv[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<Acc>(n);
    rstd[i] = static_cast<Real>(1.0 / std::sqrt(var + eps));
    for (std::size_t j = 0; j < n; ++j) {
      const Real h = static_cast<Real>((xv[i * n + j] - mu)) * rstd[i];
      xhat[i * n + j] = h;
      ov[i * n + j] = h * gv[j] + bv[j];
    }
  }
  if (Tape* tape = recording_tape({&x, &gain, &bias})) {
    out.set_requires_grad(true);
    tape->push({x, gain, bias}, out,
               [x, gain, bias, out, m, n, xhat = std::move(xhat),
                rstd = std::move(rstd)]() mutable {
                 const auto g = std::as_const(out).grad();
                 const auto gv = std::as_const(gain).data();
                 if (gain.requires_grad()) {
                   auto gg = gain.grad();
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j)
                       gg[j] += g[i * n + j] * xhat[i * n + j];
                 }
                 if (bias.requires_grad()) {
                   auto gb = bias.grad();
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                 }
                 if (x.requires_grad()) {
                   auto gx = x.grad();
                   const Acc inv_n = 1.0 / static_cast<Acc>(n);
                   for (std::size_t i = 0; i < m; ++i) {
                     Acc sum_d = 0, sum_dx = 0;
                     for (std::size_t j = 0; j < n; ++j) {
                       const Acc d = Acc(g[i * n + j]) * gv[j];
                       sum_d += d;
                       sum_dx += d * xhat[i * n + j];
                     }
                     for (std::size_t j = 0; j < n; ++j) {
                       const Acc d = Acc(g[i * n + j]) * gv[j];
                       gx[i * n + j] += static_cast<Real>(
                           rstd[i] * (d - inv_n * sum_d -
                                      xhat[i * n + j] * inv_n * sum_dx));
                     }
                   }
                 }
               });
  }
  return out;
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  Acc total = 0;
  for (Real v : x.data()) total += v;
  Tensor out = Tensor::scalar(static_cast<Real>(total));
  if (Tape* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    tape->push({x}, out, [x, out]() mutable {
      const Real g = std::as_const(out).grad()[0];
      for (Real& v : x.grad()) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

// ---------------------------------------------------------------- structural

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) +
                     " as " + shape_string(shape));
  }
  Tensor out = Tensor::from(std::move(shape),
                            std::vector<Real>(x.data().begin(), x.data().end()));
  if (Tape* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    tape->push({x}, out, [x, out]() mutable {
      const auto g = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const Tensor& p : parts) {
    require_defined(p, "concat");
    require_rank(p, 2, "concat");
  }
  const std::size_t other = axis == 0 ? 1 : 0;
  const std::size_t fixed = parts[0].dim(other);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.dim(other) != fixed) {
      throw ShapeError("concat: mismatched " + shape_string(parts[0].shape()) +
                       " and " + shape_string(p.shape()));
    }
    total += p.dim(axis);
  }
  const Shape shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  Tensor out = Tensor::zeros(shape);
  auto ov = out.data();
  const std::size_t out_cols = shape[1];
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const auto pv = p.data();
    const std::size_t pr = p.dim(0), pc = p.dim(1);
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t r = axis == 0 ? i + offset : i;
        const std::size_t c = axis == 0 ? j : j + offset;
        ov[r * out_cols + c] = pv[i * pc + j];
      }
    offset += p.dim(axis);
  }
  Tape* tape = Tape::active();
  bool track = false;
  for (const Tensor& p : parts) track = track || p.requires_grad();
  if (tape != nullptr && track) {
    out.set_requires_grad(true);
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape->push(inputs, out, [inputs, out, axis, out_cols]() mutable {
      const auto g = std::as_const(out).grad();
      std::size_t offset = 0;
      for (Tensor& p : inputs) {
        const std::size_t pr = p.dim(0), pc = p.dim(1);
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < pr; ++i)
            for (std::size_t j = 0; j < pc; ++j) {
              const std::size_t r = axis == 0 ? i + offset : i;
              const std::size_t c = axis == 0 ? j : j + offset;
              gp[i * pc + j] += g[r * out_cols + c];
            }
        }
        offset += p.dim(axis);
      }
    });
  }
  return out;
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end) {
  require_defined(x, "slice");
  require_rank(x, 2, "slice");
  if (axis > 1 || begin > end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") on axis " + std::to_string(axis) +
                     " invalid for " + shape_string(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  const std::size_t om = axis == 0 ? end - begin : m;
  const std::size_t on = axis == 1 ? end - begin : n;
  Tensor out = Tensor::zeros({om, on});
  const auto xv = x.data();
  auto ov = out.data();
  const std::size_t r0 = axis == 0 ? begin : 0;
  const std::size_t c0 = axis == 1 ? begin : 0;
  for (std::size_t i = 0; i < om; ++i)
    for (std::size_t j = 0; j < on; ++j)
      ov[i * on + j] = xv[(i + r0) * n + (j + c0)];
  if (Tape* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    tape->push({x}, out, [x, out, om, on, n, r0, c0]() mutable {
      const auto g = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < om; ++i)
        for (std::size_t j = 0; j < on; ++j)
          gx[(i + r0) * n + (j + c0)] += g[i * on + j];
    });
  }
  return out;
}

Tensor rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_defined(table, "rows");
  require_rank(table, 2, "rows");
  const std::size_t m = table.dim(0), n = table.dim(1);
  for (std::size_t idx : indices) {
    if (idx >= m) {
      throw ShapeError("rows: index " + std::to_string(idx) +
                       " out of range for " + shape_string(table.shape()));
    }
  }
  Tensor out = Tensor::zeros({indices.size(), n});
  const auto tv = table.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(tv.begin() + indices[i] * n, n, ov.begin() + i * n);
  if (Tape* tape = recording_tape({&table})) {
    out.set_requires_grad(true);
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    tape->push({table}, out, [table, out, idx = std::move(idx), n]() mutable {
      const auto g = std::as_const(out).grad();
      auto gt = table.grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) gt[idx[i] * n + j] += g[i * n + j];
    });
  }
  return out;
}

Tensor take(const Tensor& x, std::span<const std::size_t> indices) {
  require_defined(x, "take");
  for (std::size_t idx : indices) {
    if (idx >= x.numel()) {
      throw ShapeError("take: index " + std::to_string(idx) +
                       " out of range for " + shape_string(x.shape()));
    }
  }
  Tensor out = Tensor::zeros({indices.size()});
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < indices.size(); ++i) ov[i] = xv[indices[i]];
  if (Tape* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    tape->push({x}, out, [x, out, idx = std::move(idx)]() mutable {
      const auto g = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
    });
  }
  return out;
}

namespace {

struct LerpTap {
  std::size_t i0, i1;
  Real w0, w1;
};

std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double lambda = src - static_cast<double>(i0);
    taps[o] = {i0, i1, static_cast<Real>(1.0 - lambda), static_cast<Real>(lambda)};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t h, std::size_t w,
                         std::size_t out_h, std::size_t out_w) {
  require_defined(x, "upsample_bilinear");
  require_rank(x, 2, "upsample_bilinear");
  if (x.dim(1) != h * w || h == 0 || w == 0 || out_h == 0 || out_w == 0) {
    throw ShapeError("upsample_bilinear: input " + shape_string(x.shape()) +
                     " is not a stack of " + std::to_string(h) + "x" +
                     std::to_string(w) + " grids");
  }
  const std::size_t n = x.dim(0);
  const auto ty = lerp_taps(h, out_h);
  const auto tx = lerp_taps(w, out_w);
  Tensor out = Tensor::zeros({n, out_h * out_w});
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < n; ++r) {
    const Real* src = xv.data() + r * h * w;
    Real* dst = ov.data() + r * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const LerpTap& a = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const LerpTap& b = tx[ox];
        dst[oy * out_w + ox] =
            a.w0 * (b.w0 * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1]) +
            a.w1 * (b.w0 * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1]);
      }
    }
  }
  if (Tape* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    tape->push({x}, out, [x, out, n, h, w, out_h, out_w, ty, tx]() mutable {
      const auto g = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < n; ++r) {
        Real* dsrc = gx.data() + r * h * w;
        const Real* gout = g.data() + r * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const LerpTap& a = ty[oy];
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const LerpTap& b = tx[ox];
            const Real gv = gout[oy * out_w + ox];
            dsrc[a.i0 * w + b.i0] += gv * a.w0 * b.w0;
            dsrc[a.i0 * w + b.i1] += gv * a.w0 * b.w1;
            dsrc[a.i1 * w + b.i0] += gv * a.w1 * b.w0;
            dsrc[a.i1 * w + b.i1] += gv * a.w1 * b.w1;
          }
        }
      }
    });
  }
  return out;
}

Tensor bce_with_logits(const Tensor& logits, std::span<const Real> targets) {
  require_defined(logits, "bce_with_logits");
  if (logits.numel() != targets.size() || targets.empty()) {
    throw ShapeError("bce_with_logits: " + std::to_string(logits.numel()) +
                     " logits vs " + std::to_string(targets.size()) + " targets");
  }
  const auto xv = logits.data();
  Acc total = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const Acc x = xv[i];
    total += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const Acc n = static_cast<Acc>(xv.size());
  Tensor out = Tensor::scalar(static_cast<Real>(total / n));
  if (Tape* tape = recording_tape({&logits})) {
    out.set_requires_grad(true);
    std::vector<Real> t(targets.begin(), targets.end());
    tape->push({logits}, out, [logits, out, t = std::move(t), n]() mutable {
      const Real g = std::as_const(out).grad()[0];
      const auto xv = std::as_const(logits).data();
      auto gx = logits.grad();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const Acc x = xv[i];
        const Acc p = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                             : std::exp(x) / (1.0 + std::exp(x));
        gx[i] += static_cast<Real>(g * (p - t[i]) / n);
      }
    });
  }
  return out;
}

VPS_END_NAMESPACE
