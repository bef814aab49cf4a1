#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vps/base.hpp"

VPS_BEGIN_NAMESPACE

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until first needed
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major tensor. Copies share storage (handle semantics), the same
// way activations are passed around in most deep-learning code; use clone()
// for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values,
                     bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return data_->shape.at(axis); }
  std::size_t numel() const { return data_->value.size(); }

  std::span<Real> data() { return data_->value; }
  std::span<const Real> data() const { return data_->value; }
  Real item() const;
  Real at(std::size_t flat) const { return data_->value.at(flat); }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool on);

  // Gradient buffer, allocated (zero-filled) on first access. Like the
  // storage itself it is shared by all handles, hence writable through const.
  std::span<Real> grad() const;
  bool has_grad() const { return !data_->grad.empty(); }
  void zero_grad();

  Tensor clone() const;
  // Same values, no gradient tracking, independent storage.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  std::shared_ptr<detail::TensorData> data_;
};

// Ordered record of primitive operations. While a Recording guard is alive,
// every primitive with at least one requires_grad input appends a node;
// backward() replays the nodes in reverse order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Recording {
   public:
    explicit Recording(Tape& tape);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* previous_;
  };

  [[nodiscard]] Recording record() { return Recording(*this); }

  // Suspends recording on this thread for the guard's lifetime.
  class Pause {
   public:
    Pause();
    ~Pause();
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    Tape* previous_;
  };

  // Zeroes the gradient of every tensor touched by the tape, seeds d(loss)=1
  // and accumulates gradients into all requires_grad tensors.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  static Tape* active();

  // Used by primitives.
  void push(std::vector<Tensor> inputs, Tensor output,
            std::function<void()> backward_fn);

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
};

// Elementwise arithmetic. Shapes must match exactly, except that either
// operand may be a single-element tensor.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real factor);
Tensor add_scalar(const Tensor& x, Real value);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);

// 2-D linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
// x[m×n] + bias[n] added to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
// Normalizes each row of x[m×n], then applies gain[n] and bias[n].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Real eps = Real(1e-5));

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// Concatenation and slicing of 2-D tensors along axis 0 (rows) or 1 (cols).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);
// Row gather (embedding lookup) from a 2-D table.
Tensor rows(const Tensor& table, std::span<const std::size_t> indices);
// Flat element gather; result has shape {indices.size()}.
Tensor take(const Tensor& x, std::span<const std::size_t> indices);

// Each row of x[n × (h·w)] is an h×w grid, resized to out_h×out_w with
// half-pixel-centre bilinear sampling (edge clamped).
Tensor upsample_bilinear(const Tensor& x, std::size_t h, std::size_t w,
                         std::size_t out_h, std::size_t out_w);

// Mean binary cross-entropy between sigmoid(logits) and constant 0/1 targets,
// computed in the numerically stable log-sum-exp form.
Tensor bce_with_logits(const Tensor& logits, std::span<const Real> targets);

VPS_END_NAMESPACE
