// Copyright 2026 The avfm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace avfm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  // Set only on nodes recorded by a tape. Reads this node's grad and
  // accumulates into the inputs it captured.
  std::function<void()> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array of doubles. Copies share storage; operations never
/// mutate their inputs, they produce new tensors.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Leaf that participates in gradient computation.
  static Tensor parameter(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// In-place access for optimisers and initialisers. Must not be used on a
  /// tensor whose value was already consumed by a recorded operation.
  std::span<double> mutable_data() { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Zero-filled view when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  void zero_grad() { node_->grad.clear(); }
  /// Gradient accumulator, allocated on first use. For custom backward rules.
  std::span<double> grad_buffer() const { return node_->ensure_grad(); }

  /// Same values, fresh storage, no gradient history.
  Tensor clone() const;
  /// Same storage, not tracked by any tape.
  Tensor detach() const;

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of differentiable operations. While a Recording guard is
/// alive on a thread, every operation on that thread whose inputs require
/// gradients appends its output here.
class GradTape {
 public:
  class Recording {
   public:
    explicit Recording(GradTape& tape);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    GradTape* previous_;
  };

  std::size_t size() const { return nodes_.size(); }
  bool contains(const Tensor& t) const;
  void clear() { nodes_.clear(); }

  static GradTape* active();
  void record(std::shared_ptr<detail::TensorNode> node);

 private:
  friend void backward(GradTape& tape, const Tensor& loss);
  std::vector<std::shared_ptr<detail::TensorNode>> nodes_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are reset at the start of each sweep.
void backward(GradTape& tape, const Tensor& loss);

/// Records `out` as a function of `inputs` with a caller-supplied backward
/// rule receiving d(loss)/d(out). No-op when nothing needs a gradient.
using BackwardRule = std::function<void(std::span<const double> out_grad)>;
Tensor record_op(Tensor out, const std::vector<Tensor>& inputs,
                 BackwardRule rule);

// ---- differentiable operations ------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ for a [m×k], b [n×k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// x · Wᵀ + bias for x [m×in], W [out×in], bias [out] (bias may be undefined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// x [m×n] + v [n] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& v);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
/// Normalises over the last axis.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
              std::size_t padding);
Tensor groupnorm(const Tensor& x, std::size_t groups, const Tensor& gamma,
                 const Tensor& beta, double eps = 1e-5);
/// Half-pixel-centre bilinear interpolation of a [C×H×W] map.
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// 0.5·‖x‖².
Tensor half_squared_norm(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

// ---- raw kernels shared with other modules --------------------------------

/// Rounds every value to the nearest binary32. Parameters are kept
/// binary32-representable so checkpoints (stored as f32) round-trip exactly.
void round_to_float32(std::span<double> values);

/// C[m×n] (+)= op(A) · op(B), row-major, op = transpose when the flag is set.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
          bool trans_a, const double* b, bool trans_b, double* c,
          bool accumulate);

}  // namespace avfm
