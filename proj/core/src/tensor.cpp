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

#include "avfm/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "avfm/errors.hpp"

namespace avfm {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;
using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

thread_local GradTape* g_active_tape = nullptr;

[[noreturn]] void dim_error(const std::string& op, const Shape& a,
                            const Shape& b) {
  throw DimensionError(op + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

void require_rank(const std::string& op, const Tensor& t, std::size_t r) {
  if (!t.defined()) throw ContractError(op + ": undefined tensor");
  if (t.rank() != r) {
    throw DimensionError(op + ": expected rank " + std::to_string(r) +
                         ", got shape " + shape_str(t.shape()));
  }
}

// Returns the active tape when the result of an operation over `inputs`
// needs a backward rule.
GradTape* tracking(std::initializer_list<const Tensor*> inputs) {
  GradTape* tape = g_active_tape;
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

GradTape* tracking(const std::vector<Tensor>& inputs) {
  GradTape* tape = g_active_tape;
  if (tape == nullptr) return nullptr;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) return tape;
  }
  return nullptr;
}

void attach(Tensor& out, GradTape* tape, std::function<void()> rule) {
  out.node()->requires_grad = true;
  out.node()->backward = std::move(rule);
  tape->record(out.node_ptr());
}

bool wants(const NodePtr& n) { return n && n->requires_grad; }

void axpy(std::vector<double>& dst, std::span<const double> src,
          double s = 1.0) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += s * src[i];
}

}  // namespace

std::string shape_str(const Shape& shape) {
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

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<TensorNode>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data), true);
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item: tensor of shape " + shape_str(shape()) +
                        " is not a scalar");
  }
  return node_->data[0];
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::clone() const {
  return Tensor(node_->shape, node_->data, node_->requires_grad);
}

Tensor Tensor::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

// ---- GradTape ---------------------------------------------------------------

GradTape::Recording::Recording(GradTape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

GradTape::Recording::~Recording() { g_active_tape = previous_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(std::shared_ptr<detail::TensorNode> node) {
  nodes_.push_back(std::move(node));
}

bool GradTape::contains(const Tensor& t) const {
  return std::any_of(nodes_.begin(), nodes_.end(),
                     [&](const auto& n) { return n.get() == t.node(); });
}

void backward(GradTape& tape, const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape())
                                        : std::string("undefined")));
  }
  if (!tape.contains(loss)) {
    throw ContractError("backward: loss was not recorded on this tape");
  }
  for (auto& n : tape.nodes_) n->grad.clear();
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    TensorNode& n = **it;
    if (!n.grad.empty() && n.backward) n.backward();
  }
}

Tensor record_op(Tensor out, const std::vector<Tensor>& inputs,
                 BackwardRule rule) {
  if (auto* tape = tracking(inputs)) {
    auto* on = out.node();
    attach(out, tape, [on, rule = std::move(rule)] { rule(on->grad); });
  }
  return out;
}

void round_to_float32(std::span<double> values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

// ---- gemm -------------------------------------------------------------------

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
          bool trans_a, const double* b, bool trans_b, double* c,
          bool accumulate) {
  using Eigen::Index;
  const auto M = static_cast<Index>(m), N = static_cast<Index>(n),
             K = static_cast<Index>(k);
  Eigen::Map<RowMat> C(c, M, N);
  if (!accumulate) C.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  Eigen::Map<const RowMat> A(a, trans_a ? K : M, trans_a ? M : K);
  Eigen::Map<const RowMat> B(b, trans_b ? N : K, trans_b ? K : N);
  if (!trans_a && !trans_b) {
    C.noalias() += A * B;
  } else if (!trans_a && trans_b) {
    C.noalias() += A * B.transpose();
  } else if (trans_a && !trans_b) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() += A.transpose() * B.transpose();
  }
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) dim_error("matmul", a.shape(), b.shape());
  std::vector<double> out(m * n);
  gemm(m, n, k, a.data().data(), false, b.data().data(), false, out.data(),
       false);
  Tensor r({m, n}, std::move(out));
  if (auto* tape = tracking({&a, &b})) {
    auto an = a.node_ptr(), bn = b.node_ptr();
    auto* on = r.node();
    attach(r, tape, [an, bn, on, m, n, k] {
      if (wants(an))
        gemm(m, k, n, on->grad.data(), false, bn->data.data(), true,
             an->ensure_grad().data(), true);
      if (wants(bn))
        gemm(k, n, m, an->data.data(), true, on->grad.data(), false,
             bn->ensure_grad().data(), true);
    });
  }
  return r;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank("matmul_nt", a, 2);
  require_rank("matmul_nt", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) dim_error("matmul_nt", a.shape(), b.shape());
  std::vector<double> out(m * n);
  gemm(m, n, k, a.data().data(), false, b.data().data(), true, out.data(),
       false);
  Tensor r({m, n}, std::move(out));
  if (auto* tape = tracking({&a, &b})) {
    auto an = a.node_ptr(), bn = b.node_ptr();
    auto* on = r.node();
    attach(r, tape, [an, bn, on, m, n, k] {
      // out = a bᵀ: da = g b, db = gᵀ a
      if (wants(an))
        gemm(m, k, n, on->grad.data(), false, bn->data.data(), false,
             an->ensure_grad().data(), true);
      if (wants(bn))
        gemm(n, k, m, on->grad.data(), true, an->data.data(), false,
             bn->ensure_grad().data(), true);
    });
  }
  return r;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  const std::size_t m = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) dim_error("linear", x.shape(), weight.shape());
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim))
    dim_error("linear(bias)", weight.shape(), bias.shape());
  std::vector<double> out(m * out_dim);
  gemm(m, out_dim, in, x.data().data(), false, weight.data().data(), true,
       out.data(), false);
  if (has_bias) {
    const auto bv = bias.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < out_dim; ++j) out[i * out_dim + j] += bv[j];
  }
  Tensor r({m, out_dim}, std::move(out));
  if (auto* tape = tracking({&x, &weight, &bias})) {
    auto xn = x.node_ptr(), wn = weight.node_ptr(), bn = bias.node_ptr();
    auto* on = r.node();
    attach(r, tape, [xn, wn, bn, on, m, in, out_dim] {
      const auto& g = on->grad;
      if (wants(xn))
        gemm(m, in, out_dim, g.data(), false, wn->data.data(), false,
             xn->ensure_grad().data(), true);
      if (wants(wn))
        gemm(out_dim, in, m, g.data(), true, xn->data.data(), false,
             wn->ensure_grad().data(), true);
      if (wants(bn)) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[i * out_dim + j];
      }
    });
  }
  return r;
}

// ---- elementwise ------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_same_shape(const std::string& op, const Tensor& a,
                         const Tensor& b, Fwd fwd, Bwd bwd) {
  if (a.shape() != b.shape()) dim_error(op, a.shape(), b.shape());
  const auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  Tensor r(a.shape(), std::move(out));
  if (auto* tape = tracking({&a, &b})) {
    auto an = a.node_ptr(), bn = b.node_ptr();
    auto* on = r.node();
    attach(r, tape, [an, bn, on, bwd] {
      const auto& g = on->grad;
      const bool da = wants(an), db = wants(bn);
      double* ga = da ? an->ensure_grad().data() : nullptr;
      double* gb = db ? bn->ensure_grad().data() : nullptr;
      for (std::size_t i = 0; i < g.size(); ++i) {
        auto [pa, pb] = bwd(an->data[i], bn->data[i]);
        if (da) ga[i] += g[i] * pa;
        if (db) gb[i] += g[i] * pb;
      }
    });
  }
  return r;
}

// y = f(x) with dy/dx expressed through (x, y).
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  Tensor r(x.shape(), std::move(out));
  if (auto* tape = tracking({&x})) {
    auto xn = x.node_ptr();
    auto* on = r.node();
    attach(r, tape, [xn, on, deriv] {
      auto& gx = xn->ensure_grad();
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] * deriv(xn->data[i], on->data[i]);
    });
  }
  return r;
}

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair{y, x}; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_row(const Tensor& x, const Tensor& v) {
  require_rank("add_row", x, 2);
  require_rank("add_row", v, 1);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (v.dim(0) != n) dim_error("add_row", x.shape(), v.shape());
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto vv = v.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += vv[j];
  Tensor r(x.shape(), std::move(out));
  if (auto* tape = tracking({&x, &v})) {
    auto xn = x.node_ptr(), vn = v.node_ptr();
    auto* on = r.node();
    attach(r, tape, [xn, vn, on, m, n] {
      const auto& g = on->grad;
      if (wants(xn)) axpy(xn->ensure_grad(), g);
      if (wants(vn)) {
        auto& gv = vn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
      }
    });
  }
  return r;
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) +
               v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid,
               [](double, double y) { return y * (1.0 - y); });
}

// ---- normalisation ----------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  require_rank("softmax_rows", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto xv = x.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double* o = out.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(row[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= s;
  }
  Tensor r(x.shape(), std::move(out));
  if (auto* tape = tracking({&x})) {
    auto xn = x.node_ptr();
    auto* on = r.node();
    attach(r, tape, [xn, on, m, n] {
      auto& gx = xn->ensure_grad();
      const auto& g = on->grad;
      const auto& y = on->data;
      for (std::size_t i = 0; i < m; ++i) {
        double dotgy = 0.0;
        for (std::size_t j = 0; j < n; ++j) dotgy += g[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dotgy);
      }
    });
  }
  return r;
}

namespace {

// Shared normalise-then-affine kernel. Element e of group gi belongs to
// channel channel_of(e); statistics are taken per group.
struct NormPlan {
  std::size_t groups;
  std::size_t group_size;
  // affine index for flat element i
  std::function<std::size_t(std::size_t)> affine_index;
};

Tensor normalise(const std::string& op, const Tensor& x, const Tensor& gamma,
                 const Tensor& beta, double eps, NormPlan plan) {
  const auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  const std::size_t total = xv.size();
  std::vector<double> xhat(total), out(total), rstd(plan.groups);
  for (std::size_t gi = 0; gi < plan.groups; ++gi) {
    const std::size_t base = gi * plan.group_size;
    double mu = 0.0;
    for (std::size_t e = 0; e < plan.group_size; ++e) mu += xv[base + e];
    mu /= static_cast<double>(plan.group_size);
    double var = 0.0;
    for (std::size_t e = 0; e < plan.group_size; ++e) {
      const double d = xv[base + e] - mu;
      var += d * d;
    }
    var /= static_cast<double>(plan.group_size);
    rstd[gi] = 1.0 / std::sqrt(var + eps);
    for (std::size_t e = 0; e < plan.group_size; ++e) {
      const std::size_t i = base + e;
      xhat[i] = (xv[i] - mu) * rstd[gi];
      const std::size_t a = plan.affine_index(i);
      out[i] = gv[a] * xhat[i] + bv[a];
    }
  }
  (void)op;
  Tensor r(x.shape(), std::move(out));
  if (auto* tape = tracking({&x, &gamma, &beta})) {
    auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();
    auto* on = r.node();
    attach(r, tape,
           [xn, gn, bn, on, plan, xhat = std::move(xhat),
            rstd = std::move(rstd)] {
             const auto& g = on->grad;
             double* ggam = wants(gn) ? gn->ensure_grad().data() : nullptr;
             double* gbet = wants(bn) ? bn->ensure_grad().data() : nullptr;
             double* gx = wants(xn) ? xn->ensure_grad().data() : nullptr;
             const double inv_n = 1.0 / static_cast<double>(plan.group_size);
             for (std::size_t gi = 0; gi < plan.groups; ++gi) {
               const std::size_t base = gi * plan.group_size;
               double sum_d = 0.0, sum_dx = 0.0;
               for (std::size_t e = 0; e < plan.group_size; ++e) {
                 const std::size_t i = base + e;
                 const std::size_t a = plan.affine_index(i);
                 if (ggam) ggam[a] += g[i] * xhat[i];
                 if (gbet) gbet[a] += g[i];
                 const double d = g[i] * gn->data[a];
                 sum_d += d;
                 sum_dx += d * xhat[i];
               }
               if (!gx) continue;
               for (std::size_t e = 0; e < plan.group_size; ++e) {
                 const std::size_t i = base + e;
                 const double d = g[i] * gn->data[plan.affine_index(i)];
                 gx[i] += rstd[gi] *
                          (d - inv_n * sum_d - xhat[i] * inv_n * sum_dx);
               }
             }
           });
  }
  return r;
}

}  // namespace

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps) {
  if (!x.defined() || x.rank() == 0) throw ContractError("layernorm: no axes");
  const std::size_t d = x.shape().back();
  if (d == 0) throw DimensionError("layernorm: empty last axis");
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    dim_error("layernorm", x.shape(), gamma.shape());
  if (eps <= 0) throw ConfigurationError("layernorm: eps must be positive");
  NormPlan plan{x.size() / d, d, [d](std::size_t i) { return i % d; }};
  return normalise("layernorm", x, gamma, beta, eps, std::move(plan));
}

Tensor groupnorm(const Tensor& x, std::size_t groups, const Tensor& gamma,
                 const Tensor& beta, double eps) {
  require_rank("groupnorm", x, 3);
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (groups == 0 || c % groups != 0) {
    throw ConfigurationError("groupnorm: " + std::to_string(c) +
                             " channels not divisible into " +
                             std::to_string(groups) + " groups");
  }
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    dim_error("groupnorm", x.shape(), gamma.shape());
  NormPlan plan{groups, (c / groups) * hw,
                [hw](std::size_t i) { return i / hw; }};
  return normalise("groupnorm", x, gamma, beta, eps, std::move(plan));
}

// ---- convolution and resampling ---------------------------------------------

namespace {

struct ConvGeom {
  std::size_t c, h, w, kh, kw, pad, oh, ow;
};

// cols [(c·kh·kw) × (oh·ow)]
void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((ci * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix =
                static_cast<long>(ox + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 &&
                                iy < static_cast<long>(g.h) &&
                                ix < static_cast<long>(g.w);
            row[oy * g.ow + ox] =
                inside ? x[(ci * g.h + static_cast<std::size_t>(iy)) * g.w +
                           static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
}

void col2im(const double* cols, const ConvGeom& g, double* dx) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + ((ci * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix =
                static_cast<long>(ox + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dx[(ci * g.h + static_cast<std::size_t>(iy)) * g.w +
               static_cast<std::size_t>(ix)] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
              std::size_t padding) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d(kernels)", kernels, 4);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t co = kernels.dim(0), kh = kernels.dim(2),
                    kw = kernels.dim(3);
  if (kernels.dim(1) != c) dim_error("conv2d", x.shape(), kernels.shape());
  if (kh > h + 2 * padding || kw > w + 2 * padding || kh == 0 || kw == 0) {
    throw DimensionError("conv2d: kernel " + shape_str(kernels.shape()) +
                         " larger than padded input " + shape_str(x.shape()) +
                         " with padding " + std::to_string(padding));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{co})
    dim_error("conv2d(bias)", kernels.shape(), bias.shape());
  ConvGeom g{c, h, w, kh, kw, padding, h + 2 * padding - kh + 1,
             w + 2 * padding - kw + 1};
  const std::size_t plane = g.oh * g.ow, patch = c * kh * kw;
  std::vector<double> cols(patch * plane);
  im2col(x.data().data(), g, cols.data());
  std::vector<double> out(co * plane);
  gemm(co, plane, patch, kernels.data().data(), false, cols.data(), false,
       out.data(), false);
  if (has_bias) {
    const auto bv = bias.data();
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t p = 0; p < plane; ++p) out[o * plane + p] += bv[o];
  }
  Tensor r({co, g.oh, g.ow}, std::move(out));
  if (auto* tape = tracking({&x, &kernels, &bias})) {
    auto xn = x.node_ptr(), kn = kernels.node_ptr(), bn = bias.node_ptr();
    auto* on = r.node();
    attach(r, tape,
           [xn, kn, bn, on, g, co, plane, patch, cols = std::move(cols)] {
             const auto& gr = on->grad;
             if (wants(kn))
               gemm(co, patch, plane, gr.data(), false, cols.data(), true,
                    kn->ensure_grad().data(), true);
             if (wants(bn)) {
               auto& gb = bn->ensure_grad();
               for (std::size_t o = 0; o < co; ++o)
                 for (std::size_t p = 0; p < plane; ++p)
                   gb[o] += gr[o * plane + p];
             }
             if (wants(xn)) {
               std::vector<double> dcols(patch * plane);
               gemm(patch, plane, co, kn->data.data(), true, gr.data(), false,
                    dcols.data(), false);
               col2im(dcols.data(), g, xn->ensure_grad().data());
             }
           });
  }
  return r;
}

namespace {

struct AxisWeights {
  std::vector<std::size_t> i0, i1;
  std::vector<double> l1;  // weight of i1
};

AxisWeights axis_weights(std::size_t in, std::size_t out) {
  AxisWeights a;
  a.i0.resize(out);
  a.i1.resize(out);
  a.l1.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    a.i0[d] = i0;
    a.i1[d] = std::min(i0 + 1, in - 1);
    a.l1[d] = src - static_cast<double>(i0);
  }
  return a;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank("bilinear_resize", x, 3);
  if (out_h == 0 || out_w == 0)
    throw ContractError("bilinear_resize: output extents must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == out_h && w == out_w) {
    Tensor r(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
    if (auto* tape = tracking({&x})) {
      auto xn = x.node_ptr();
      auto* on = r.node();
      attach(r, tape, [xn, on] { axpy(xn->ensure_grad(), on->grad); });
    }
    return r;
  }
  const AxisWeights ay = axis_weights(h, out_h), ax = axis_weights(w, out_w);
  const auto xv = x.data();
  std::vector<double> out(c * out_h * out_w);
  for (std::size_t ci = 0; ci < c; ++ci) {
    const double* src = xv.data() + ci * h * w;
    double* dst = out.data() + ci * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double wy1 = ay.l1[oy], wy0 = 1.0 - wy1;
      const double* r0 = src + ay.i0[oy] * w;
      const double* r1 = src + ay.i1[oy] * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double wx1 = ax.l1[ox], wx0 = 1.0 - wx1;
        dst[oy * out_w + ox] =
            wy0 * (wx0 * r0[ax.i0[ox]] + wx1 * r0[ax.i1[ox]]) +
            wy1 * (wx0 * r1[ax.i0[ox]] + wx1 * r1[ax.i1[ox]]);
      }
    }
  }
  Tensor r({c, out_h, out_w}, std::move(out));
  if (auto* tape = tracking({&x})) {
    auto xn = x.node_ptr();
    auto* on = r.node();
    attach(r, tape, [xn, on, ay, ax, c, h, w, out_h, out_w] {
      auto& gx = xn->ensure_grad();
      const auto& g = on->grad;
      for (std::size_t ci = 0; ci < c; ++ci) {
        double* dsrc = gx.data() + ci * h * w;
        const double* gd = g.data() + ci * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const double wy1 = ay.l1[oy], wy0 = 1.0 - wy1;
          double* r0 = dsrc + ay.i0[oy] * w;
          double* r1 = dsrc + ay.i1[oy] * w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const double gv = gd[oy * out_w + ox];
            const double wx1 = ax.l1[ox], wx0 = 1.0 - wx1;
            r0[ax.i0[ox]] += gv * wy0 * wx0;
            r0[ax.i1[ox]] += gv * wy0 * wx1;
            r1[ax.i0[ox]] += gv * wy1 * wx0;
            r1[ax.i1[ox]] += gv * wy1 * wx1;
          }
        }
      }
    });
  }
  return r;
}

// ---- structural ---------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) dim_error("reshape", x.shape(), shape);
  Tensor r(std::move(shape),
           std::vector<double>(x.data().begin(), x.data().end()));
  if (auto* tape = tracking({&x})) {
    auto xn = x.node_ptr();
    auto* on = r.node();
    attach(r, tape, [xn, on] { axpy(xn->ensure_grad(), on->grad); });
  }
  return r;
}

Tensor transpose(const Tensor& x) {
  require_rank("transpose", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto xv = x.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  Tensor r({n, m}, std::move(out));
  if (auto* tape = tracking({&x})) {
    auto xn = x.node_ptr();
    auto* on = r.node();
    attach(r, tape, [xn, on, m, n] {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += on->grad[j * m + i];
    });
  }
  return r;
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank("slice_rows", x, 2);
  const std::size_t n = x.dim(1);
  if (start + count > x.dim(0))
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " +
                         shape_str(x.shape()));
  const auto xv = x.data();
  Tensor r({count, n}, std::vector<double>(xv.begin() + start * n,
                                           xv.begin() + (start + count) * n));
  if (auto* tape = tracking({&x})) {
    auto xn = x.node_ptr();
    auto* on = r.node();
    attach(r, tape, [xn, on, start, n] {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        gx[start * n + i] += on->grad[i];
    });
  }
  return r;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank("slice_cols", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (start + count > n)
    throw DimensionError("slice_cols: columns [" + std::to_string(start) +
                         ", " + std::to_string(start + count) + ") out of " +
                         shape_str(x.shape()));
  const auto xv = x.data();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xv.begin() + i * n + start, count, out.begin() + i * count);
  Tensor r({m, count}, std::move(out));
  if (auto* tape = tracking({&x})) {
    auto xn = x.node_ptr();
    auto* on = r.node();
    attach(r, tape, [xn, on, m, n, start, count] {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j)
          gx[i * n + start + j] += on->grad[i * count + j];
    });
  }
  return r;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t n = parts.front().dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank("concat_rows", p, 2);
    if (p.dim(1) != n) dim_error("concat_rows", parts.front().shape(), p.shape());
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor r({rows, n}, std::move(out));
  if (auto* tape = tracking(parts)) {
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node_ptr());
    auto* on = r.node();
    attach(r, tape, [nodes, on] {
      std::size_t offset = 0;
      for (const auto& pn : nodes) {
        const std::size_t len = pn->data.size();
        if (wants(pn)) {
          auto& gp = pn->ensure_grad();
          for (std::size_t i = 0; i < len; ++i) gp[i] += on->grad[offset + i];
        }
        offset += len;
      }
    });
  }
  return r;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts.front().dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank("concat_cols", p, 2);
    if (p.dim(0) != m) dim_error("concat_cols", parts.front().shape(), p.shape());
    cols += p.dim(1);
  }
  std::vector<double> out(m * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    const auto pv = p.data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.begin() + i * pc, pc, out.begin() + i * cols + offset);
    offset += pc;
  }
  Tensor r({m, cols}, std::move(out));
  if (auto* tape = tracking(parts)) {
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node_ptr());
    auto* on = r.node();
    attach(r, tape, [nodes, on, m, cols] {
      std::size_t off = 0;
      for (const auto& pn : nodes) {
        const std::size_t pc = pn->shape[1];
        if (wants(pn)) {
          auto& gp = pn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pc; ++j)
              gp[i * pc + j] += on->grad[i * cols + off + j];
        }
        off += pc;
      }
    });
  }
  return r;
}

// ---- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  double s = 0.0;
  for (double v : xv) s += v;
  Tensor r = Tensor::scalar(s);
  if (auto* tape = tracking({&x})) {
    auto xn = x.node_ptr();
    auto* on = r.node();
    attach(r, tape, [xn, on] {
      auto& gx = xn->ensure_grad();
      for (double& g : gx) g += on->grad[0];
    });
  }
  return r;
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor half_squared_norm(const Tensor& x) {
  const auto xv = x.data();
  double s = 0.0;
  for (double v : xv) s += v * v;
  Tensor r = Tensor::scalar(0.5 * s);
  if (auto* tape = tracking({&x})) {
    auto xn = x.node_ptr();
    auto* on = r.node();
    attach(r, tape, [xn, on] { axpy(xn->ensure_grad(), xn->data, on->grad[0]); });
  }
  return r;
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) dim_error("dot", a.shape(), b.shape());
  const auto av = a.data(), bv = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  Tensor r = Tensor::scalar(s);
  if (auto* tape = tracking({&a, &b})) {
    auto an = a.node_ptr(), bn = b.node_ptr();
    auto* on = r.node();
    attach(r, tape, [an, bn, on] {
      const double g = on->grad[0];
      if (wants(an)) axpy(an->ensure_grad(), bn->data, g);
      if (wants(bn)) axpy(bn->ensure_grad(), an->data, g);
    });
  }
  return r;
}

}  // namespace avfm
