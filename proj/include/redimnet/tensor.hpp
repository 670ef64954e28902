// Copyright (c) 2026 The redimnet-cpp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "redimnet/common.hpp"
#include "redimnet/rng.hpp"

namespace redimnet {

// ---------------------------------------------------------------------------
// Autograd mode
// ---------------------------------------------------------------------------

inline bool& grad_mode() {
  static thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---------------------------------------------------------------------------
// Instrumented multiply-accumulate counter. Kernels that perform dense
// multiply-accumulates (conv, linear, matmul) report their loop volume here
// when enabled. Used as the runtime oracle against the analytic model count.
// Not thread safe; enable only around single-threaded forward passes.
// ---------------------------------------------------------------------------

struct MacCounter {
  static bool& enabled() {
    static bool on = false;
    return on;
  }
  static std::uint64_t& count() {
    static std::uint64_t n = 0;
    return n;
  }
  static void reset() { count() = 0; }
  static void add(std::uint64_t n) {
    if (enabled()) count() += n;
  }
};

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first use
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;
  const char* op = "";

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

// Value-semantics handle over a shared node in the autodiff graph.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return filled(shape, T(0), requires_grad);
  }
  static Tensor filled(const Shape& shape, T value, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = shape;
    impl->data.assign(static_cast<std::size_t>(numel_of(shape)), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }
  static Tensor from_data(const Shape& shape, std::vector<T> values,
                          bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != numel_of(shape))
      throw ConfigError("tensor data size " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = shape;
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }
  static Tensor rand_uniform(const Shape& shape, Rng& rng, T lo, T hi,
                             bool requires_grad = false) {
    Tensor t = zeros(shape, requires_grad);
    for (auto& v : t.impl_->data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }
  static Tensor rand_normal(const Shape& shape, Rng& rng, T mean = T(0),
                            T stddev = T(1), bool requires_grad = false) {
    Tensor t = zeros(shape, requires_grad);
    for (auto& v : t.impl_->data)
      v = mean + stddev * static_cast<T>(rng.normal());
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return impl_->numel(); }
  std::int64_t dim(int i) const {
    const int r = static_cast<int>(impl_->shape.size());
    if (i < 0) i += r;
    return impl_->shape[static_cast<std::size_t>(i)];
  }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  std::span<T> data() { return {impl_->data.data(), impl_->data.size()}; }
  std::span<const T> data() const {
    return {impl_->data.data(), impl_->data.size()};
  }
  std::span<T> grad() {
    impl_->ensure_grad();
    return {impl_->grad.data(), impl_->grad.size()};
  }
  bool has_grad() const { return !impl_->grad.empty(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }
  bool is_leaf() const { return impl_->parents.empty(); }

  T item() const {
    if (numel() != 1)
      throw UsageError("item() on tensor with " + std::to_string(numel()) +
                       " elements");
    return impl_->data[0];
  }

  void zero_grad() {
    if (!impl_->grad.empty())
      std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  // Reverse-mode differentiation from a scalar. Accumulates into .grad of
  // every requires_grad node reachable through the recorded graph; each node
  // is visited exactly once.
  void backward() const {
    if (numel() != 1)
      throw UsageError("backward() requires a scalar loss, got shape " +
                       shape_str(shape()));
    std::vector<TensorImpl<T>*> order;
    std::unordered_set<TensorImpl<T>*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
    if (impl_->requires_grad) stack.push_back({impl_.get(), 0});
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next == 0 && seen.count(node)) {
        stack.pop_back();
        continue;
      }
      if (next < node->parents.size()) {
        TensorImpl<T>* p = node->parents[next++].get();
        if (p->requires_grad && !seen.count(p)) stack.push_back({p, 0});
      } else {
        seen.insert(node);
        order.push_back(node);
        stack.pop_back();
      }
    }
    impl_->ensure_grad();
    impl_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorImpl<T>* node = *it;
      if (node->backward_fn) node->backward_fn(*node);
    }
  }

  std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
void assert_finite(const Tensor<T>& t, const std::string& context) {
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!std::isfinite(static_cast<double>(d[i])))
      throw NumericError(context + ": non-finite value at flat index " +
                         std::to_string(i));
}

namespace detail {

// Builds an op node: `out` already holds forward data; wires parents and the
// backward rule when grad mode is on and some input needs gradients.
template <typename T, typename BackwardFn>
Tensor<T> attach(const char* op, Tensor<T> out,
                 std::initializer_list<Tensor<T>> inputs, BackwardFn&& bw) {
  bool needs = false;
  if (grad_mode())
    for (const auto& in : inputs)
      if (in.requires_grad()) needs = true;
  if (needs) {
    auto impl = out.impl();
    impl->requires_grad = true;
    impl->op = op;
    for (const auto& in : inputs) impl->parents.push_back(in.impl());
    impl->backward_fn = std::forward<BackwardFn>(bw);
  }
  return out;
}

template <typename T>
std::span<T> grad_of(const std::shared_ptr<TensorImpl<T>>& impl) {
  impl->ensure_grad();
  return {impl->grad.data(), impl->grad.size()};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with equal-rank broadcasting (extent equal or 1)
// ---------------------------------------------------------------------------

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size())
    throw ConfigError(std::string(op) + ": rank mismatch " + shape_str(a) +
                      " vs " + shape_str(b));
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || a[i] == 1 || b[i] == 1)
      out[i] = std::max(a[i], b[i]);
    else
      throw ConfigError(std::string(op) + ": incompatible shapes " +
                        shape_str(a) + " vs " + shape_str(b));
  }
  return out;
}

// Strides with zero on broadcast axes.
inline std::vector<std::int64_t> broadcast_strides(const Shape& in,
                                                   const Shape& out) {
  auto st = strides_of(in);
  for (std::size_t i = 0; i < in.size(); ++i)
    if (in[i] == 1 && out[i] != 1) st[i] = 0;
  return st;
}

// Calls fn(out_flat, a_flat, b_flat) for every output coordinate in row-major
// order.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb,
                        F&& fn) {
  const std::int64_t n = numel_of(out);
  const auto ost = strides_of(out);
  const auto ast = broadcast_strides(sa, out);
  const auto bst = broadcast_strides(sb, out);
  const int r = static_cast<int>(out.size());
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    fn(flat, ia, ib);
    for (int d = r - 1; d >= 0; --d) {
      idx[d]++;
      ia += ast[d];
      ib += bst[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      ia -= ast[d] * out[d];
      ib -= bst[d] * out[d];
    }
  }
}

enum class BinKind { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> binary_op(const char* name, BinKind kind, const Tensor<T>& a,
                    const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto od = out.data();
  auto ad = a.data();
  auto bd = b.data();
  if (a.shape() == b.shape()) {
    const std::int64_t n = out.numel();
    switch (kind) {
      case BinKind::Add:
        for (std::int64_t i = 0; i < n; ++i) od[i] = ad[i] + bd[i];
        break;
      case BinKind::Sub:
        for (std::int64_t i = 0; i < n; ++i) od[i] = ad[i] - bd[i];
        break;
      case BinKind::Mul:
        for (std::int64_t i = 0; i < n; ++i) od[i] = ad[i] * bd[i];
        break;
      case BinKind::Div:
        for (std::int64_t i = 0; i < n; ++i) od[i] = ad[i] / bd[i];
        break;
    }
  } else {
    for_each_broadcast(out_shape, a.shape(), b.shape(),
                       [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                         switch (kind) {
                           case BinKind::Add: od[o] = ad[ia] + bd[ib]; break;
                           case BinKind::Sub: od[o] = ad[ia] - bd[ib]; break;
                           case BinKind::Mul: od[o] = ad[ia] * bd[ib]; break;
                           case BinKind::Div: od[o] = ad[ia] / bd[ib]; break;
                         }
                       });
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return attach(name, std::move(out), {a, b}, [ai, bi, kind](TensorImpl<T>& self) {
    const bool need_a = ai->requires_grad;
    const bool need_b = bi->requires_grad;
    std::span<T> ga, gb;
    if (need_a) ga = grad_of(ai);
    if (need_b) gb = grad_of(bi);
    const auto& g = self.grad;
    const auto& ad = ai->data;
    const auto& bd = bi->data;
    for_each_broadcast(
        self.shape, ai->shape, bi->shape,
        [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
          switch (kind) {
            case BinKind::Add:
              if (need_a) ga[ia] += g[o];
              if (need_b) gb[ib] += g[o];
              break;
            case BinKind::Sub:
              if (need_a) ga[ia] += g[o];
              if (need_b) gb[ib] -= g[o];
              break;
            case BinKind::Mul:
              if (need_a) ga[ia] += g[o] * bd[ib];
              if (need_b) gb[ib] += g[o] * ad[ia];
              break;
            case BinKind::Div:
              if (need_a) ga[ia] += g[o] / bd[ib];
              if (need_b) gb[ib] -= g[o] * ad[ia] / (bd[ib] * bd[ib]);
              break;
          }
        });
  });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op("add", detail::BinKind::Add, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op("sub", detail::BinKind::Sub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op("mul", detail::BinKind::Mul, a, b);
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op("div", detail::BinKind::Div, a, b);
}

// ---------------------------------------------------------------------------
// Elementwise unary and scalar ops
// ---------------------------------------------------------------------------

namespace detail {

// fwd(x) -> y ; dfdx(x, y) -> dy/dx
template <typename T, typename Fwd, typename Dfdx>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, Fwd&& fwd,
                   Dfdx&& dfdx) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto od = out.data();
  auto xd = x.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) od[i] = fwd(xd[i]);
  auto xi = x.impl();
  return attach(name, std::move(out), {x}, [xi, dfdx](TensorImpl<T>& self) {
    auto gx = grad_of(xi);
    const auto& g = self.grad;
    const auto& xd = xi->data;
    const auto& yd = self.data;
    for (std::size_t i = 0; i < g.size(); ++i)
      gx[i] += g[i] * dfdx(xd[i], yd[i]);
  });
}

}  // namespace detail

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return detail::unary_op(
      "neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}
template <typename T>
Tensor<T> exp_(const Tensor<T>& x) {
  return detail::unary_op(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}
template <typename T>
Tensor<T> log_(const Tensor<T>& x) {
  return detail::unary_op(
      "log", x, [](T v) { return std::log(v); },
      [](T v, T) { return T(1) / v; });
}
template <typename T>
Tensor<T> sqrt_(const Tensor<T>& x) {
  return detail::unary_op(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return T(0.5) / y; });
}
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary_op(
      "add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return detail::unary_op(
      "mul_scalar", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}
// max(x, c); subgradient 0 on the clamped side and at the boundary.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T c) {
  return detail::unary_op(
      "clamp_min", x, [c](T v) { return v > c ? v : c; },
      [c](T v, T) { return v > c ? T(1) : T(0); });
}

enum class Activation { Relu, Gelu, Sigmoid, Tanh };

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "gelu") return Activation::Gelu;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation: " + s);
}

// GELU uses the exact error-function form x * Phi(x).
template <typename T>
Tensor<T> apply_activation(const Tensor<T>& x, Activation kind) {
  switch (kind) {
    case Activation::Relu:
      return detail::unary_op(
          "relu", x, [](T v) { return v > T(0) ? v : T(0); },
          [](T v, T) { return v > T(0) ? T(1) : T(0); });
    case Activation::Gelu:
      return detail::unary_op(
          "gelu", x,
          [](T v) {
            return T(0.5) * v *
                   (T(1) + std::erf(v * T(0.7071067811865475)));
          },
          [](T v, T) {
            const T phi = T(0.5) * (T(1) + std::erf(v * T(0.7071067811865475)));
            const T dens = std::exp(T(-0.5) * v * v) * T(0.3989422804014327);
            return phi + v * dens;
          });
    case Activation::Sigmoid:
      return detail::unary_op(
          "sigmoid", x,
          [](T v) {
            return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                             : std::exp(v) / (T(1) + std::exp(v));
          },
          [](T, T y) { return y * (T(1) - y); });
    case Activation::Tanh:
      return detail::unary_op(
          "tanh", x, [](T v) { return std::tanh(v); },
          [](T, T y) { return T(1) - y * y; });
  }
  throw ConfigError("unknown activation kind");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return apply_activation(x, Activation::Relu);
}
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return apply_activation(x, Activation::Gelu);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return apply_activation(x, Activation::Sigmoid);
}
template <typename T>
Tensor<T> tanh_(const Tensor<T>& x) {
  return apply_activation(x, Activation::Tanh);
}

// log(1 + exp(x)) evaluated without overflow; gradient is sigmoid(x).
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary_op(
      "softplus", x,
      [](T v) {
        return v > T(0) ? v + std::log1p(std::exp(-v))
                        : std::log1p(std::exp(v));
      },
      [](T v, T) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

inline Shape reduced_shape(const Shape& in, const std::vector<int>& axes,
                           bool keepdim) {
  std::vector<bool> is_red(in.size(), false);
  for (int a : axes) {
    if (a < 0 || a >= static_cast<int>(in.size()))
      throw ConfigError("reduction axis " + std::to_string(a) +
                        " out of range for " + shape_str(in));
    is_red[static_cast<std::size_t>(a)] = true;
  }
  Shape out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (is_red[i]) {
      if (keepdim) out.push_back(1);
    } else {
      out.push_back(in[i]);
    }
  }
  if (out.empty()) out.push_back(1);
  return out;
}

// Maps each input flat index onto its output flat index.
template <typename F>
void for_each_reduce(const Shape& in, const std::vector<int>& axes, F&& fn) {
  std::vector<bool> is_red(in.size(), false);
  for (int a : axes) is_red[static_cast<std::size_t>(a)] = true;
  // Output strides laid out over the kept axes (row-major).
  std::vector<std::int64_t> ost(in.size(), 0);
  std::int64_t acc = 1;
  for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
    if (!is_red[static_cast<std::size_t>(i)]) {
      ost[static_cast<std::size_t>(i)] = acc;
      acc *= in[static_cast<std::size_t>(i)];
    }
  }
  const std::int64_t n = numel_of(in);
  const int r = static_cast<int>(in.size());
  std::vector<std::int64_t> idx(in.size(), 0);
  std::int64_t o = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    fn(flat, o);
    for (int d = r - 1; d >= 0; --d) {
      idx[d]++;
      o += ost[d];
      if (idx[d] < in[d]) break;
      idx[d] = 0;
      o -= ost[d] * in[d];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> sum(const Tensor<T>& x, const std::vector<int>& axes,
              bool keepdim = false) {
  const Shape out_shape = detail::reduced_shape(x.shape(), axes, keepdim);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto od = out.data();
  auto xd = x.data();
  detail::for_each_reduce(x.shape(), axes,
                          [&](std::int64_t i, std::int64_t o) { od[o] += xd[i]; });
  auto xi = x.impl();
  auto ax = axes;
  return detail::attach("sum", std::move(out), {x}, [xi, ax](TensorImpl<T>& self) {
    auto gx = detail::grad_of(xi);
    const auto& g = self.grad;
    detail::for_each_reduce(xi->shape, ax, [&](std::int64_t i, std::int64_t o) {
      gx[i] += g[o];
    });
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, const std::vector<int>& axes,
               bool keepdim = false) {
  std::int64_t cnt = 1;
  for (int a : axes) cnt *= x.shape()[static_cast<std::size_t>(a)];
  return mul_scalar(sum(x, axes, keepdim), T(1) / static_cast<T>(cnt));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  std::vector<int> axes(x.shape().size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return sum(x, axes, false);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return mul_scalar(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// Max over one axis; gradient routes to the first maximal element.
template <typename T>
Tensor<T> max_axis(const Tensor<T>& x, int axis, bool keepdim = false) {
  const Shape out_shape = detail::reduced_shape(x.shape(), {axis}, keepdim);
  Tensor<T> out = Tensor<T>::filled(out_shape,
                                    -std::numeric_limits<T>::infinity());
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(out.numel()), -1);
  auto od = out.data();
  auto xd = x.data();
  detail::for_each_reduce(x.shape(), {axis},
                          [&](std::int64_t i, std::int64_t o) {
                            if (xd[i] > od[o]) {
                              od[o] = xd[i];
                              (*argmax)[static_cast<std::size_t>(o)] = i;
                            }
                          });
  auto xi = x.impl();
  return detail::attach("max_axis", std::move(out), {x},
                        [xi, argmax](TensorImpl<T>& self) {
                          auto gx = detail::grad_of(xi);
                          const auto& g = self.grad;
                          for (std::size_t o = 0; o < g.size(); ++o)
                            gx[(*argmax)[o]] += g[o];
                        });
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy
// ---------------------------------------------------------------------------

namespace detail {

// Iterates all 1-D slices along `axis`: fn(base_flat, extent, stride).
template <typename F>
void for_each_lane(const Shape& shape, int axis, F&& fn) {
  const int r = static_cast<int>(shape.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ConfigError("axis " + std::to_string(axis) + " out of range for " +
                      shape_str(shape));
  const auto st = strides_of(shape);
  const std::int64_t extent = shape[static_cast<std::size_t>(axis)];
  const std::int64_t stride = st[static_cast<std::size_t>(axis)];
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= shape[static_cast<std::size_t>(i)];
  for (std::int64_t ou = 0; ou < outer; ++ou)
    for (std::int64_t in = 0; in < inner; ++in)
      fn(ou * extent * stride + in, extent, stride);
}

}  // namespace detail

// Numerically stable softmax along `axis` (max subtraction).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto od = out.data();
  auto xd = x.data();
  detail::for_each_lane(
      x.shape(), axis, [&](std::int64_t base, std::int64_t n, std::int64_t s) {
        T mx = xd[base];
        for (std::int64_t k = 1; k < n; ++k)
          mx = std::max(mx, xd[base + k * s]);
        T denom = T(0);
        for (std::int64_t k = 0; k < n; ++k) {
          const T e = std::exp(xd[base + k * s] - mx);
          od[base + k * s] = e;
          denom += e;
        }
        for (std::int64_t k = 0; k < n; ++k) od[base + k * s] /= denom;
      });
  auto xi = x.impl();
  return detail::attach("softmax", std::move(out), {x},
                        [xi, axis](TensorImpl<T>& self) {
                          auto gx = detail::grad_of(xi);
                          const auto& g = self.grad;
                          const auto& y = self.data;
                          detail::for_each_lane(
                              self.shape, axis,
                              [&](std::int64_t base, std::int64_t n,
                                  std::int64_t s) {
                                T dot = T(0);
                                for (std::int64_t k = 0; k < n; ++k)
                                  dot += g[base + k * s] * y[base + k * s];
                                for (std::int64_t k = 0; k < n; ++k)
                                  gx[base + k * s] += y[base + k * s] *
                                                      (g[base + k * s] - dot);
                              });
                        });
}

// Mean softmax cross-entropy over rows of (N, C) logits.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        const std::vector<std::int64_t>& labels) {
  if (logits.rank() != 2)
    throw ConfigError("cross_entropy expects (N,C) logits, got " +
                      shape_str(logits.shape()));
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw InputError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  for (auto l : labels)
    if (l < 0 || l >= c)
      throw InputError("cross_entropy: label " + std::to_string(l) +
                       " out of range [0," + std::to_string(c) + ")");
  auto xd = logits.data();
  T total = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = xd.data() + i * c;
    T mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::int64_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    total += mx + std::log(denom) - row[labels[static_cast<std::size_t>(i)]];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n));
  auto xi = logits.impl();
  auto lab = labels;
  return detail::attach("cross_entropy", std::move(out), {logits},
                        [xi, lab, n, c](TensorImpl<T>& self) {
                          auto gx = detail::grad_of(xi);
                          const T g = self.grad[0] / static_cast<T>(n);
                          const auto& xd = xi->data;
                          for (std::int64_t i = 0; i < n; ++i) {
                            const T* row = xd.data() + i * c;
                            T mx = row[0];
                            for (std::int64_t j = 1; j < c; ++j)
                              mx = std::max(mx, row[j]);
                            T denom = T(0);
                            for (std::int64_t j = 0; j < c; ++j)
                              denom += std::exp(row[j] - mx);
                            for (std::int64_t j = 0; j < c; ++j) {
                              T p = std::exp(row[j] - mx) / denom;
                              if (j == lab[static_cast<std::size_t>(i)])
                                p -= T(1);
                              gx[i * c + j] += g * p;
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Shape ops: reshape / permute / concat
// ---------------------------------------------------------------------------

// Row-major bijection; volume must be preserved.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& new_shape) {
  if (numel_of(new_shape) != x.numel())
    throw ConfigError("reshape: volume mismatch " + shape_str(x.shape()) +
                      " (" + std::to_string(x.numel()) + ") -> " +
                      shape_str(new_shape) + " (" +
                      std::to_string(numel_of(new_shape)) + ")");
  Tensor<T> out = Tensor<T>::zeros(new_shape);
  auto od = out.data();
  auto xd = x.data();
  std::copy(xd.begin(), xd.end(), od.begin());
  auto xi = x.impl();
  return detail::attach("reshape", std::move(out), {x},
                        [xi](TensorImpl<T>& self) {
                          auto gx = detail::grad_of(xi);
                          const auto& g = self.grad;
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gx[i] += g[i];
                        });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& order) {
  const int r = x.rank();
  if (static_cast<int>(order.size()) != r)
    throw ConfigError("permute: order size " + std::to_string(order.size()) +
                      " vs rank " + std::to_string(r));
  std::vector<bool> seen(order.size(), false);
  for (int a : order) {
    if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)])
      throw ConfigError("permute: invalid axis order");
    seen[static_cast<std::size_t>(a)] = true;
  }
  Shape out_shape(order.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    out_shape[i] = x.shape()[static_cast<std::size_t>(order[i])];
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const auto in_st = strides_of(x.shape());
  auto od = out.data();
  auto xd = x.data();
  // Walk output coords; input flat index advances by permuted strides.
  std::vector<std::int64_t> pst(order.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    pst[i] = in_st[static_cast<std::size_t>(order[i])];
  const std::int64_t n = out.numel();
  std::vector<std::int64_t> idx(order.size(), 0);
  std::int64_t src = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    od[flat] = xd[src];
    for (int d = r - 1; d >= 0; --d) {
      idx[d]++;
      src += pst[d];
      if (idx[d] < out_shape[d]) break;
      idx[d] = 0;
      src -= pst[d] * out_shape[d];
    }
  }
  auto xi = x.impl();
  auto ord = order;
  return detail::attach(
      "permute", std::move(out), {x}, [xi, ord, out_shape](TensorImpl<T>& self) {
        auto gx = detail::grad_of(xi);
        const auto& g = self.grad;
        const auto in_st = strides_of(xi->shape);
        std::vector<std::int64_t> pst(ord.size());
        for (std::size_t i = 0; i < ord.size(); ++i)
          pst[i] = in_st[static_cast<std::size_t>(ord[i])];
        const int r = static_cast<int>(ord.size());
        std::vector<std::int64_t> idx(ord.size(), 0);
        std::int64_t src = 0;
        for (std::int64_t flat = 0; flat < static_cast<std::int64_t>(g.size());
             ++flat) {
          gx[src] += g[flat];
          for (int d = r - 1; d >= 0; --d) {
            idx[d]++;
            src += pst[d];
            if (idx[d] < out_shape[d]) break;
            idx[d] = 0;
            src -= pst[d] * out_shape[d];
          }
        }
      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ConfigError("concat: no inputs");
  const int r = parts[0].rank();
  if (axis < 0) axis += r;
  Shape out_shape = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw ConfigError("concat: rank mismatch");
    for (int d = 0; d < r; ++d)
      if (d != axis && p.shape()[static_cast<std::size_t>(d)] !=
                           out_shape[static_cast<std::size_t>(d)])
        throw ConfigError("concat: shape mismatch at axis " + std::to_string(d));
    total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < r; ++d)
    inner *= out_shape[static_cast<std::size_t>(d)];
  auto od = out.data();
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t ext = p.dim(axis);
    auto pd = p.data();
    for (std::int64_t ou = 0; ou < outer; ++ou)
      std::memcpy(od.data() + (ou * total + offset) * inner,
                  pd.data() + ou * ext * inner,
                  static_cast<std::size_t>(ext * inner) * sizeof(T));
    offset += ext;
  }
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  Tensor<T> result = std::move(out);
  bool needs = false;
  if (grad_mode())
    for (const auto& p : parts)
      if (p.requires_grad()) needs = true;
  if (needs) {
    auto impl = result.impl();
    impl->requires_grad = true;
    impl->op = "concat";
    impl->parents = impls;
    impl->backward_fn = [impls, outer, inner, total, axis](TensorImpl<T>& self) {
      std::int64_t offset = 0;
      for (const auto& pi : impls) {
        const std::int64_t ext = pi->shape[static_cast<std::size_t>(axis)];
        if (pi->requires_grad) {
          auto gp = detail::grad_of(pi);
          const auto& g = self.grad;
          for (std::int64_t ou = 0; ou < outer; ++ou) {
            const T* src = g.data() + (ou * total + offset) * inner;
            T* dst = gp.data() + ou * ext * inner;
            for (std::int64_t k = 0; k < ext * inner; ++k) dst[k] += src[k];
          }
        }
        offset += ext;
      }
    };
  }
  return result;
}

// ---------------------------------------------------------------------------
// linear / matmul
// ---------------------------------------------------------------------------

// y = x . w^T + b over the trailing axis. x: (..., Din), w: (Dout, Din).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<std::type_identity_t<T>>* b) {
  if (x.rank() < 1 || w.rank() != 2)
    throw ConfigError("linear: need x rank>=1 and w rank 2");
  const std::int64_t din = x.dim(-1);
  const std::int64_t dout = w.dim(0);
  if (w.dim(1) != din)
    throw ConfigError("linear: trailing extent " + std::to_string(din) +
                      " does not match weight " + shape_str(w.shape()));
  if (b && (b->rank() != 1 || b->dim(0) != dout))
    throw ConfigError("linear: bias shape mismatch");
  const std::int64_t rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto od = out.data();
  auto xd = x.data();
  auto wd = w.data();
  const T* bd = b ? b->data().data() : nullptr;
  MacCounter::add(static_cast<std::uint64_t>(rows) *
                  static_cast<std::uint64_t>(dout) *
                  static_cast<std::uint64_t>(din));
  parallel_for(rows, [&](std::int64_t r) {
    const T* xr = xd.data() + r * din;
    T* yr = od.data() + r * dout;
    for (std::int64_t o = 0; o < dout; ++o) {
      const T* wr = wd.data() + o * din;
      T acc = bd ? bd[o] : T(0);
      for (std::int64_t i = 0; i < din; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  });
  auto xi = x.impl();
  auto wi = w.impl();
  std::shared_ptr<TensorImpl<T>> bi = b ? b->impl() : nullptr;
  Tensor<T> result = std::move(out);
  bool needs = grad_mode() && (x.requires_grad() || w.requires_grad() ||
                               (b && b->requires_grad()));
  if (needs) {
    auto impl = result.impl();
    impl->requires_grad = true;
    impl->op = "linear";
    impl->parents = {xi, wi};
    if (bi) impl->parents.push_back(bi);
    impl->backward_fn = [xi, wi, bi, rows, din, dout](TensorImpl<T>& self) {
      const auto& g = self.grad;
      const auto& xd = xi->data;
      const auto& wd = wi->data;
      if (xi->requires_grad) {
        auto gx = detail::grad_of(xi);
        parallel_for(rows, [&](std::int64_t r) {
          const T* gr = g.data() + r * dout;
          T* gxr = gx.data() + r * din;
          for (std::int64_t o = 0; o < dout; ++o) {
            const T go = gr[o];
            const T* wr = wd.data() + o * din;
            for (std::int64_t i = 0; i < din; ++i) gxr[i] += go * wr[i];
          }
        });
      }
      if (wi->requires_grad) {
        auto gw = detail::grad_of(wi);
        parallel_for(dout, [&](std::int64_t o) {
          T* gwr = gw.data() + o * din;
          for (std::int64_t r = 0; r < rows; ++r) {
            const T go = g[r * dout + o];
            const T* xr = xd.data() + r * din;
            for (std::int64_t i = 0; i < din; ++i) gwr[i] += go * xr[i];
          }
        });
      }
      if (bi && bi->requires_grad) {
        auto gb = detail::grad_of(bi);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t o = 0; o < dout; ++o) gb[o] += g[r * dout + o];
      }
    };
  }
  return result;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return linear(x, w, &b);
}
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  return linear(x, w, static_cast<const Tensor<T>*>(nullptr));
}

// Batched matmul: (B..., M, K) x (B..., K, N) -> (B..., M, N); leading
// dimensions must match exactly.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() != a.rank())
    throw ConfigError("matmul: ranks must match and be >= 2");
  const int r = a.rank();
  for (int d = 0; d < r - 2; ++d)
    if (a.shape()[static_cast<std::size_t>(d)] !=
        b.shape()[static_cast<std::size_t>(d)])
      throw ConfigError("matmul: leading dims mismatch " +
                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::int64_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k)
    throw ConfigError("matmul: inner dims mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  std::int64_t batch = 1;
  for (int d = 0; d < r - 2; ++d) batch *= a.shape()[static_cast<std::size_t>(d)];
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(r - 1)] = n;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto od = out.data();
  auto ad = a.data();
  auto bd = b.data();
  MacCounter::add(static_cast<std::uint64_t>(batch) *
                  static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(k) *
                  static_cast<std::uint64_t>(n));
  parallel_for(batch, [&](std::int64_t bi) {
    const T* A = ad.data() + bi * m * k;
    const T* B = bd.data() + bi * k * n;
    T* Y = od.data() + bi * m * n;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t p = 0; p < k; ++p) {
        const T av = A[i * k + p];
        const T* Br = B + p * n;
        T* Yr = Y + i * n;
        for (std::int64_t j = 0; j < n; ++j) Yr[j] += av * Br[j];
      }
  });
  auto ai = a.impl();
  auto bimpl = b.impl();
  return detail::attach(
      "matmul", std::move(out), {a, b},
      [ai, bimpl, batch, m, k, n](TensorImpl<T>& self) {
        const auto& g = self.grad;
        const auto& ad = ai->data;
        const auto& bd = bimpl->data;
        if (ai->requires_grad) {
          auto ga = detail::grad_of(ai);
          parallel_for(batch, [&](std::int64_t bi) {
            const T* G = g.data() + bi * m * n;
            const T* B = bd.data() + bi * k * n;
            T* GA = ga.data() + bi * m * k;
            for (std::int64_t i = 0; i < m; ++i)
              for (std::int64_t p = 0; p < k; ++p) {
                const T* Gr = G + i * n;
                const T* Br = B + p * n;
                T acc = T(0);
                for (std::int64_t j = 0; j < n; ++j) acc += Gr[j] * Br[j];
                GA[i * k + p] += acc;
              }
          });
        }
        if (bimpl->requires_grad) {
          auto gb = detail::grad_of(bimpl);
          parallel_for(batch, [&](std::int64_t bi) {
            const T* G = g.data() + bi * m * n;
            const T* A = ad.data() + bi * m * k;
            T* GB = gb.data() + bi * k * n;
            for (std::int64_t i = 0; i < m; ++i)
              for (std::int64_t p = 0; p < k; ++p) {
                const T av = A[i * k + p];
                const T* Gr = G + i * n;
                T* GBr = GB + p * n;
                for (std::int64_t j = 0; j < n; ++j) GBr[j] += av * Gr[j];
              }
          });
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation, zero padding, floor output size)
// ---------------------------------------------------------------------------

namespace detail {

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k,
                                 std::int64_t stride, std::int64_t pad,
                                 const char* what) {
  const std::int64_t out = (in + 2 * pad - k) / stride + 1;
  if (in + 2 * pad < k || out < 1)
    throw ConfigError(std::string("conv: ") + what + " extent " +
                      std::to_string(in) + " with kernel " + std::to_string(k) +
                      ", stride " + std::to_string(stride) + ", pad " +
                      std::to_string(pad) + " yields empty output");
  return out;
}

}  // namespace detail

// x: (N, Cin, H, W), w: (Cout, Cin/g, Kh, Kw), b: (Cout) optional.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<std::type_identity_t<T>>* b, std::int64_t sh,
                 std::int64_t sw, std::int64_t ph, std::int64_t pw,
                 std::int64_t groups) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ConfigError("conv2d: expected x rank 4 and w rank 4, got " +
                      shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wdt = x.dim(3);
  const std::int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (groups < 1 || cin % groups != 0 || cout % groups != 0)
    throw ConfigError("conv2d: channels (Cin=" + std::to_string(cin) +
                      ", Cout=" + std::to_string(cout) +
                      ") not divisible by groups=" + std::to_string(groups));
  const std::int64_t cin_g = cin / groups;
  if (w.dim(1) != cin_g)
    throw ConfigError("conv2d: weight expects Cin/g=" + std::to_string(w.dim(1)) +
                      " but input has " + std::to_string(cin_g));
  if (b && (b->rank() != 1 || b->dim(0) != cout))
    throw ConfigError("conv2d: bias shape mismatch");
  const std::int64_t hout = detail::conv_out_dim(h, kh, sh, ph, "height");
  const std::int64_t wout = detail::conv_out_dim(wdt, kw, sw, pw, "width");
  Tensor<T> out = Tensor<T>::zeros({n, cout, hout, wout});
  auto od = out.data();
  auto xd = x.data();
  auto wd = w.data();
  const T* bd = b ? b->data().data() : nullptr;
  const std::int64_t cout_g = cout / groups;
  MacCounter::add(static_cast<std::uint64_t>(n) * cout * cin_g * kh * kw * hout *
                  wout);
  parallel_for(n * cout, [&](std::int64_t job) {
    const std::int64_t ni = job / cout, oc = job % cout;
    const std::int64_t gi = oc / cout_g;
    const std::int64_t ic0 = gi * cin_g;
    T* yb = od.data() + (ni * cout + oc) * hout * wout;
    for (std::int64_t oh = 0; oh < hout; ++oh)
      for (std::int64_t ow = 0; ow < wout; ++ow) {
        T acc = bd ? bd[oc] : T(0);
        for (std::int64_t ic = 0; ic < cin_g; ++ic)
          for (std::int64_t r = 0; r < kh; ++r) {
            const std::int64_t ih = oh * sh - ph + r;
            if (ih < 0 || ih >= h) continue;
            const T* xrow = xd.data() + ((ni * cin + ic0 + ic) * h + ih) * wdt;
            const T* wrow = wd.data() + ((oc * cin_g + ic) * kh + r) * kw;
            for (std::int64_t c = 0; c < kw; ++c) {
              const std::int64_t iw = ow * sw - pw + c;
              if (iw < 0 || iw >= wdt) continue;
              acc += xrow[iw] * wrow[c];
            }
          }
        yb[oh * wout + ow] = acc;
      }
  });
  auto xi = x.impl();
  auto wi = w.impl();
  std::shared_ptr<TensorImpl<T>> bi = b ? b->impl() : nullptr;
  Tensor<T> result = std::move(out);
  bool needs = grad_mode() && (x.requires_grad() || w.requires_grad() ||
                               (b && b->requires_grad()));
  if (needs) {
    auto impl = result.impl();
    impl->requires_grad = true;
    impl->op = "conv2d";
    impl->parents = {xi, wi};
    if (bi) impl->parents.push_back(bi);
    impl->backward_fn = [=](TensorImpl<T>& self) {
      const auto& g = self.grad;
      const auto& xd = xi->data;
      const auto& wd = wi->data;
      if (xi->requires_grad) {
        auto gx = detail::grad_of(xi);
        parallel_for(n, [&](std::int64_t ni) {
          for (std::int64_t oc = 0; oc < cout; ++oc) {
            const std::int64_t gi2 = oc / cout_g;
            const std::int64_t ic0 = gi2 * cin_g;
            const T* gb = g.data() + (ni * cout + oc) * hout * wout;
            for (std::int64_t oh = 0; oh < hout; ++oh)
              for (std::int64_t ow = 0; ow < wout; ++ow) {
                const T gv = gb[oh * wout + ow];
                if (gv == T(0)) continue;
                for (std::int64_t ic = 0; ic < cin_g; ++ic)
                  for (std::int64_t r = 0; r < kh; ++r) {
                    const std::int64_t ih = oh * sh - ph + r;
                    if (ih < 0 || ih >= h) continue;
                    T* gxrow =
                        gx.data() + ((ni * cin + ic0 + ic) * h + ih) * wdt;
                    const T* wrow =
                        wd.data() + ((oc * cin_g + ic) * kh + r) * kw;
                    for (std::int64_t c = 0; c < kw; ++c) {
                      const std::int64_t iw = ow * sw - pw + c;
                      if (iw < 0 || iw >= wdt) continue;
                      gxrow[iw] += gv * wrow[c];
                    }
                  }
              }
          }
        });
      }
      if (wi->requires_grad) {
        auto gw = detail::grad_of(wi);
        parallel_for(cout, [&](std::int64_t oc) {
          const std::int64_t gi2 = oc / cout_g;
          const std::int64_t ic0 = gi2 * cin_g;
          for (std::int64_t ni = 0; ni < n; ++ni) {
            const T* gb = g.data() + (ni * cout + oc) * hout * wout;
            for (std::int64_t oh = 0; oh < hout; ++oh)
              for (std::int64_t ow = 0; ow < wout; ++ow) {
                const T gv = gb[oh * wout + ow];
                if (gv == T(0)) continue;
                for (std::int64_t ic = 0; ic < cin_g; ++ic)
                  for (std::int64_t r = 0; r < kh; ++r) {
                    const std::int64_t ih = oh * sh - ph + r;
                    if (ih < 0 || ih >= h) continue;
                    const T* xrow =
                        xd.data() + ((ni * cin + ic0 + ic) * h + ih) * wdt;
                    T* gwrow =
                        gw.data() + ((oc * cin_g + ic) * kh + r) * kw;
                    for (std::int64_t c = 0; c < kw; ++c) {
                      const std::int64_t iw = ow * sw - pw + c;
                      if (iw < 0 || iw >= wdt) continue;
                      gwrow[c] += gv * xrow[iw];
                    }
                  }
              }
          }
        });
      }
      if (bi && bi->requires_grad) {
        auto gbain = detail::grad_of(bi);
        for (std::int64_t ni = 0; ni < n; ++ni)
          for (std::int64_t oc = 0; oc < cout; ++oc) {
            const T* gb = g.data() + (ni * cout + oc) * hout * wout;
            T acc = T(0);
            for (std::int64_t k = 0; k < hout * wout; ++k) acc += gb[k];
            gbain[oc] += acc;
          }
      }
    };
  }
  return result;
}

// x: (N, Cin, L), w: (Cout, Cin/g, K).
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<std::type_identity_t<T>>* b, std::int64_t stride,
                 std::int64_t pad, std::int64_t groups) {
  if (x.rank() != 3 || w.rank() != 3)
    throw ConfigError("conv1d: expected x rank 3 and w rank 3, got " +
                      shape_str(x.shape()) + " and " + shape_str(w.shape()));
  // Reuse the 2D kernel with a unit height axis.
  Tensor<T> x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
  Tensor<T> w4 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2)});
  Tensor<T> y4 = conv2d(x4, w4, b, /*sh=*/1, stride, /*ph=*/0, pad, groups);
  return reshape(y4, {y4.dim(0), y4.dim(1), y4.dim(3)});
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::int64_t stride, std::int64_t pad, std::int64_t groups) {
  return conv1d(x, w, &b, stride, pad, groups);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::int64_t sh, std::int64_t sw, std::int64_t ph,
                 std::int64_t pw, std::int64_t groups) {
  return conv2d(x, w, &b, sh, sw, ph, pw, groups);
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace detail {

// gamma/beta come in with the extents of `axes`; reshape to broadcast rank.
template <typename T>
Tensor<T> affine_param_view(const Tensor<T>& p, const Shape& full,
                            const std::vector<int>& axes) {
  Shape view(full.size(), 1);
  std::int64_t expect = 1;
  for (int a : axes) {
    view[static_cast<std::size_t>(a)] = full[static_cast<std::size_t>(a)];
    expect *= full[static_cast<std::size_t>(a)];
  }
  if (p.numel() != expect)
    throw ConfigError("normalize: affine parameter has " +
                      std::to_string(p.numel()) + " values, expected " +
                      std::to_string(expect));
  return reshape(p, view);
}

}  // namespace detail

// Per-sample normalization over `axes` (biased variance), then affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const std::vector<int>& axes,
                     const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (eps <= T(0)) throw ConfigError("layer_norm: eps must be > 0");
  Tensor<T> mu = mean(x, axes, /*keepdim=*/true);
  Tensor<T> centered = sub(x, mu);
  Tensor<T> var = mean(mul(centered, centered), axes, /*keepdim=*/true);
  Tensor<T> inv = div(centered, sqrt_(add_scalar(var, eps)));
  Tensor<T> g = detail::affine_param_view(gamma, x.shape(), axes);
  Tensor<T> b = detail::affine_param_view(beta, x.shape(), axes);
  return add(mul(inv, g), b);
}

// Running statistics live outside the graph; the layer owns them.
template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
  bool initialized = false;
};

// Batch normalization over channel axis 1. Training mode normalizes with
// minibatch statistics (biased) and updates running stats with the unbiased
// variance; eval mode uses the running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta,
                     RunningStats<std::type_identity_t<T>>* running,
                     bool training, T momentum, T eps) {
  if (x.rank() < 2) throw ConfigError("batch_norm: rank must be >= 2");
  if (eps <= T(0)) throw ConfigError("batch_norm: eps must be > 0");
  const std::int64_t c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c)
    throw ConfigError("batch_norm: affine parameters must have C=" +
                      std::to_string(c) + " values");
  std::vector<int> red_axes;
  for (int d = 0; d < x.rank(); ++d)
    if (d != 1) red_axes.push_back(d);
  Shape view(static_cast<std::size_t>(x.rank()), 1);
  view[1] = c;
  if (training) {
    Tensor<T> mu = mean(x, red_axes, /*keepdim=*/true);
    Tensor<T> centered = sub(x, mu);
    Tensor<T> var = mean(mul(centered, centered), red_axes, /*keepdim=*/true);
    Tensor<T> y = div(centered, sqrt_(add_scalar(var, eps)));
    if (running) {
      const std::int64_t cnt = x.numel() / c;
      const T unbias = cnt > 1 ? static_cast<T>(cnt) / static_cast<T>(cnt - 1)
                               : T(1);
      auto rm = running->mean.data();
      auto rv = running->var.data();
      auto mud = mu.data();
      auto vard = var.data();
      for (std::int64_t k = 0; k < c; ++k) {
        rm[k] = (T(1) - momentum) * rm[k] + momentum * mud[k];
        rv[k] = (T(1) - momentum) * rv[k] + momentum * vard[k] * unbias;
      }
      running->initialized = true;
    }
    return add(mul(y, reshape(gamma, view)), reshape(beta, view));
  }
  if (!running || !running->initialized)
    throw StateError("batch_norm: eval mode requires initialized running stats");
  Tensor<T> rm = reshape(running->mean, view);
  Tensor<T> rv = reshape(running->var, view);
  Tensor<T> y = div(sub(x, rm), sqrt_(add_scalar(rv, eps)));
  return add(mul(y, reshape(gamma, view)), reshape(beta, view));
}

}  // namespace redimnet
