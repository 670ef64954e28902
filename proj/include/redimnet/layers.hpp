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

#include <string>
#include <vector>

#include "redimnet/tensor.hpp"

namespace redimnet {

// Named view into a layer's state, used for optimization and checkpointing.
// Buffers (batch-norm running statistics) are serialized but not optimized
// and are excluded from parameter counts.
template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;
  bool is_buffer;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

namespace detail {

// Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
void kaiming_uniform(Tensor<T>& w, std::int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

template <typename T>
struct LinearLayer {
  Tensor<T> weight;  // (Dout, Din)
  Tensor<T> bias;    // (Dout) if has_bias
  bool has_bias = true;

  LinearLayer() = default;
  LinearLayer(std::int64_t din, std::int64_t dout, Rng& rng,
              bool with_bias = true, bool zero_init = false)
      : has_bias(with_bias) {
    weight = Tensor<T>::zeros({dout, din}, /*requires_grad=*/true);
    if (!zero_init) detail::kaiming_uniform(weight, din, rng);
    if (has_bias) bias = Tensor<T>::zeros({dout}, /*requires_grad=*/true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return has_bias ? linear(x, weight, bias) : linear(x, weight);
  }

  std::uint64_t macs(std::uint64_t rows) const {
    return rows * static_cast<std::uint64_t>(weight.dim(0)) *
           static_cast<std::uint64_t>(weight.dim(1));
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".weight", &weight, false});
    if (has_bias) out.push_back({prefix + ".bias", &bias, false});
  }
};

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

template <typename T>
struct Conv1dLayer {
  Tensor<T> weight;  // (Cout, Cin/g, K)
  Tensor<T> bias;
  std::int64_t stride = 1, pad = 0, groups = 1;
  bool has_bias = true;

  Conv1dLayer() = default;
  Conv1dLayer(std::int64_t cin, std::int64_t cout, std::int64_t k,
              std::int64_t stride_, std::int64_t pad_, std::int64_t groups_,
              Rng& rng, bool with_bias = true, bool zero_init = false)
      : stride(stride_), pad(pad_), groups(groups_), has_bias(with_bias) {
    if (cin % groups != 0 || cout % groups != 0)
      throw ConfigError("conv1d layer: channels not divisible by groups");
    weight = Tensor<T>::zeros({cout, cin / groups, k}, /*requires_grad=*/true);
    if (!zero_init) detail::kaiming_uniform(weight, (cin / groups) * k, rng);
    if (has_bias) bias = Tensor<T>::zeros({cout}, /*requires_grad=*/true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv1d(x, weight, has_bias ? &bias : nullptr, stride, pad, groups);
  }

  std::uint64_t macs(std::int64_t len_in) const {
    const std::int64_t lout = (len_in + 2 * pad - weight.dim(2)) / stride + 1;
    return static_cast<std::uint64_t>(weight.dim(0)) *
           static_cast<std::uint64_t>(weight.dim(1)) *
           static_cast<std::uint64_t>(weight.dim(2)) *
           static_cast<std::uint64_t>(lout);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".weight", &weight, false});
    if (has_bias) out.push_back({prefix + ".bias", &bias, false});
  }
};

template <typename T>
struct Conv2dLayer {
  Tensor<T> weight;  // (Cout, Cin/g, Kh, Kw)
  Tensor<T> bias;
  std::int64_t sh = 1, sw = 1, ph = 0, pw = 0, groups = 1;
  bool has_bias = true;

  Conv2dLayer() = default;
  Conv2dLayer(std::int64_t cin, std::int64_t cout, std::int64_t kh,
              std::int64_t kw, std::int64_t sh_, std::int64_t sw_,
              std::int64_t ph_, std::int64_t pw_, std::int64_t groups_,
              Rng& rng, bool with_bias = true, bool zero_init = false)
      : sh(sh_), sw(sw_), ph(ph_), pw(pw_), groups(groups_),
        has_bias(with_bias) {
    if (cin % groups != 0 || cout % groups != 0)
      throw ConfigError("conv2d layer: channels not divisible by groups");
    weight = Tensor<T>::zeros({cout, cin / groups, kh, kw},
                              /*requires_grad=*/true);
    if (!zero_init)
      detail::kaiming_uniform(weight, (cin / groups) * kh * kw, rng);
    if (has_bias) bias = Tensor<T>::zeros({cout}, /*requires_grad=*/true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, weight, has_bias ? &bias : nullptr, sh, sw, ph, pw,
                  groups);
  }

  std::uint64_t macs(std::int64_t h_in, std::int64_t w_in) const {
    const std::int64_t hout = (h_in + 2 * ph - weight.dim(2)) / sh + 1;
    const std::int64_t wout = (w_in + 2 * pw - weight.dim(3)) / sw + 1;
    return static_cast<std::uint64_t>(weight.dim(0)) *
           static_cast<std::uint64_t>(weight.dim(1)) *
           static_cast<std::uint64_t>(weight.dim(2)) *
           static_cast<std::uint64_t>(weight.dim(3)) *
           static_cast<std::uint64_t>(hout) * static_cast<std::uint64_t>(wout);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".weight", &weight, false});
    if (has_bias) out.push_back({prefix + ".bias", &bias, false});
  }
};

// ---------------------------------------------------------------------------
// Normalization layers
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormLayer {
  Tensor<T> gamma, beta;
  RunningStats<T> running;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::int64_t c, bool zero_gamma = false) {
    gamma = Tensor<T>::filled({c}, zero_gamma ? T(0) : T(1),
                              /*requires_grad=*/true);
    beta = Tensor<T>::zeros({c}, /*requires_grad=*/true);
    // Fresh models carry identity statistics so that eval-mode forward is
    // well-defined before any training step.
    running.mean = Tensor<T>::zeros({c});
    running.var = Tensor<T>::filled({c}, T(1));
    running.initialized = true;
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batch_norm(x, gamma, beta, &running, training, momentum, eps);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".gamma", &gamma, false});
    out.push_back({prefix + ".beta", &beta, false});
    out.push_back({prefix + ".running_mean", &running.mean, true});
    out.push_back({prefix + ".running_var", &running.var, true});
  }
};

// Layer norm over one axis (default the channel axis of (N,C,...) maps).
template <typename T>
struct LayerNormLayer {
  Tensor<T> gamma, beta;
  int axis = 1;
  T eps = T(1e-6);

  LayerNormLayer() = default;
  explicit LayerNormLayer(std::int64_t c, int axis_ = 1) : axis(axis_) {
    gamma = Tensor<T>::filled({c}, T(1), /*requires_grad=*/true);
    beta = Tensor<T>::zeros({c}, /*requires_grad=*/true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return layer_norm(x, {axis}, gamma, beta, eps);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".gamma", &gamma, false});
    out.push_back({prefix + ".beta", &beta, false});
  }
};

// ---------------------------------------------------------------------------
// Multi-head self-attention encoder block (pre-norm, no positional encoding)
// ---------------------------------------------------------------------------

template <typename T>
struct MhaEncoder {
  std::int64_t dim = 0, heads = 0;
  LayerNormLayer<T> ln_attn, ln_ffn;
  LinearLayer<T> wq, wk, wv, wo;
  LinearLayer<T> ffn1, ffn2;

  MhaEncoder() = default;
  MhaEncoder(std::int64_t dim_, std::int64_t heads_, Rng& rng)
      : dim(dim_), heads(heads_) {
    if (heads < 1 || dim % heads != 0)
      throw ConfigError("mha: width " + std::to_string(dim) +
                        " not divisible by heads " + std::to_string(heads));
    ln_attn = LayerNormLayer<T>(dim, /*axis=*/2);
    ln_ffn = LayerNormLayer<T>(dim, /*axis=*/2);
    wq = LinearLayer<T>(dim, dim, rng);
    wk = LinearLayer<T>(dim, dim, rng);
    wv = LinearLayer<T>(dim, dim, rng);
    wo = LinearLayer<T>(dim, dim, rng, /*with_bias=*/true, /*zero_init=*/true);
    ffn1 = LinearLayer<T>(dim, 4 * dim, rng);
    ffn2 = LinearLayer<T>(4 * dim, dim, rng, /*with_bias=*/true,
                          /*zero_init=*/true);
  }

  // x: (N, D, T). Optionally captures attention probabilities
  // (N*heads, T, T) for inspection.
  Tensor<T> forward(const Tensor<T>& x, Tensor<T>* attn_out = nullptr) const {
    const std::int64_t n = x.dim(0), t = x.dim(2);
    const std::int64_t dh = dim / heads;
    Tensor<T> seq = permute(x, {0, 2, 1});  // (N, T, D)

    auto split_heads = [&](const Tensor<T>& m) {
      // (N, T, D) -> (N*heads, T, dh)
      Tensor<T> r = reshape(m, {n, t, heads, dh});
      r = permute(r, {0, 2, 1, 3});
      return reshape(r, {n * heads, t, dh});
    };

    Tensor<T> pre = ln_attn.forward(seq);
    Tensor<T> q = split_heads(wq.forward(pre));
    Tensor<T> k = split_heads(wk.forward(pre));
    Tensor<T> v = split_heads(wv.forward(pre));
    Tensor<T> scores = mul_scalar(matmul(q, permute(k, {0, 2, 1})),
                                  static_cast<T>(1.0 / std::sqrt(
                                                     static_cast<double>(dh))));
    Tensor<T> attn = softmax(scores, 2);
    if (attn_out) *attn_out = attn;
    Tensor<T> ctx = matmul(attn, v);  // (N*heads, T, dh)
    ctx = reshape(ctx, {n, heads, t, dh});
    ctx = reshape(permute(ctx, {0, 2, 1, 3}), {n, t, dim});
    Tensor<T> y = add(seq, wo.forward(ctx));

    Tensor<T> h = ln_ffn.forward(y);
    y = add(y, ffn2.forward(gelu(ffn1.forward(h))));
    return permute(y, {0, 2, 1});
  }

  std::uint64_t macs(std::int64_t t) const {
    const std::uint64_t td = static_cast<std::uint64_t>(t) *
                             static_cast<std::uint64_t>(dim);
    // Four D x D projections, two T x T attention matmuls, 4x FFN.
    return 4 * td * static_cast<std::uint64_t>(dim) +
           2 * static_cast<std::uint64_t>(t) * td +
           8 * td * static_cast<std::uint64_t>(dim);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    ln_attn.collect(prefix + ".ln_attn", out);
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
    ln_ffn.collect(prefix + ".ln_ffn", out);
    ffn1.collect(prefix + ".ffn1", out);
    ffn2.collect(prefix + ".ffn2", out);
  }
};

// ---------------------------------------------------------------------------
// Frequency-wise squeeze-excitation
// ---------------------------------------------------------------------------

template <typename T>
struct FwSE {
  LinearLayer<T> w1, w2;
  std::int64_t freq = 0;

  FwSE() = default;
  FwSE(std::int64_t f, Rng& rng) : freq(f) {
    const std::int64_t hidden = std::max<std::int64_t>(f / 2, 4);
    w1 = LinearLayer<T>(f, hidden, rng);
    w2 = LinearLayer<T>(hidden, f, rng);
  }

  // x: (N, C, F, T); squeeze over (channel, time), gate per frequency.
  Tensor<T> forward(const Tensor<T>& x) const {
    const std::int64_t n = x.dim(0);
    Tensor<T> z = mean(x, {1, 3});  // (N, F)
    Tensor<T> gate = sigmoid(w2.forward(relu(w1.forward(z))));
    return mul(x, reshape(gate, {n, 1, freq, 1}));
  }

  std::uint64_t macs() const {
    return w1.macs(1) + w2.macs(1);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    w1.collect(prefix + ".w1", out);
    w2.collect(prefix + ".w2", out);
  }
};

// ---------------------------------------------------------------------------
// Attentive statistics pooling with global context
// ---------------------------------------------------------------------------

template <typename T>
struct AttStatsPool {
  Conv1dLayer<T> score_w;  // (A, 3D, 1)
  Conv1dLayer<T> score_v;  // (1, A, 1), no bias
  std::int64_t dim = 0, attn_dim = 0;
  T eps = T(1e-7);

  AttStatsPool() = default;
  AttStatsPool(std::int64_t d, std::int64_t a, Rng& rng)
      : dim(d), attn_dim(a) {
    score_w = Conv1dLayer<T>(3 * d, a, 1, 1, 0, 1, rng);
    score_v = Conv1dLayer<T>(a, 1, 1, 1, 0, 1, rng, /*with_bias=*/false);
  }

  // h: (N, D, T) -> (N, 2D). Optionally captures the attention weights
  // (N, 1, T) for inspection.
  Tensor<T> forward(const Tensor<T>& h, Tensor<T>* alpha_out = nullptr) const {
    const std::int64_t n = h.dim(0), t = h.dim(2);
    // Global context: per-utterance mean and standard deviation, tiled over
    // the time axis.
    Tensor<T> mu_g = mean(h, {2}, /*keepdim=*/true);            // (N, D, 1)
    Tensor<T> cen = sub(h, mu_g);
    Tensor<T> var_g = mean(mul(cen, cen), {2}, /*keepdim=*/true);
    Tensor<T> std_g = sqrt_(clamp_min(var_g, eps));
    Tensor<T> zeros = Tensor<T>::zeros({n, dim, t});
    Tensor<T> ctx = concat<T>({h, add(mu_g, zeros), add(std_g, zeros)}, 1);

    Tensor<T> e = score_v.forward(tanh_(score_w.forward(ctx)));  // (N, 1, T)
    Tensor<T> alpha = softmax(e, 2);
    if (alpha_out) *alpha_out = alpha;

    Tensor<T> mu = sum(mul(h, alpha), {2});                      // (N, D)
    Tensor<T> m2 = sum(mul(mul(h, h), alpha), {2});
    Tensor<T> sigma = sqrt_(clamp_min(sub(m2, mul(mu, mu)), eps));
    return concat<T>({mu, sigma}, 1);
  }

  std::uint64_t macs(std::int64_t t) const {
    return score_w.macs(t) + score_v.macs(t);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    score_w.collect(prefix + ".w", out);
    score_v.collect(prefix + ".v", out);
  }
};

}  // namespace redimnet
