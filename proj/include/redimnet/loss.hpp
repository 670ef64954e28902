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

#include <cmath>
#include <string>
#include <vector>

#include "redimnet/layers.hpp"

namespace redimnet {

// ---------------------------------------------------------------------------
// Margin schedule
// ---------------------------------------------------------------------------

enum class TrainStage { Pretrain, Lm };

inline TrainStage train_stage_from_string(const std::string& s) {
  if (s == "pretrain") return TrainStage::Pretrain;
  if (s == "lm") return TrainStage::Lm;
  throw ConfigError("unknown training stage: " + s);
}
inline std::string to_string(TrainStage s) {
  return s == TrainStage::Pretrain ? "pretrain" : "lm";
}

// Pretrain: zero for 20 epochs, exponential rise to 0.2 over the next 20,
// constant afterwards. Large-margin finetuning always uses 0.5.
inline double margin_schedule(double epoch, TrainStage stage) {
  if (stage == TrainStage::Lm) return 0.5;
  if (epoch < 20.0) return 0.0;
  if (epoch >= 40.0) return 0.2;
  const double u = (epoch - 20.0) / 20.0;
  const double lam = 5.0;
  return 0.2 * std::expm1(lam * u) / std::expm1(lam);
}

// ---------------------------------------------------------------------------
// Classifier head
// ---------------------------------------------------------------------------

enum class LossKind { Aam, AamSc, Sf2A, Sf2C };

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "aam") return LossKind::Aam;
  if (s == "aam_sc") return LossKind::AamSc;
  if (s == "sf2_a") return LossKind::Sf2A;
  if (s == "sf2_c") return LossKind::Sf2C;
  throw ConfigError("unknown loss kind: " + s);
}
inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::Aam: return "aam";
    case LossKind::AamSc: return "aam_sc";
    case LossKind::Sf2A: return "sf2_a";
    case LossKind::Sf2C: return "sf2_c";
  }
  return "?";
}

struct LossConfig {
  LossKind kind = LossKind::Aam;
  double scale = 32.0;       // s for AAM; r for SF2
  double margin = 0.2;       // base margin; the scheduler overrides per epoch
  std::int64_t subcenters = 3;  // K, used by aam_sc only
  double lambda = 0.7;       // SF2 positive/negative balance
  std::int64_t t = 3;        // SF2 type-C warp exponent (integer >= 1)
};

namespace detail {

// Integer power by repeated multiplication; keeps g(-1) and g(1) exact and
// the gradient free of log-of-zero issues at the endpoints.
template <typename T>
Tensor<T> powi(const Tensor<T>& x, std::int64_t n) {
  Tensor<T> acc = x;
  for (std::int64_t i = 1; i < n; ++i) acc = mul(acc, x);
  return acc;
}

// Row-normalizes (R, D) to unit Euclidean length, differentiably.
template <typename T>
Tensor<T> unit_rows(const Tensor<T>& x) {
  Tensor<T> ss = sum(mul(x, x), {1}, /*keepdim=*/true);
  return div(x, sqrt_(clamp_min(ss, T(1e-12))));
}

}  // namespace detail

template <typename T>
class LossHead {
 public:
  LossHead() = default;

  LossHead(std::int64_t n_classes, std::int64_t emb_dim, const LossConfig& cfg,
           std::uint64_t seed)
      : n_classes_(n_classes), emb_dim_(emb_dim), cfg_(cfg) {
    if (n_classes < 2) throw ConfigError("loss: need at least 2 classes");
    if (cfg.scale <= 0.0) throw ConfigError("loss: scale must be positive");
    if (cfg.lambda <= 0.0 || cfg.lambda >= 1.0)
      throw ConfigError("loss: lambda must lie in (0,1)");
    if (cfg.t < 1) throw ConfigError("loss: t must be >= 1");
    if (cfg.subcenters < 1) throw ConfigError("loss: subcenters must be >= 1");
    k_ = (cfg.kind == LossKind::AamSc) ? cfg.subcenters : 1;
    Rng rng(seed);
    weight_ = Tensor<T>::zeros({n_classes_ * k_, emb_dim_},
                               /*requires_grad=*/true);
    detail::kaiming_uniform(weight_, emb_dim_, rng);
    bias_ = Tensor<T>::zeros({1}, /*requires_grad=*/true);
  }

  // Cosine similarities (N, n_classes); subcenters reduced by max.
  Tensor<T> cosines(const Tensor<T>& emb) const {
    Tensor<T> cos = linear(detail::unit_rows(emb), detail::unit_rows(weight_));
    if (k_ == 1) return cos;
    return max_axis(reshape(cos, {emb.dim(0), n_classes_, k_}), 2);
  }

  // Margin m comes from the scheduler; the head's configured margin is only
  // the default used when no schedule applies.
  Tensor<T> forward(const Tensor<T>& emb, const std::vector<std::int64_t>& labels,
                    double m) const {
    if (emb.rank() != 2 || emb.dim(1) != emb_dim_)
      throw InputError("loss: expected embeddings (N," +
                       std::to_string(emb_dim_) + "), got " +
                       shape_str(emb.shape()));
    if (static_cast<std::int64_t>(labels.size()) != emb.dim(0))
      throw InputError("loss: batch size mismatch");
    for (auto l : labels)
      if (l < 0 || l >= n_classes_)
        throw InputError("loss: label " + std::to_string(l) +
                         " out of range [0," + std::to_string(n_classes_) +
                         ")");
    switch (cfg_.kind) {
      case LossKind::Aam:
      case LossKind::AamSc:
        return aam(emb, labels, m);
      case LossKind::Sf2A:
      case LossKind::Sf2C:
        return sf2(emb, labels, m);
    }
    throw ConfigError("loss: unknown kind");
  }

  std::int64_t n_classes() const { return n_classes_; }
  std::int64_t emb_dim() const { return emb_dim_; }
  const LossConfig& config() const { return cfg_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".weight", &weight_, false});
    if (cfg_.kind == LossKind::Sf2A || cfg_.kind == LossKind::Sf2C)
      out.push_back({prefix + ".b", &bias_, false});
  }

 private:
  Tensor<T> one_hot(std::int64_t n, const std::vector<std::int64_t>& labels)
      const {
    Tensor<T> oh = Tensor<T>::zeros({n, n_classes_});
    for (std::int64_t i = 0; i < n; ++i)
      oh.data()[i * n_classes_ + labels[static_cast<std::size_t>(i)]] = T(1);
    return oh;
  }

  Tensor<T> aam(const Tensor<T>& emb, const std::vector<std::int64_t>& labels,
                double m) const {
    const std::int64_t n = emb.dim(0);
    Tensor<T> cos = cosines(emb);
    // cos(theta + m) = cos*cos(m) - sin*sin(m); past theta + m = pi fall back
    // to the monotone surrogate cos(theta) - m*sin(m).
    Tensor<T> sin = sqrt_(clamp_min(sub(Tensor<T>::filled({n, n_classes_}, T(1)),
                                        mul(cos, cos)),
                                    T(0)));
    Tensor<T> phi = sub(mul_scalar(cos, static_cast<T>(std::cos(m))),
                        mul_scalar(sin, static_cast<T>(std::sin(m))));
    Tensor<T> fallback =
        add_scalar(cos, static_cast<T>(-m * std::sin(m)));
    Tensor<T> guard = Tensor<T>::zeros({n, n_classes_});
    {
      NoGradGuard ng;
      const T thresh = static_cast<T>(-std::cos(m));
      for (std::int64_t i = 0; i < guard.numel(); ++i)
        guard.data()[i] = cos.data()[i] > thresh ? T(1) : T(0);
    }
    Tensor<T> margined = add(mul(guard, phi),
                             mul(sub(Tensor<T>::filled({n, n_classes_}, T(1)),
                                     guard),
                                 fallback));
    Tensor<T> oh = one_hot(n, labels);
    Tensor<T> inv = sub(Tensor<T>::filled({n, n_classes_}, T(1)), oh);
    Tensor<T> logits = mul_scalar(add(mul(oh, margined), mul(inv, cos)),
                                  static_cast<T>(cfg_.scale));
    return cross_entropy(logits, labels);
  }

  Tensor<T> sf2(const Tensor<T>& emb, const std::vector<std::int64_t>& labels,
                double m) const {
    const std::int64_t n = emb.dim(0);
    Tensor<T> z = cosines(emb);
    Tensor<T> g = z;
    if (cfg_.kind == LossKind::Sf2C) {
      // g(z) = 2*((z+1)/2)^t - 1, computed by repeated multiplication so the
      // endpoints g(-1) = -1 and g(1) = 1 are exact.
      Tensor<T> base = mul_scalar(add_scalar(z, T(1)), T(0.5));
      g = add_scalar(mul_scalar(detail::powi(base, cfg_.t), T(2)), T(-1));
    }
    const T r = static_cast<T>(cfg_.scale);
    Tensor<T> b = reshape(bias_, {1, 1});
    // Positive: (lambda/r) * log(1+exp(-(r*(g - m) + b)))
    // Negative: ((1-lambda)/r) * log(1+exp(r*(g + m) + b))
    Tensor<T> pos =
        softplus(neg(add(mul_scalar(add_scalar(g, static_cast<T>(-m)), r), b)));
    Tensor<T> negt =
        softplus(add(mul_scalar(add_scalar(g, static_cast<T>(m)), r), b));
    Tensor<T> oh = one_hot(n, labels);
    Tensor<T> inv = sub(Tensor<T>::filled({n, n_classes_}, T(1)), oh);
    const T lam = static_cast<T>(cfg_.lambda);
    Tensor<T> per_class = add(mul_scalar(mul(oh, pos), lam / r),
                              mul_scalar(mul(inv, negt), (T(1) - lam) / r));
    return mean_all(sum(per_class, {1}));
  }

  std::int64_t n_classes_ = 0, emb_dim_ = 0, k_ = 1;
  LossConfig cfg_;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

}  // namespace redimnet
