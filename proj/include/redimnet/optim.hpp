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
#include <vector>

#include "redimnet/layers.hpp"
#include "redimnet/tensor.hpp"

namespace redimnet {

// SGD with Nesterov momentum and decoupled-from-nothing classic L2 weight
// decay folded into the gradient. Per parameter p with gradient grad:
//
//   g <- grad + wd * p
//   v <- mu * v + g
//   p <- p - lr * (g + mu * v)
//
// One velocity buffer per parameter, zero-initialized. Buffers in the
// parameter list (batch-norm running statistics) are not optimized.
template <typename T>
class SgdNesterov {
 public:
  explicit SgdNesterov(const ParamList<T>& params, double momentum = 0.9,
                       double weight_decay = 2e-5)
      : momentum_(momentum), weight_decay_(weight_decay) {
    if (momentum < 0.0 || momentum >= 1.0)
      throw ConfigError("SgdNesterov: momentum must be in [0,1), got " +
                        std::to_string(momentum));
    if (weight_decay < 0.0)
      throw ConfigError("SgdNesterov: weight decay must be >= 0");
    for (const auto& p : params)
      if (!p.is_buffer) params_.push_back(p.tensor);
    velocity_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i)
      velocity_[i].assign(static_cast<std::size_t>(params_[i]->numel()), T(0));
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  // Applies one update with the given learning rate. Parameters whose
  // gradient was never touched this step are treated as having zero
  // gradient (weight decay and momentum still apply).
  void step(double lr) {
    const T mu = static_cast<T>(momentum_);
    const T wd = static_cast<T>(weight_decay_);
    const T eta = static_cast<T>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      auto pd = p->data();
      auto gd = p->grad();
      if (static_cast<std::int64_t>(velocity_[i].size()) != p->numel() ||
          static_cast<std::int64_t>(gd.size()) != p->numel())
        throw StateError("SgdNesterov: parameter/gradient size mismatch at " +
                         std::to_string(i));
      T* v = velocity_[i].data();
      for (std::int64_t k = 0; k < p->numel(); ++k) {
        const T g = gd[k] + wd * pd[k];
        v[k] = mu * v[k] + g;
        pd[k] -= eta * (g + mu * v[k]);
      }
    }
  }

  std::size_t size() const { return params_.size(); }

 private:
  std::vector<Tensor<T>*> params_;
  std::vector<std::vector<T>> velocity_;
  double momentum_;
  double weight_decay_;
};

// Exponential decay with linear warmup. Warmup climbs lr_min -> lr_max over
// `warmup` epochs; afterwards lr(e) = lr_max * (lr_min/lr_max)^((e-w)/(E-w)),
// hitting lr_min exactly at the final epoch. `epoch` may be fractional so
// the trainer can evaluate it per step.
inline double lr_schedule(double epoch, double lr_min, double lr_max,
                          int warmup, int total_epochs) {
  if (lr_min <= 0.0 || lr_max < lr_min)
    throw ConfigError("lr_schedule: need 0 < lr_min <= lr_max");
  if (warmup < 0 || warmup >= total_epochs)
    throw ConfigError("lr_schedule: need 0 <= warmup < total epochs");
  if (epoch <= 0.0) return lr_min;
  if (epoch < static_cast<double>(warmup))
    return lr_min + (lr_max - lr_min) * epoch / static_cast<double>(warmup);
  const double span = static_cast<double>(total_epochs - warmup);
  const double u = (epoch - static_cast<double>(warmup)) / span;
  return lr_max * std::pow(lr_min / lr_max, u < 1.0 ? u : 1.0);
}

}  // namespace redimnet
