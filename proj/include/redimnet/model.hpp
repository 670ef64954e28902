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

#include "redimnet/blocks.hpp"

namespace redimnet {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct StageSpec {
  std::int64_t sf = 1;    // frequency stride of this stage
  std::int64_t mult = 1;  // cumulative channel multiplier after this stage
  std::int64_t n2d = 1;   // number of 2D residual sub-blocks
  Block2DKind kind2d = Block2DKind::ConvNeXt2d;
  Block1DKind kind1d = Block1DKind::Conv1d;
};

struct ModelConfig {
  std::int64_t c = 12;             // base channel count
  std::int64_t f = 72;             // mel bins
  std::int64_t embedding_dim = 192;
  std::int64_t heads = 4;          // attention heads in 1D MHA blocks
  std::int64_t pool_attn_dim = 128;
  std::vector<StageSpec> stages;

  // The five-stage schedule with strides [1,2,2,2,1] and channel multipliers
  // [1,2,4,8,8] so every stage preserves the volume C*F*T.
  static ModelConfig defaults() {
    ModelConfig cfg;
    cfg.stages = {
        {1, 1, 2, Block2DKind::ConvNeXt2d, Block1DKind::Conv1d},
        {2, 2, 2, Block2DKind::ConvNeXt2d, Block1DKind::Conv1d},
        {2, 4, 2, Block2DKind::ConvNeXt2d, Block1DKind::Conv1d},
        {2, 8, 2, Block2DKind::ConvNeXt2d, Block1DKind::Conv1dMha},
        {1, 8, 2, Block2DKind::ConvNeXt2d, Block1DKind::Conv1dMha},
    };
    return cfg;
  }
};

struct StageShapeRow {
  int index = 0;  // 1-based, matching the published table
  std::int64_t c_in = 0, f_in = 0;
  std::int64_t sf = 1;
  std::int64_t c_out = 0, f_out = 0;
  std::int64_t volume = 0;  // C*F, constant across rows (per timestep)
};

// The channel growth must track the cumulative frequency stride exactly;
// that equality is what keeps the folded 1D width constant.
inline void validate(const ModelConfig& cfg) {
  if (cfg.c < 1 || cfg.f < 1 || cfg.embedding_dim < 1)
    throw ConfigError("model: c, f, embedding_dim must be positive");
  if (cfg.stages.empty()) throw ConfigError("model: at least one stage");
  std::int64_t stride_prod = 1;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    if (s.sf < 1 || s.mult < 1 || s.n2d < 0)
      throw ConfigError("model: stage " + std::to_string(i + 1) +
                        " has non-positive sf/mult or negative n2d");
    stride_prod *= s.sf;
    if (s.mult != stride_prod)
      throw ConfigError(
          "model: stage " + std::to_string(i + 1) + " violates the volume " +
          "constraint: cumulative multiplier " + std::to_string(s.mult) +
          " != cumulative frequency stride " + std::to_string(stride_prod));
  }
  if (cfg.f % stride_prod != 0)
    throw ConfigError("model: F=" + std::to_string(cfg.f) +
                      " not divisible by total stride " +
                      std::to_string(stride_prod));
}

inline std::vector<StageShapeRow> stage_shapes(const ModelConfig& cfg) {
  validate(cfg);
  std::vector<StageShapeRow> rows;
  std::int64_t c = cfg.c, f = cfg.f;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    StageShapeRow r;
    r.index = static_cast<int>(i + 1);
    r.c_in = c;
    r.f_in = f;
    r.sf = s.sf;
    r.c_out = cfg.c * s.mult;
    r.f_out = f / s.sf;
    r.volume = r.c_out * r.f_out;
    rows.push_back(r);
    c = r.c_out;
    f = r.f_out;
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename T>
class Model {
 public:
  Model() = default;

  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    validate(cfg_);
    Rng rng(seed);
    stem_conv_ = Conv2dLayer<T>(1, cfg_.c, 3, 3, 1, 1, 1, 1, 1, rng,
                                /*with_bias=*/false);
    stem_bn_ = BatchNormLayer<T>(cfg_.c);
    const std::int64_t width = cfg_.c * cfg_.f;
    const auto rows = stage_shapes(cfg_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      const auto& s = cfg_.stages[i];
      blocks2d_.emplace_back(r.c_in, r.c_out, r.f_in, r.sf, s.n2d, s.kind2d,
                             rng);
      blocks1d_.emplace_back(width, s.kind1d, cfg_.heads, rng);
      if (r.c_out * r.f_out != width)
        throw ConfigError("model: stage " + std::to_string(i + 1) +
                          " breaks the constant 1D width");
    }
    pool_ = AttStatsPool<T>(width, cfg_.pool_attn_dim, rng);
    head_linear_ = LinearLayer<T>(2 * width, cfg_.embedding_dim, rng);
    head_bn_ = BatchNormLayer<T>(cfg_.embedding_dim);
  }

  // features: (N, F, T) -> embeddings (N, embedding_dim).
  Tensor<T> forward(const Tensor<T>& features, bool training = false) {
    if (features.rank() != 3 || features.dim(1) != cfg_.f)
      throw InputError("model: expected features (N," + std::to_string(cfg_.f) +
                       ",T), got " + shape_str(features.shape()));
    const std::int64_t n = features.dim(0), t = features.dim(2);
    Tensor<T> x = reshape(features, {n, 1, cfg_.f, t});
    x = gelu(stem_bn_.forward(stem_conv_.forward(x), training));
    Tensor<T> acc = to_1d(x);  // (N, C*F, T), the running residual sum
    const auto rows = stage_shapes(cfg_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Tensor<T> x2d = to_2d(acc, rows[i].c_in, rows[i].f_in);
      Tensor<T> y = blocks2d_[i].forward(x2d, training);
      Tensor<T> z = blocks1d_[i].forward(to_1d(y));
      acc = add(acc, z);
    }
    Tensor<T> pooled = pool_.forward(acc);
    Tensor<T> emb = head_bn_.forward(head_linear_.forward(pooled), training);
    return emb;
  }

  ParamList<T> named_params() {
    ParamList<T> out;
    stem_conv_.collect("stem.conv", out);
    stem_bn_.collect("stem.bn", out);
    for (std::size_t i = 0; i < blocks2d_.size(); ++i) {
      const std::string p = "stages." + std::to_string(i);
      blocks2d_[i].collect(p + ".2d", out);
      blocks1d_[i].collect(p + ".1d", out);
    }
    pool_.collect("pool", out);
    head_linear_.collect("head.linear", out);
    head_bn_.collect("head.bn", out);
    return out;
  }

  // Learnable scalars only; running statistics are buffers.
  std::int64_t count_params() {
    std::int64_t n = 0;
    for (const auto& p : named_params())
      if (!p.is_buffer) n += p.tensor->numel();
    return n;
  }

  // Closed-form multiply-accumulate count for a single utterance of t frames
  // (batch 1). Counts convolutions, linears, and attention matmuls;
  // normalizations, activations, softmax, and the weighted statistics are
  // excluded. Must equal count_macs_instrumented exactly.
  std::uint64_t count_macs_analytic(std::int64_t t) const {
    std::uint64_t m = stem_conv_.macs(cfg_.f, t);
    for (std::size_t i = 0; i < blocks2d_.size(); ++i)
      m += blocks2d_[i].macs(t) + blocks1d_[i].macs(t);
    m += pool_.macs(t);
    m += head_linear_.macs(1);
    return m;
  }

  // Runs an eval-mode forward pass with the kernel-level counter enabled.
  std::uint64_t count_macs_instrumented(std::int64_t t) {
    NoGradGuard ng;
    Tensor<T> probe = Tensor<T>::zeros({1, cfg_.f, t});
    MacCounter::reset();
    MacCounter::enabled() = true;
    forward(probe, /*training=*/false);
    MacCounter::enabled() = false;
    const std::uint64_t n = MacCounter::count();
    MacCounter::reset();
    return n;
  }

  const ModelConfig& config() const { return cfg_; }
  AttStatsPool<T>& pool() { return pool_; }
  Block2d<T>& block2d(std::size_t i) { return blocks2d_[i]; }
  Block1d<T>& block1d(std::size_t i) { return blocks1d_[i]; }

 private:
  ModelConfig cfg_;
  Conv2dLayer<T> stem_conv_;
  BatchNormLayer<T> stem_bn_;
  std::vector<Block2d<T>> blocks2d_;
  std::vector<Block1d<T>> blocks1d_;
  AttStatsPool<T> pool_;
  LinearLayer<T> head_linear_;
  BatchNormLayer<T> head_bn_;
};

}  // namespace redimnet
