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

#include "redimnet/layers.hpp"

namespace redimnet {

// ---------------------------------------------------------------------------
// Invertible reshape between 2D maps (N,C,F,T) and 1D maps (N,C*F,T).
// Row-major fold: (c,f) -> c*F + f; the time axis is untouched, so the pair
// is bijective and bit-exact in both directions.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> to_1d(const Tensor<T>& x) {
  if (x.rank() != 4)
    throw ConfigError("to_1d expects (N,C,F,T), got " + shape_str(x.shape()));
  return reshape(x, {x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
}

template <typename T>
Tensor<T> to_2d(const Tensor<T>& x, std::int64_t c, std::int64_t f) {
  if (x.rank() != 3)
    throw ConfigError("to_2d expects (N,D,T), got " + shape_str(x.shape()));
  if (c * f != x.dim(1))
    throw ConfigError("to_2d: requested " + std::to_string(c) + "x" +
                      std::to_string(f) + " = " + std::to_string(c * f) +
                      " does not match 1D width " + std::to_string(x.dim(1)));
  return reshape(x, {x.dim(0), c, f, x.dim(2)});
}

// ---------------------------------------------------------------------------
// Block kinds
// ---------------------------------------------------------------------------

enum class Block2DKind { ConvNeXt2d, ResNetBasic2d, FwSEResNet2d };
enum class Block1DKind { Skip, Fc, Conv1d, Mha, Conv1dMha };

inline Block2DKind block2d_kind_from_string(const std::string& s) {
  if (s == "convnext2d") return Block2DKind::ConvNeXt2d;
  if (s == "resnet_basic2d") return Block2DKind::ResNetBasic2d;
  if (s == "fwse_resnet2d") return Block2DKind::FwSEResNet2d;
  throw ConfigError("unknown 2D block kind: " + s);
}
inline std::string to_string(Block2DKind k) {
  switch (k) {
    case Block2DKind::ConvNeXt2d: return "convnext2d";
    case Block2DKind::ResNetBasic2d: return "resnet_basic2d";
    case Block2DKind::FwSEResNet2d: return "fwse_resnet2d";
  }
  return "?";
}
inline Block1DKind block1d_kind_from_string(const std::string& s) {
  if (s == "skip") return Block1DKind::Skip;
  if (s == "fc") return Block1DKind::Fc;
  if (s == "conv1d") return Block1DKind::Conv1d;
  if (s == "mha") return Block1DKind::Mha;
  if (s == "conv1d+mha") return Block1DKind::Conv1dMha;
  throw ConfigError("unknown 1D block kind: " + s);
}
inline std::string to_string(Block1DKind k) {
  switch (k) {
    case Block1DKind::Skip: return "skip";
    case Block1DKind::Fc: return "fc";
    case Block1DKind::Conv1d: return "conv1d";
    case Block1DKind::Mha: return "mha";
    case Block1DKind::Conv1dMha: return "conv1d+mha";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// 2D residual sub-blocks (shape preserving)
// ---------------------------------------------------------------------------

// ConvNeXt-style: depthwise 3x3 -> channel layer norm -> pointwise expand 4x
// -> GELU -> pointwise project (zero-initialized) -> residual.
template <typename T>
struct ConvNeXtSub2d {
  Conv2dLayer<T> dwconv;
  LayerNormLayer<T> norm;
  Conv2dLayer<T> pw1, pw2;

  ConvNeXtSub2d() = default;
  ConvNeXtSub2d(std::int64_t c, Rng& rng) {
    dwconv = Conv2dLayer<T>(c, c, 3, 3, 1, 1, 1, 1, /*groups=*/c, rng);
    norm = LayerNormLayer<T>(c, /*axis=*/1);
    pw1 = Conv2dLayer<T>(c, 4 * c, 1, 1, 1, 1, 0, 0, 1, rng);
    pw2 = Conv2dLayer<T>(4 * c, c, 1, 1, 1, 1, 0, 0, 1, rng,
                         /*with_bias=*/true, /*zero_init=*/true);
  }

  Tensor<T> forward(const Tensor<T>& x, bool /*training*/) {
    Tensor<T> h = norm.forward(dwconv.forward(x));
    h = pw2.forward(gelu(pw1.forward(h)));
    return add(x, h);
  }

  std::uint64_t macs(std::int64_t f, std::int64_t t) const {
    return dwconv.macs(f, t) + pw1.macs(f, t) + pw2.macs(f, t);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    dwconv.collect(prefix + ".dwconv", out);
    norm.collect(prefix + ".norm", out);
    pw1.collect(prefix + ".pw1", out);
    pw2.collect(prefix + ".pw2", out);
  }
};

// Basic ResNet block: conv3x3-BN-ReLU-conv3x3-BN (+ optional fwSE), residual
// sum, ReLU after the sum. The second BN's gamma starts at zero so the branch
// contributes nothing at initialization.
template <typename T>
struct ResNetSub2d {
  Conv2dLayer<T> conv1, conv2;
  BatchNormLayer<T> bn1, bn2;
  bool use_fwse = false;
  FwSE<T> fwse;

  ResNetSub2d() = default;
  ResNetSub2d(std::int64_t c, std::int64_t f, bool with_fwse, Rng& rng)
      : use_fwse(with_fwse) {
    conv1 = Conv2dLayer<T>(c, c, 3, 3, 1, 1, 1, 1, 1, rng, /*with_bias=*/false);
    bn1 = BatchNormLayer<T>(c);
    conv2 = Conv2dLayer<T>(c, c, 3, 3, 1, 1, 1, 1, 1, rng, /*with_bias=*/false);
    bn2 = BatchNormLayer<T>(c, /*zero_gamma=*/true);
    if (use_fwse) fwse = FwSE<T>(f, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> h = relu(bn1.forward(conv1.forward(x), training));
    h = bn2.forward(conv2.forward(h), training);
    if (use_fwse) h = fwse.forward(h);
    return relu(add(x, h));
  }

  std::uint64_t macs(std::int64_t f, std::int64_t t) const {
    std::uint64_t m = conv1.macs(f, t) + conv2.macs(f, t);
    if (use_fwse) m += fwse.macs();
    return m;
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    conv1.collect(prefix + ".conv1", out);
    bn1.collect(prefix + ".bn1", out);
    conv2.collect(prefix + ".conv2", out);
    bn2.collect(prefix + ".bn2", out);
    if (use_fwse) fwse.collect(prefix + ".fwse", out);
  }
};

// A full 2D stage block: optional downsampling head (strided 3x3 conv + BN)
// followed by n shape-preserving residual sub-blocks of one kind.
template <typename T>
struct Block2d {
  Block2DKind kind = Block2DKind::ConvNeXt2d;
  std::int64_t c_in = 0, c_out = 0, f_in = 0, f_out = 0;
  bool has_down = false;
  Conv2dLayer<T> down_conv;
  BatchNormLayer<T> down_bn;
  std::vector<ConvNeXtSub2d<T>> cnx;
  std::vector<ResNetSub2d<T>> res;

  Block2d() = default;
  Block2d(std::int64_t c_in_, std::int64_t c_out_, std::int64_t f_in_,
          std::int64_t sf, std::int64_t n_sub, Block2DKind kind_, Rng& rng)
      : kind(kind_), c_in(c_in_), c_out(c_out_), f_in(f_in_) {
    if (sf < 1) throw ConfigError("block2d: frequency stride must be >= 1");
    if (f_in % sf != 0)
      throw ConfigError("block2d: F_in=" + std::to_string(f_in) +
                        " not divisible by S_f=" + std::to_string(sf));
    f_out = f_in / sf;
    has_down = sf > 1 || c_in != c_out;
    if (has_down) {
      down_conv = Conv2dLayer<T>(c_in, c_out, 3, 3, /*sh=*/sf, /*sw=*/1,
                                 /*ph=*/1, /*pw=*/1, 1, rng,
                                 /*with_bias=*/false);
      down_bn = BatchNormLayer<T>(c_out);
    }
    for (std::int64_t i = 0; i < n_sub; ++i) {
      switch (kind) {
        case Block2DKind::ConvNeXt2d:
          cnx.emplace_back(c_out, rng);
          break;
        case Block2DKind::ResNetBasic2d:
          res.emplace_back(c_out, f_out, /*with_fwse=*/false, rng);
          break;
        case Block2DKind::FwSEResNet2d:
          res.emplace_back(c_out, f_out, /*with_fwse=*/true, rng);
          break;
      }
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    if (x.dim(1) != c_in || x.dim(2) != f_in)
      throw InputError("block2d: expected (N," + std::to_string(c_in) + "," +
                       std::to_string(f_in) + ",T), got " +
                       shape_str(x.shape()));
    Tensor<T> h = x;
    if (has_down) h = down_bn.forward(down_conv.forward(h), training);
    for (auto& b : cnx) h = b.forward(h, training);
    for (auto& b : res) h = b.forward(h, training);
    return h;
  }

  std::uint64_t macs(std::int64_t t) const {
    std::uint64_t m = 0;
    if (has_down) m += down_conv.macs(f_in, t);
    for (const auto& b : cnx) m += b.macs(f_out, t);
    for (const auto& b : res) m += b.macs(f_out, t);
    return m;
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    if (has_down) {
      down_conv.collect(prefix + ".down.conv", out);
      down_bn.collect(prefix + ".down.bn", out);
    }
    for (std::size_t i = 0; i < cnx.size(); ++i)
      cnx[i].collect(prefix + ".sub" + std::to_string(i), out);
    for (std::size_t i = 0; i < res.size(); ++i)
      res[i].collect(prefix + ".sub" + std::to_string(i), out);
  }
};

// ---------------------------------------------------------------------------
// 1D blocks over the constant-width map (N, D, T)
// ---------------------------------------------------------------------------

// ConvNeXt-style 1D sub-block with depthwise kernel 7.
template <typename T>
struct ConvNeXtSub1d {
  Conv1dLayer<T> dwconv;
  LayerNormLayer<T> norm;
  Conv1dLayer<T> pw1, pw2;

  ConvNeXtSub1d() = default;
  ConvNeXtSub1d(std::int64_t c, Rng& rng) {
    dwconv = Conv1dLayer<T>(c, c, 7, 1, 3, /*groups=*/c, rng);
    norm = LayerNormLayer<T>(c, /*axis=*/1);
    pw1 = Conv1dLayer<T>(c, 4 * c, 1, 1, 0, 1, rng);
    pw2 = Conv1dLayer<T>(4 * c, c, 1, 1, 0, 1, rng, /*with_bias=*/true,
                         /*zero_init=*/true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = norm.forward(dwconv.forward(x));
    h = pw2.forward(gelu(pw1.forward(h)));
    return add(x, h);
  }

  std::uint64_t macs(std::int64_t t) const {
    return dwconv.macs(t) + pw1.macs(t) + pw2.macs(t);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    dwconv.collect(prefix + ".dwconv", out);
    norm.collect(prefix + ".norm", out);
    pw1.collect(prefix + ".pw1", out);
    pw2.collect(prefix + ".pw2", out);
  }
};

// y = x + Expand(Temporal(Norm(Reduce(x)))). Reduce/Expand are 1x1 convs
// D -> D/8 -> D; the Expand conv starts at zero so the block is the identity
// at initialization. kind=skip carries no parameters and is exactly y = x.
template <typename T>
struct Block1d {
  Block1DKind kind = Block1DKind::Skip;
  std::int64_t width = 0, reduced = 0;
  Conv1dLayer<T> reduce;
  LayerNormLayer<T> norm;
  Conv1dLayer<T> fc;
  ConvNeXtSub1d<T> cnx;
  MhaEncoder<T> mha;
  Conv1dLayer<T> expand;

  Block1d() = default;
  Block1d(std::int64_t d, Block1DKind kind_, std::int64_t heads, Rng& rng)
      : kind(kind_), width(d) {
    if (kind == Block1DKind::Skip) return;
    if (d % 8 != 0)
      throw ConfigError("block1d: width " + std::to_string(d) +
                        " not divisible by 8 (reduction ratio)");
    reduced = d / 8;
    reduce = Conv1dLayer<T>(d, reduced, 1, 1, 0, 1, rng);
    norm = LayerNormLayer<T>(reduced, /*axis=*/1);
    switch (kind) {
      case Block1DKind::Fc:
        fc = Conv1dLayer<T>(reduced, reduced, 1, 1, 0, 1, rng);
        break;
      case Block1DKind::Conv1d:
        cnx = ConvNeXtSub1d<T>(reduced, rng);
        break;
      case Block1DKind::Mha:
        mha = MhaEncoder<T>(reduced, heads, rng);
        break;
      case Block1DKind::Conv1dMha:
        cnx = ConvNeXtSub1d<T>(reduced, rng);
        mha = MhaEncoder<T>(reduced, heads, rng);
        break;
      default:
        throw ConfigError("block1d: unknown kind");
    }
    expand = Conv1dLayer<T>(reduced, d, 1, 1, 0, 1, rng, /*with_bias=*/true,
                            /*zero_init=*/true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (kind == Block1DKind::Skip) return x;
    if (x.dim(1) != width)
      throw InputError("block1d: expected width " + std::to_string(width) +
                       ", got " + shape_str(x.shape()));
    Tensor<T> h = norm.forward(reduce.forward(x));
    switch (kind) {
      case Block1DKind::Fc:
        h = gelu(fc.forward(h));
        break;
      case Block1DKind::Conv1d:
        h = cnx.forward(h);
        break;
      case Block1DKind::Mha:
        h = mha.forward(h);
        break;
      case Block1DKind::Conv1dMha:
        h = mha.forward(cnx.forward(h));
        break;
      default:
        break;
    }
    return add(x, expand.forward(h));
  }

  std::uint64_t macs(std::int64_t t) const {
    if (kind == Block1DKind::Skip) return 0;
    std::uint64_t m = reduce.macs(t) + expand.macs(t);
    switch (kind) {
      case Block1DKind::Fc: m += fc.macs(t); break;
      case Block1DKind::Conv1d: m += cnx.macs(t); break;
      case Block1DKind::Mha: m += mha.macs(t); break;
      case Block1DKind::Conv1dMha: m += cnx.macs(t) + mha.macs(t); break;
      default: break;
    }
    return m;
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    if (kind == Block1DKind::Skip) return;
    reduce.collect(prefix + ".reduce", out);
    norm.collect(prefix + ".norm", out);
    switch (kind) {
      case Block1DKind::Fc:
        fc.collect(prefix + ".fc", out);
        break;
      case Block1DKind::Conv1d:
        cnx.collect(prefix + ".conv", out);
        break;
      case Block1DKind::Mha:
        mha.collect(prefix + ".mha", out);
        break;
      case Block1DKind::Conv1dMha:
        cnx.collect(prefix + ".conv", out);
        mha.collect(prefix + ".mha", out);
        break;
      default:
        break;
    }
    expand.collect(prefix + ".expand", out);
  }
};

}  // namespace redimnet
