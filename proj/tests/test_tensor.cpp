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

#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <vector>

#include "redimnet/gradcheck.hpp"
#include "redimnet/tensor.hpp"

using namespace redimnet;

namespace {

using D = Tensor<double>;

D leaf(const Shape& shape, std::vector<double> v) {
  return D::from_data(shape, std::move(v), /*requires_grad=*/true);
}

// Random leaf with values kept away from activation kinks so that central
// differences stay well conditioned.
D rand_leaf(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  D t = D::rand_uniform(shape, rng, lo, hi, /*requires_grad=*/true);
  for (auto& v : t.data())
    if (std::abs(v) < 0.05) v += v >= 0.0 ? 0.1 : -0.1;
  return t;
}

void check_close(std::span<const double> got, const std::vector<double>& want,
                 double tol = 1e-9) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    INFO("index " << i);
    REQUIRE(got[i] == Catch::Approx(want[i]).margin(tol));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction and bookkeeping
// ---------------------------------------------------------------------------

TEST_CASE("tensor construction and accessors", "[tensor]") {
  auto t = Tensor<float>::zeros({2, 3});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.shape() == Shape{2, 3});
  REQUIRE(t.rank() == 2);
  REQUIRE(t.dim(-1) == 3);

  auto s = Tensor<float>::scalar(4.0f);
  REQUIRE(s.item() == 4.0f);
  REQUIRE_THROWS_AS(t.item(), UsageError);

  REQUIRE_THROWS_AS(Tensor<float>::from_data({2, 2}, {1.f, 2.f, 3.f}),
                    ConfigError);
}

TEST_CASE("backward requires a scalar", "[tensor]") {
  auto x = leaf({2}, {1.0, 2.0});
  auto y = mul_scalar(x, 2.0);
  REQUIRE_THROWS_AS(y.backward(), UsageError);
}

TEST_CASE("no grad guard suppresses graph recording", "[tensor]") {
  auto x = leaf({2}, {1.0, 2.0});
  {
    NoGradGuard ng;
    auto y = mul_scalar(x, 3.0);
    REQUIRE_FALSE(y.requires_grad());
    REQUIRE(y.is_leaf());
  }
  auto y = mul_scalar(x, 3.0);
  REQUIRE(y.requires_grad());
  REQUIRE_FALSE(y.is_leaf());
}

TEST_CASE("assert_finite reports first bad index", "[tensor]") {
  auto x = D::from_data({3}, {1.0, std::nan(""), 2.0});
  REQUIRE_THROWS_AS(assert_finite(x, "test"), NumericError);
}

// ---------------------------------------------------------------------------
// Elementwise ops: frozen forward values
// ---------------------------------------------------------------------------

TEST_CASE("broadcast add/sub/mul/div forward", "[tensor]") {
  auto a = D::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = D::from_data({1, 3}, {10, 20, 30});
  check_close(add(a, b).data(), {11, 22, 33, 14, 25, 36});
  check_close(sub(a, b).data(), {-9, -18, -27, -6, -15, -24});

  auto c = D::from_data({2, 1}, {2, 3});
  check_close(mul(a, c).data(), {2, 4, 6, 12, 15, 18});
  check_close(div(a, c).data(), {0.5, 1.0, 1.5, 4.0 / 3, 5.0 / 3, 2.0});

  // Equal-rank rule: rank mismatch and incompatible extents both reject.
  auto d = D::from_data({3}, {1, 2, 3});
  REQUIRE_THROWS_AS(add(a, d), ConfigError);
  auto e = D::from_data({2, 2}, {1, 2, 3, 4});
  REQUIRE_THROWS_AS(add(a, e), ConfigError);
}

TEST_CASE("unary op values", "[tensor]") {
  auto x = D::from_data({5}, {-2.0, -0.5, 0.0, 0.5, 1.0});
  check_close(relu(x).data(), {0.0, 0.0, 0.0, 0.5, 1.0});
  // GELU in the exact erf form: gelu(1) = 0.5 * (1 + erf(1/sqrt(2))).
  check_close(gelu(x).data(),
              {-0.04550026389635842, -0.15426876936299347, 0.0,
               0.3457312306370065, 0.8413447460685429},
              1e-12);
  check_close(sigmoid(D::from_data({1}, {0.0})).data(), {0.5});
  check_close(tanh_(x).data(),
              {std::tanh(-2.0), std::tanh(-0.5), 0.0, std::tanh(0.5),
               std::tanh(1.0)});
  check_close(softplus(D::from_data({2}, {0.0, -2.0})).data(),
              {0.6931471805599453, 0.12692801104297263}, 1e-12);
  // softplus stays finite far outside the naive exp range.
  auto big = softplus(D::from_data({2}, {800.0, -800.0}));
  REQUIRE(big.data()[0] == Catch::Approx(800.0));
  REQUIRE(big.data()[1] == Catch::Approx(0.0).margin(1e-12));
  check_close(clamp_min(x, 0.25).data(), {0.25, 0.25, 0.25, 0.5, 1.0});
  check_close(exp_(D::from_data({1}, {1.0})).data(), {2.718281828459045},
              1e-12);
  check_close(log_(D::from_data({1}, {2.718281828459045})).data(), {1.0},
              1e-12);
  check_close(sqrt_(D::from_data({1}, {9.0})).data(), {3.0}, 1e-12);
  check_close(neg(D::from_data({2}, {1.0, -2.0})).data(), {-1.0, 2.0});
  check_close(add_scalar(D::from_data({2}, {1.0, 2.0}), 0.5).data(),
              {1.5, 2.5});
  check_close(mul_scalar(D::from_data({2}, {1.0, 2.0}), -2.0).data(),
              {-2.0, -4.0});
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

TEST_CASE("sum / mean / max_axis forward", "[tensor]") {
  auto x = D::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  check_close(sum(x, {1}).data(), {6, 15});
  check_close(sum(x, {0}).data(), {5, 7, 9});
  check_close(sum(x, {0, 1}).data(), {21});
  REQUIRE(sum(x, {1}, /*keepdim=*/true).shape() == Shape{2, 1});
  check_close(mean(x, {1}).data(), {2, 5});
  check_close(mean_all(x).data(), {3.5});
  check_close(sum_all(x).data(), {21});

  auto m = max_axis(x, 1);
  check_close(m.data(), {3, 6});
  REQUIRE(max_axis(x, 0, /*keepdim=*/true).shape() == Shape{1, 3});
  REQUIRE_THROWS_AS(sum(x, {2}), ConfigError);
}

TEST_CASE("max_axis ties route gradient to first maximum", "[tensor]") {
  auto x = leaf({1, 3}, {2.0, 5.0, 5.0});
  auto y = sum_all(max_axis(x, 1));
  y.backward();
  check_close(x.grad(), {0.0, 1.0, 0.0});
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy
// ---------------------------------------------------------------------------

TEST_CASE("softmax values and invariance to shift", "[tensor]") {
  auto x = D::from_data({1, 3}, {1, 2, 3});
  check_close(softmax(x, 1).data(),
              {0.09003057317038046, 0.24472847105479767, 0.6652409557748219},
              1e-12);
  // Max subtraction keeps huge logits finite.
  auto big = softmax(D::from_data({1, 2}, {1000.0, 1001.0}), 1);
  REQUIRE(std::isfinite(big.data()[0]));
  REQUIRE(big.data()[1] == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("cross_entropy matches log-sum-exp by hand", "[tensor]") {
  auto logits = D::from_data({1, 3}, {1, 2, 3});
  auto loss = cross_entropy(logits, {2});
  // log(e^1 + e^2 + e^3) - 3
  REQUIRE(loss.item() == Catch::Approx(0.40760596444438080).epsilon(1e-12));

  auto two = cross_entropy(D::from_data({2, 2}, {0, 0, 0, 0}),
                           std::vector<std::int64_t>{0, 1});
  REQUIRE(two.item() == Catch::Approx(std::log(2.0)).epsilon(1e-12));

  REQUIRE_THROWS_AS(cross_entropy(logits, {3}), InputError);
  REQUIRE_THROWS_AS(cross_entropy(logits, {-1}), InputError);
  REQUIRE_THROWS_AS(
      cross_entropy(logits, std::vector<std::int64_t>{0, 1}), InputError);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

TEST_CASE("reshape is a bit-exact row-major bijection", "[tensor]") {
  Rng rng(7);
  auto x = Tensor<float>::rand_uniform({4, 6, 5}, rng, -3.f, 3.f);
  auto y = reshape(x, {2, 2, 30});
  auto z = reshape(y, {4, 6, 5});
  REQUIRE(std::memcmp(x.data().data(), z.data().data(),
                      sizeof(float) * static_cast<std::size_t>(x.numel())) == 0);
  REQUIRE_THROWS_AS(reshape(x, Shape{4, 6, 6}), ConfigError);
}

TEST_CASE("permute transposes", "[tensor]") {
  auto x = D::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto y = permute(x, {1, 0});
  REQUIRE(y.shape() == Shape{3, 2});
  check_close(y.data(), {1, 4, 2, 5, 3, 6});
  REQUIRE_THROWS_AS(permute(x, {0, 0}), ConfigError);
  REQUIRE_THROWS_AS(permute(x, {0}), ConfigError);
}

TEST_CASE("concat along either axis", "[tensor]") {
  auto a = D::from_data({2, 2}, {1, 2, 3, 4});
  auto b = D::from_data({1, 2}, {5, 6});
  auto y0 = concat<double>({a, b}, 0);
  REQUIRE(y0.shape() == Shape{3, 2});
  check_close(y0.data(), {1, 2, 3, 4, 5, 6});

  auto c = D::from_data({2, 1}, {7, 8});
  auto y1 = concat<double>({a, c}, 1);
  REQUIRE(y1.shape() == Shape{2, 3});
  check_close(y1.data(), {1, 2, 7, 3, 4, 8});
  REQUIRE_THROWS_AS(concat<double>({a, b}, 1), ConfigError);
}

// ---------------------------------------------------------------------------
// linear / matmul / conv
// ---------------------------------------------------------------------------

TEST_CASE("linear forward oracle", "[tensor]") {
  auto x = D::from_data({1, 2}, {1, 2});
  auto w = D::from_data({2, 2}, {1, 2, 3, 4});
  auto b = D::from_data({2}, {10, 20});
  check_close(linear(x, w, b).data(), {15, 31});
  check_close(linear(x, w).data(), {5, 11});
  REQUIRE_THROWS_AS(linear(x, D::from_data({2, 3}, {1, 2, 3, 4, 5, 6}), b),
                    ConfigError);
}

TEST_CASE("matmul forward oracle", "[tensor]") {
  auto a = D::from_data({2, 2}, {1, 2, 3, 4});
  auto b = D::from_data({2, 2}, {5, 6, 7, 8});
  check_close(matmul(a, b).data(), {19, 22, 43, 50});

  // Batched case: identity in one batch element passes through.
  auto ab = D::from_data({2, 2, 2}, {1, 0, 0, 1, 1, 2, 3, 4});
  auto bb = D::from_data({2, 2, 2}, {5, 6, 7, 8, 1, 0, 0, 1});
  check_close(matmul(ab, bb).data(), {5, 6, 7, 8, 1, 2, 3, 4});
  REQUIRE_THROWS_AS(matmul(a, D::from_data({3, 2}, {1, 2, 3, 4, 5, 6})),
                    ConfigError);
}

TEST_CASE("conv1d forward oracle", "[tensor]") {
  // Moving sum with kernel of ones and zero padding.
  auto x = D::from_data({1, 1, 5}, {1, 2, 3, 4, 5});
  auto w = D::from_data({1, 1, 3}, {1, 1, 1});
  auto y = conv1d(x, w, nullptr, /*stride=*/1, /*pad=*/1, /*groups=*/1);
  REQUIRE(y.shape() == Shape{1, 1, 5});
  check_close(y.data(), {3, 6, 9, 12, 9});

  // Stride 2 keeps every other frame.
  auto y2 = conv1d(x, w, nullptr, 2, 1, 1);
  check_close(y2.data(), {3, 9, 9});

  // Grouped: two channels convolved independently by per-group kernels.
  auto xg = D::from_data({1, 2, 3}, {1, 2, 3, 10, 20, 30});
  auto wg = D::from_data({2, 1, 1}, {2, 0.5});
  auto yg = conv1d(xg, wg, nullptr, 1, 0, 2);
  check_close(yg.data(), {2, 4, 6, 5, 10, 15});
  REQUIRE_THROWS_AS(conv1d(xg, wg, nullptr, 1, 0, 4), ConfigError);
}

TEST_CASE("conv2d shapes and values", "[tensor]") {
  Rng rng(3);
  auto x = Tensor<float>::rand_uniform({2, 8, 9, 50}, rng, -1.f, 1.f);
  auto w = Tensor<float>::rand_uniform({16, 8, 3, 3}, rng, -0.1f, 0.1f);
  auto y = conv2d(x, w, nullptr, /*sh=*/2, /*sw=*/1, /*ph=*/1, /*pw=*/1, 1);
  REQUIRE(y.shape() == Shape{2, 16, 5, 50});

  // 2x2 average-style kernel on a known grid.
  auto xs = D::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto ws = D::from_data({1, 1, 2, 2}, {1, 1, 1, 1});
  auto ys = conv2d(xs, ws, nullptr, 1, 1, 0, 0, 1);
  REQUIRE(ys.shape() == Shape{1, 1, 1, 1});
  check_close(ys.data(), {10});

  auto bias = D::from_data({1}, {100.0});
  check_close(conv2d(xs, ws, bias, 1, 1, 0, 0, 1).data(), {110});

  // Kernel larger than padded input must reject.
  REQUIRE_THROWS_AS(conv2d(xs, D::from_data({1, 1, 5, 5}, std::vector<double>(25, 1.0)),
                           nullptr, 1, 1, 0, 0, 1),
                    ConfigError);
}

TEST_CASE("mac counter matches loop volume", "[tensor]") {
  NoGradGuard ng;
  MacCounter::enabled() = true;
  MacCounter::reset();
  Rng rng(11);

  auto x = D::rand_uniform({1, 2, 5}, rng, -1, 1);
  auto w = D::rand_uniform({3, 2, 3}, rng, -1, 1);
  conv1d(x, w, nullptr, 1, 1, 1);
  REQUIRE(MacCounter::count() == 1ull * 3 * 2 * 3 * 5);

  MacCounter::reset();
  auto a = D::rand_uniform({4, 2, 3}, rng, -1, 1);
  auto b = D::rand_uniform({4, 3, 5}, rng, -1, 1);
  matmul(a, b);
  REQUIRE(MacCounter::count() == 4ull * 2 * 3 * 5);

  MacCounter::reset();
  auto xl = D::rand_uniform({7, 6}, rng, -1, 1);
  auto wl = D::rand_uniform({9, 6}, rng, -1, 1);
  linear(xl, wl);
  REQUIRE(MacCounter::count() == 7ull * 9 * 6);

  MacCounter::enabled() = false;
  MacCounter::reset();
}

TEST_CASE("parallel_for result is independent of thread count", "[tensor]") {
  Rng rng(5);
  auto x = Tensor<float>::rand_uniform({4, 8, 16, 20}, rng, -1.f, 1.f);
  auto w = Tensor<float>::rand_uniform({8, 8, 3, 3}, rng, -0.2f, 0.2f);
  const int saved = num_threads();
  set_num_threads(1);
  auto y1 = conv2d(x, w, nullptr, 1, 1, 1, 1, 1);
  set_num_threads(4);
  auto y4 = conv2d(x, w, nullptr, 1, 1, 1, 1, 1);
  set_num_threads(saved);
  REQUIRE(std::memcmp(y1.data().data(), y4.data().data(),
                      sizeof(float) * static_cast<std::size_t>(y1.numel())) ==
          0);
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

TEST_CASE("layer_norm normalizes to zero mean unit variance", "[tensor]") {
  auto x = D::from_data({1, 3}, {1, 2, 3});
  auto gamma = D::from_data({3}, {1, 1, 1});
  auto beta = D::from_data({3}, {0, 0, 0});
  auto y = layer_norm(x, {1}, gamma, beta, 1e-6);
  // Biased variance 2/3: (3 - 2) / sqrt(2/3) = 1.2247448...
  check_close(y.data(), {-1.224744871, 0.0, 1.224744871}, 1e-5);

  auto g2 = D::from_data({3}, {2, 2, 2});
  auto b2 = D::from_data({3}, {1, 1, 1});
  auto y2 = layer_norm(x, {1}, g2, b2, 1e-6);
  check_close(y2.data(), {1 - 2 * 1.224744871, 1.0, 1 + 2 * 1.224744871}, 1e-4);
  REQUIRE_THROWS_AS(layer_norm(x, {1}, D::from_data({2}, {1, 1}), beta, 1e-6),
                    ConfigError);
  REQUIRE_THROWS_AS(layer_norm(x, {1}, gamma, beta, 0.0), ConfigError);
}

TEST_CASE("batch_norm training and eval statistics", "[tensor]") {
  // Two samples, one channel: values {1, 3} -> mean 2, biased var 1.
  auto x = D::from_data({2, 1}, {1, 3});
  auto gamma = D::from_data({1}, {1});
  auto beta = D::from_data({1}, {0});
  RunningStats<double> rs;
  rs.mean = D::zeros({1});
  rs.var = D::from_data({1}, {1.0});

  auto y = batch_norm(x, gamma, beta, &rs, /*training=*/true, 0.1, 1e-5);
  check_close(y.data(), {-0.9999950000374997, 0.9999950000374997}, 1e-9);
  // Running mean: 0.9*0 + 0.1*2 = 0.2; running var uses the unbiased
  // estimate 2: 0.9*1 + 0.1*2 = 1.1.
  REQUIRE(rs.mean.data()[0] == Catch::Approx(0.2));
  REQUIRE(rs.var.data()[0] == Catch::Approx(1.1));
  REQUIRE(rs.initialized);

  auto ye = batch_norm(x, gamma, beta, &rs, /*training=*/false, 0.1, 1e-5);
  REQUIRE(ye.data()[0] ==
          Catch::Approx((1.0 - 0.2) / std::sqrt(1.1 + 1e-5)));

  RunningStats<double> empty;
  empty.mean = D::zeros({1});
  empty.var = D::from_data({1}, {1.0});
  REQUIRE_THROWS_AS(
      batch_norm(x, gamma, beta, &empty, /*training=*/false, 0.1, 1e-5),
      StateError);
}

// ---------------------------------------------------------------------------
// Gradient checks (finite differences, double precision)
// ---------------------------------------------------------------------------

TEST_CASE("gradients: elementwise binary with broadcasting", "[gradcheck]") {
  for (std::uint64_t seed : {1ull, 2ull}) {
    Rng rng(seed);
    auto a = rand_leaf({2, 3}, rng);
    auto b = rand_leaf({1, 3}, rng, 0.5, 1.5);  // keep divisors away from 0
    for (auto* op : {"add", "sub", "mul", "div"}) {
      std::string name = op;
      auto fn = [&]() {
        D y;
        if (name == "add") y = add(a, b);
        if (name == "sub") y = sub(a, b);
        if (name == "mul") y = mul(a, b);
        if (name == "div") y = div(a, b);
        return sum_all(mul(y, y));
      };
      auto res = grad_check(fn, {a, b});
      INFO(name << ": " << res.to_string());
      REQUIRE(res.ok);
    }
  }
}

TEST_CASE("gradients: unary ops", "[gradcheck]") {
  Rng rng(3);
  auto x = rand_leaf({2, 4}, rng);
  auto xp = rand_leaf({2, 4}, rng, 0.5, 2.0);  // strictly positive domain

  auto check = [&](const char* name, std::function<D()> fn,
                   const std::vector<D>& leaves) {
    auto res = grad_check(fn, leaves);
    INFO(name << ": " << res.to_string());
    REQUIRE(res.ok);
  };

  check("relu", [&] { return sum_all(mul(relu(x), relu(x))); }, {x});
  check("gelu", [&] { return sum_all(gelu(x)); }, {x});
  check("sigmoid", [&] { return sum_all(mul(sigmoid(x), sigmoid(x))); }, {x});
  check("tanh", [&] { return sum_all(mul(tanh_(x), tanh_(x))); }, {x});
  check("exp", [&] { return sum_all(exp_(x)); }, {x});
  check("log", [&] { return sum_all(mul(log_(xp), log_(xp))); }, {xp});
  check("sqrt", [&] { return sum_all(mul(sqrt_(xp), log_(xp))); }, {xp});
  check("neg", [&] { return sum_all(mul(neg(x), x)); }, {x});
  check("softplus", [&] { return sum_all(mul(softplus(x), softplus(x))); },
        {x});
  check("clamp_min", [&] { return sum_all(mul(clamp_min(x, 0.25), x)); }, {x});
  check("add_scalar", [&] { return sum_all(mul(add_scalar(x, 0.7), x)); }, {x});
  check("mul_scalar", [&] { return sum_all(mul(mul_scalar(x, -1.3), x)); },
        {x});
}

TEST_CASE("gradients: reductions and softmax", "[gradcheck]") {
  Rng rng(4);
  auto x = rand_leaf({2, 3, 4}, rng);
  auto weights = rand_leaf({2, 3, 4}, rng);

  auto res = grad_check([&] { return sum_all(mul(x, x)); }, {x});
  INFO(res.to_string());
  REQUIRE(res.ok);

  res = grad_check(
      [&] { return sum_all(mul(mean(x, {1}, true), mean(x, {1}, true))); },
      {x});
  REQUIRE(res.ok);

  res = grad_check([&] { return sum_all(mul(max_axis(x, 2), max_axis(x, 2))); },
                   {x});
  REQUIRE(res.ok);

  res = grad_check([&] { return sum_all(mul(softmax(x, 1), weights)); },
                   {x, weights});
  REQUIRE(res.ok);
}

TEST_CASE("gradients: cross_entropy agrees with softmax composition",
          "[gradcheck]") {
  Rng rng(5);
  auto logits = rand_leaf({3, 4}, rng, -2.0, 2.0);
  std::vector<std::int64_t> labels{1, 3, 0};
  auto res =
      grad_check([&] { return cross_entropy(logits, labels); }, {logits});
  INFO(res.to_string());
  REQUIRE(res.ok);

  // Same loss through explicit log-softmax picking.
  logits.zero_grad();
  auto loss = cross_entropy(logits, labels);
  loss.backward();
  std::vector<double> g1(logits.grad().begin(), logits.grad().end());

  logits.zero_grad();
  auto p = softmax(logits, 1);
  auto mask = D::zeros({3, 4});
  for (std::size_t i = 0; i < labels.size(); ++i)
    mask.data()[i * 4 + static_cast<std::size_t>(labels[i])] = 1.0;
  auto loss2 = mul_scalar(sum_all(mul(log_(p), mask)), -1.0 / 3.0);
  REQUIRE(loss2.item() == Catch::Approx(loss.item()).epsilon(1e-12));
  loss2.backward();
  for (std::int64_t i = 0; i < logits.numel(); ++i)
    REQUIRE(logits.grad()[i] == Catch::Approx(g1[static_cast<std::size_t>(i)])
                                    .margin(1e-10));
}

TEST_CASE("gradients: shape ops", "[gradcheck]") {
  Rng rng(6);
  auto x = rand_leaf({2, 3, 4}, rng);
  auto y = rand_leaf({2, 2, 4}, rng);

  auto res = grad_check(
      [&] {
        auto r = reshape(x, {6, 4});
        return sum_all(mul(r, r));
      },
      {x});
  REQUIRE(res.ok);

  res = grad_check(
      [&] {
        auto p = permute(x, {2, 0, 1});
        return sum_all(mul(p, p));
      },
      {x});
  REQUIRE(res.ok);

  res = grad_check(
      [&] {
        auto c = concat<double>({x, y}, 1);
        return sum_all(mul(c, c));
      },
      {x, y});
  REQUIRE(res.ok);
}

TEST_CASE("gradients: linear / matmul", "[gradcheck]") {
  Rng rng(7);
  auto x = rand_leaf({3, 5}, rng);
  auto w = rand_leaf({4, 5}, rng);
  auto b = rand_leaf({4}, rng);
  auto res = grad_check(
      [&] {
        auto y = linear(x, w, b);
        return sum_all(mul(y, y));
      },
      {x, w, b});
  INFO(res.to_string());
  REQUIRE(res.ok);

  auto a = rand_leaf({2, 3, 4}, rng);
  auto c = rand_leaf({2, 4, 2}, rng);
  res = grad_check(
      [&] {
        auto y = matmul(a, c);
        return sum_all(mul(y, y));
      },
      {a, c});
  REQUIRE(res.ok);
}

TEST_CASE("gradients: conv1d and conv2d", "[gradcheck]") {
  Rng rng(8);
  // conv1d, groups 1 with bias.
  {
    auto x = rand_leaf({2, 3, 7}, rng);
    auto w = rand_leaf({4, 3, 3}, rng);
    auto b = rand_leaf({4}, rng);
    auto res = grad_check(
        [&] {
          auto y = conv1d(x, w, b, 1, 1, 1);
          return sum_all(mul(y, y));
        },
        {x, w, b});
    INFO(res.to_string());
    REQUIRE(res.ok);
  }
  // conv1d depthwise, stride 2.
  {
    auto x = rand_leaf({1, 4, 9}, rng);
    auto w = rand_leaf({4, 1, 3}, rng);
    auto res = grad_check(
        [&] {
          auto y = conv1d(x, w, nullptr, 2, 1, 4);
          return sum_all(mul(y, y));
        },
        {x, w});
    REQUIRE(res.ok);
  }
  // conv2d with stride (2,1), pad (1,1), groups 2.
  {
    auto x = rand_leaf({2, 4, 6, 5}, rng);
    auto w = rand_leaf({6, 2, 3, 3}, rng);
    auto b = rand_leaf({6}, rng);
    auto res = grad_check(
        [&] {
          auto y = conv2d(x, w, b, 2, 1, 1, 1, 2);
          return sum_all(mul(y, y));
        },
        {x, w, b});
    INFO(res.to_string());
    REQUIRE(res.ok);
  }
}

TEST_CASE("gradients: normalization", "[gradcheck]") {
  Rng rng(9);
  auto x = rand_leaf({2, 3, 4}, rng);
  auto gamma = rand_leaf({3}, rng, 0.5, 1.5);
  auto beta = rand_leaf({3}, rng);

  // layer_norm over the channel axis of a (N, C, T) map.
  auto res = grad_check(
      [&] {
        auto y = layer_norm(x, {1}, gamma, beta, 1e-6);
        return sum_all(mul(y, y));
      },
      {x, gamma, beta});
  INFO(res.to_string());
  REQUIRE(res.ok);

  // layer_norm over two axes at once.
  auto g2 = rand_leaf({3 * 4}, rng, 0.5, 1.5);
  auto b2 = rand_leaf({3 * 4}, rng);
  res = grad_check(
      [&] {
        auto y = layer_norm(x, {1, 2}, g2, b2, 1e-6);
        return sum_all(mul(y, y));
      },
      {x, g2, b2});
  REQUIRE(res.ok);

  // batch_norm in training mode (running stats are host state, not traced).
  res = grad_check(
      [&] {
        auto y = batch_norm(x, gamma, beta, nullptr, true, 0.1, 1e-5);
        return sum_all(mul(y, y));
      },
      {x, gamma, beta});
  INFO(res.to_string());
  REQUIRE(res.ok);
}

TEST_CASE("gradient accumulates across graph reuse", "[gradcheck]") {
  // s = sum((x + x) * x) = 2 * sum(x^2) -> ds/dx = 4x.
  auto x = leaf({3}, {1.0, -2.0, 0.5});
  auto s = sum_all(mul(add(x, x), x));
  s.backward();
  check_close(x.grad(), {4.0, -8.0, 2.0});

  // Backward twice accumulates again.
  auto s2 = sum_all(mul(add(x, x), x));
  s2.backward();
  check_close(x.grad(), {8.0, -16.0, 4.0});
}

// ---------------------------------------------------------------------------
// Remaining hand oracles
// ---------------------------------------------------------------------------

TEST_CASE("conv2d hand oracles: ones kernel, identity kernel, groups",
          "[tensor]") {
  // Nine ones against nine ones collapse to a single 9.0.
  auto ones9 = D::filled({1, 1, 3, 3}, 1.0);
  auto y9 = conv2d(ones9, ones9, nullptr, 1, 1, 0, 0, 1);
  REQUIRE(y9.shape() == Shape{1, 1, 1, 1});
  REQUIRE(y9.data()[0] == 9.0);

  // A 1x1 kernel of value 1 with Cin=Cout=g=1 is a bit-exact identity.
  Rng rng(31);
  auto x = Tensor<float>::rand_uniform({2, 1, 4, 5}, rng, -1.f, 1.f);
  auto eye = Tensor<float>::from_data({1, 1, 1, 1}, {1.0f});
  auto yi = conv2d(x, eye, nullptr, 1, 1, 0, 0, 1);
  REQUIRE(std::memcmp(yi.data().data(), x.data().data(),
                      sizeof(float) * static_cast<std::size_t>(x.numel())) ==
          0);

  // Grouped shape arithmetic: (9+2-3)/2+1 = 5 rows out.
  auto xg = Tensor<float>::rand_uniform({2, 8, 9, 50}, rng, -1.f, 1.f);
  auto wg = Tensor<float>::rand_uniform({16, 2, 3, 3}, rng, -0.1f, 0.1f);
  auto yg = conv2d(xg, wg, nullptr, 2, 1, 1, 1, /*groups=*/4);
  REQUIRE(yg.shape() == Shape{2, 16, 5, 50});
}

TEST_CASE("conv1d 1x1 unit kernel is the identity", "[tensor]") {
  Rng rng(32);
  auto x = Tensor<float>::rand_uniform({2, 1, 7}, rng, -1.f, 1.f);
  auto w = Tensor<float>::from_data({1, 1, 1}, {1.0f});
  auto y = conv1d(x, w, nullptr, 1, 0, 1);
  REQUIRE(std::memcmp(y.data().data(), x.data().data(),
                      sizeof(float) * static_cast<std::size_t>(x.numel())) ==
          0);
}

TEST_CASE("linear hand oracles: dot product, identity, batched", "[tensor]") {
  check_close(linear(D::from_data({1, 2}, {1, 2}),
                     D::from_data({1, 2}, {1, 1}))
                  .data(),
              {3.0});

  auto x = D::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto eye = D::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  check_close(linear(x, eye).data(), {1, 2, 3, 4, 5, 6});

  Rng rng(33);
  auto xb = Tensor<float>::rand_uniform({4, 7, 16}, rng, -1.f, 1.f);
  auto wb = Tensor<float>::rand_uniform({8, 16}, rng, -1.f, 1.f);
  REQUIRE(linear(xb, wb).shape() == Shape{4, 7, 8});
}

TEST_CASE("softmax of log-integers recovers the ratios", "[tensor]") {
  auto x = D::from_data(
      {1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
  check_close(softmax(x, 1).data(), {1.0 / 6, 2.0 / 6, 3.0 / 6}, 1e-12);
}

TEST_CASE("gradient passes unchanged through an identity conv", "[gradcheck]") {
  auto x = leaf({1, 1, 2, 3}, {1, -2, 3, -4, 5, -6});
  auto eye = D::from_data({1, 1, 1, 1}, {1.0});
  auto probe = D::from_data({1, 1, 2, 3}, {0.5, 1.5, -2.0, 0.25, -1.0, 3.0});
  auto s = sum_all(mul(conv2d(x, eye, nullptr, 1, 1, 0, 0, 1), probe));
  s.backward();
  check_close(x.grad(), {0.5, 1.5, -2.0, 0.25, -1.0, 3.0});
}

TEST_CASE("layer/batch norm identity oracles", "[tensor]") {
  // Constant input under layer norm collapses to beta.
  auto xc = D::filled({2, 4}, 3.25);
  auto g = D::filled({4}, 1.0);
  auto b = D::zeros({4});
  auto y = layer_norm(xc, {1}, g, b, 1e-6);
  for (std::int64_t i = 0; i < y.numel(); ++i)
    REQUIRE(std::abs(y.data()[i]) < 1e-9);

  // Batch-eval with identity running stats is the identity map.
  RunningStats<double> rs;
  rs.mean = D::zeros({4});
  rs.var = D::filled({4}, 1.0);
  rs.initialized = true;
  auto x = D::from_data({2, 4}, {1, -2, 3, -4, 5, -6, 7, -8});
  auto ye = batch_norm(x, g, b, &rs, /*training=*/false, 0.1, 1e-5);
  for (std::int64_t i = 0; i < x.numel(); ++i)
    REQUIRE(ye.data()[i] == Catch::Approx(x.data()[i]).margin(1e-4));
}
