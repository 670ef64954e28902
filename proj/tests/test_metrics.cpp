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

#include <algorithm>
#include <cmath>
#include <vector>

#include "redimnet/metrics.hpp"
#include "redimnet/rng.hpp"

using namespace redimnet;

namespace {

// Brute-force reference: recount both rates from scratch for every distinct
// threshold (plus one above the maximum), then apply the same declared
// interpolation rule. O(n^2), no shared code with the implementation.
std::vector<double> brute_thresholds(const ScoreSet& s) {
  std::vector<double> thr = s.scores;
  std::sort(thr.begin(), thr.end());
  thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
  thr.push_back(thr.back() + 1.0);
  return thr;
}

void brute_rates(const ScoreSet& s, double t, double* fnr, double* fpr) {
  int tgt = 0, non = 0, miss = 0, fa = 0;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    if (s.labels[i] == 1) {
      ++tgt;
      if (s.scores[i] < t) ++miss;
    } else {
      ++non;
      if (s.scores[i] >= t) ++fa;
    }
  }
  *fnr = static_cast<double>(miss) / tgt;
  *fpr = static_cast<double>(fa) / non;
}

double eer_oracle(const ScoreSet& s) {
  const auto thr = brute_thresholds(s);
  double pf = 0.0, pp = 0.0;
  brute_rates(s, thr[0], &pf, &pp);
  for (std::size_t i = 1; i < thr.size(); ++i) {
    double f = 0.0, p = 0.0;
    brute_rates(s, thr[i], &f, &p);
    const double da = pf - pp, db = f - p;
    if (da < 0.0 && db >= 0.0) {
      const double alpha = -da / (db - da);
      return (1.0 - alpha) * pf + alpha * f;
    }
    pf = f;
    pp = p;
  }
  return pf;
}

double min_dcf_oracle(const ScoreSet& s, double pt = 0.01) {
  const auto thr = brute_thresholds(s);
  const double norm = std::min(pt, 1.0 - pt);
  double best = 1e300;
  for (double t : thr) {
    double f = 0.0, p = 0.0;
    brute_rates(s, t, &f, &p);
    best = std::min(best, (f * pt + p * (1.0 - pt)) / norm);
  }
  return best;
}

ScoreSet random_set(Rng& rng, bool quantized) {
  ScoreSet s;
  const int nt = 2 + rng.uniform_int(20);
  const int nn = 2 + rng.uniform_int(20);
  for (int i = 0; i < nt + nn; ++i) {
    s.labels.push_back(i < nt ? 1 : 0);
    double v = rng.uniform(-1.0, 1.0);
    // Quantized sets force ties across and within classes.
    if (quantized) v = std::round(v * 4.0) / 4.0;
    s.scores.push_back(v);
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Cosine
// ---------------------------------------------------------------------------

TEST_CASE("cosine score on canonical vector pairs") {
  std::vector<double> a = {1.0, 2.0, -3.0};
  REQUIRE(cosine_score(a, a) == Catch::Approx(1.0).epsilon(1e-12));
  std::vector<double> nega = {-1.0, -2.0, 3.0};
  REQUIRE(cosine_score(a, nega) == Catch::Approx(-1.0).epsilon(1e-12));
  std::vector<double> e1 = {1.0, 0.0, 0.0}, e2 = {0.0, 1.0, 0.0};
  REQUIRE(cosine_score(e1, e2) == 0.0);
  std::vector<double> zero = {0.0, 0.0, 0.0};
  REQUIRE_THROWS_AS(cosine_score(a, zero), InputError);
  std::vector<double> shorter = {1.0, 2.0};
  REQUIRE_THROWS_AS(cosine_score(a, shorter), InputError);
}

// ---------------------------------------------------------------------------
// EER / minDCF hand examples
// ---------------------------------------------------------------------------

TEST_CASE("eer of perfectly separated scores is zero") {
  ScoreSet s{{1, 1, 0, 0}, {0.9, 0.8, 0.1, 0.2}};
  REQUIRE(eer(s) == 0.0);
  REQUIRE(min_dcf(s) == 0.0);
}

TEST_CASE("eer hand example crosses at one third") {
  ScoreSet s{{1, 1, 1, 0, 0, 0}, {0.8, 0.6, 0.4, 0.5, 0.3, 0.1}};
  REQUIRE(eer(s) == Catch::Approx(1.0 / 3.0).margin(1e-12));
  REQUIRE(min_dcf(s) == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("eer is symmetric under role swap with negated scores") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    ScoreSet s = random_set(rng, rep % 2 == 0);
    ScoreSet swapped;
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      swapped.labels.push_back(1 - s.labels[i]);
      swapped.scores.push_back(-s.scores[i]);
    }
    // Swapping roles turns misses into false accepts; with strict/inclusive
    // boundary conventions mirrored, EER may differ only by interpolation on
    // tied scores, so compare against the oracle on both.
    REQUIRE(eer(s) == Catch::Approx(eer_oracle(s)).margin(1e-12));
    REQUIRE(eer(swapped) == Catch::Approx(eer_oracle(swapped)).margin(1e-12));
  }
  // Tie-free case: exact symmetry.
  ScoreSet s{{1, 1, 0, 0}, {0.7, 0.2, 0.5, 0.4}};
  ScoreSet sw{{0, 0, 1, 1}, {-0.7, -0.2, -0.5, -0.4}};
  REQUIRE(eer(s) == Catch::Approx(eer(sw)).margin(1e-12));
}

TEST_CASE("single-class score sets are rejected") {
  ScoreSet all_t{{1, 1}, {0.5, 0.6}};
  REQUIRE_THROWS_AS(eer(all_t), InputError);
  ScoreSet all_n{{0, 0}, {0.5, 0.6}};
  REQUIRE_THROWS_AS(min_dcf(all_n), InputError);
  ScoreSet skew{{1, 0}, {0.5, std::nan("")}};
  REQUIRE_THROWS_AS(eer(skew), InputError);
  ScoreSet mismatch{{1, 0, 1}, {0.5, 0.6}};
  REQUIRE_THROWS_AS(eer(mismatch), InputError);
}

TEST_CASE("normalized minDCF never exceeds one") {
  Rng rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    ScoreSet s = random_set(rng, rep % 3 == 0);
    REQUIRE(min_dcf(s) <= 1.0 + 1e-9);
    REQUIRE(min_dcf(s) >= 0.0);
  }
}

// ---------------------------------------------------------------------------
// Oracle agreement and monotone invariance
// ---------------------------------------------------------------------------

TEST_CASE("eer and minDCF match the brute-force oracle") {
  Rng rng(7);
  for (int rep = 0; rep < 300; ++rep) {
    ScoreSet s = random_set(rng, rep % 2 == 0);
    REQUIRE(eer(s) == Catch::Approx(eer_oracle(s)).margin(1e-12));
    REQUIRE(min_dcf(s) == Catch::Approx(min_dcf_oracle(s)).margin(1e-12));
  }
}

TEST_CASE("metrics are invariant under strictly increasing score maps") {
  Rng rng(8);
  for (int rep = 0; rep < 40; ++rep) {
    ScoreSet s = random_set(rng, false);
    const double e0 = eer(s), d0 = min_dcf(s);
    const double a = rng.uniform(0.2, 3.0);
    const double b = rng.uniform(-1.0, 1.0);
    ScoreSet affine = s, cubic = s;
    for (auto& v : affine.scores) v = a * v + b;
    for (auto& v : cubic.scores) v = v * v * v + v;
    REQUIRE(eer(affine) == Catch::Approx(e0).margin(1e-12));
    REQUIRE(min_dcf(affine) == Catch::Approx(d0).margin(1e-12));
    REQUIRE(eer(cubic) == Catch::Approx(e0).margin(1e-12));
    REQUIRE(min_dcf(cubic) == Catch::Approx(d0).margin(1e-12));
  }
}

// ---------------------------------------------------------------------------
// AS-Norm
// ---------------------------------------------------------------------------

TEST_CASE("asnorm symmetric hand example evaluates to 2.0") {
  SideStats st{0.3, 0.1};
  REQUIRE(asnorm_score(0.5, st, st) == Catch::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("asnorm validates cohort size, topk, and degenerate spread") {
  std::vector<double> tiny = {0.1, 0.2};
  REQUIRE_THROWS_AS(topk_stats(tiny, 3, "enroll"), ConfigError);
  REQUIRE_THROWS_AS(topk_stats(tiny, 1, "enroll"), ConfigError);
  std::vector<double> flat = {0.5, 0.5, 0.5, 0.1};
  try {
    topk_stats(flat, 3, "test");
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    REQUIRE(std::string(e.what()).find("test") != std::string::npos);
  }
}

TEST_CASE("asnorm picks the topk largest cohort scores") {
  // topk=2 of {0.9, 0.7, -0.5, 0.1}: mean 0.8, sample std of {0.9,0.7}.
  std::vector<double> cohort = {0.1, 0.9, -0.5, 0.7};
  SideStats st = topk_stats(cohort, 2, "enroll");
  REQUIRE(st.mu == Catch::Approx(0.8).epsilon(1e-12));
  REQUIRE(st.sigma ==
          Catch::Approx(std::sqrt(0.02)).epsilon(1e-12));
}

TEST_CASE("asnorm with topk equal to cohort size is plain s-norm") {
  std::vector<double> cohort = {0.4, -0.2, 0.3, 0.1};
  SideStats st = topk_stats(cohort, 4, "enroll");
  double mu = 0.0;
  for (double v : cohort) mu += v;
  mu /= 4.0;
  double ss = 0.0;
  for (double v : cohort) ss += (v - mu) * (v - mu);
  REQUIRE(st.mu == Catch::Approx(mu).epsilon(1e-12));
  REQUIRE(st.sigma == Catch::Approx(std::sqrt(ss / 3.0)).epsilon(1e-12));
}

TEST_CASE("asnorm is equivariant under a shared affine score map") {
  Rng rng(9);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 5 + rng.uniform_int(40);
    std::vector<double> ce, ct;
    for (int i = 0; i < n; ++i) {
      ce.push_back(rng.uniform(-1.0, 1.0));
      ct.push_back(rng.uniform(-1.0, 1.0));
    }
    const double raw = rng.uniform(-1.0, 1.0);
    const std::int64_t topk = 2 + rng.uniform_int(n - 2);
    const double base = asnorm_score(raw, ce, ct, topk);
    const double a = rng.uniform(0.3, 2.5);
    const double b = rng.uniform(-0.7, 0.7);
    std::vector<double> ce2 = ce, ct2 = ct;
    for (auto& v : ce2) v = a * v + b;
    for (auto& v : ct2) v = a * v + b;
    const double mapped = asnorm_score(a * raw + b, ce2, ct2, topk);
    REQUIRE(mapped == Catch::Approx(base).margin(1e-9));
  }
}

TEST_CASE("asnorm with shared cohort stats preserves score ranking") {
  Rng rng(10);
  std::vector<double> cohort;
  for (int i = 0; i < 30; ++i) cohort.push_back(rng.uniform(-1.0, 1.0));
  std::vector<double> raws = {-0.4, -0.1, 0.2, 0.55, 0.9};
  std::vector<double> normed;
  for (double r : raws) normed.push_back(asnorm_score(r, cohort, cohort, 10));
  REQUIRE(std::is_sorted(normed.begin(), normed.end()));
}

TEST_CASE("asnorm is symmetric in enroll and test sides") {
  Rng rng(11);
  std::vector<std::vector<double>> cohort;
  for (int i = 0; i < 12; ++i) {
    std::vector<double> e;
    for (int d = 0; d < 6; ++d) e.push_back(rng.uniform(-1.0, 1.0));
    cohort.push_back(e);
  }
  std::vector<double> enroll, test;
  for (int d = 0; d < 6; ++d) {
    enroll.push_back(rng.uniform(-1.0, 1.0));
    test.push_back(rng.uniform(-1.0, 1.0));
  }
  const double ab = asnorm_score(enroll, test, cohort, 5);
  const double ba = asnorm_score(test, enroll, cohort, 5);
  REQUIRE(ab == Catch::Approx(ba).margin(1e-12));
}
