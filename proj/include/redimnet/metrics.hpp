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
#include <string>
#include <vector>

#include "redimnet/common.hpp"

namespace redimnet {

// ---------------------------------------------------------------------------
// Cosine scoring
// ---------------------------------------------------------------------------

template <typename T>
double cosine_score(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.size() != b.size())
    throw InputError("cosine: dimension mismatch " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0)
    throw InputError("cosine: zero-norm embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// Adaptive score normalization
// ---------------------------------------------------------------------------

struct SideStats {
  double mu = 0.0;
  double sigma = 0.0;
};

// Mean and sample standard deviation ((n-1) denominator) of the topk largest
// cohort scores for one trial side.
inline SideStats topk_stats(std::vector<double> cohort_scores, std::int64_t topk,
                            const std::string& side) {
  const std::int64_t n = static_cast<std::int64_t>(cohort_scores.size());
  if (topk < 2) throw ConfigError("asnorm: topk must be >= 2");
  if (n < topk)
    throw ConfigError("asnorm: cohort size " + std::to_string(n) +
                      " smaller than topk " + std::to_string(topk));
  std::partial_sort(cohort_scores.begin(), cohort_scores.begin() + topk,
                    cohort_scores.end(), std::greater<double>());
  double mu = 0.0;
  for (std::int64_t i = 0; i < topk; ++i) mu += cohort_scores[static_cast<std::size_t>(i)];
  mu /= static_cast<double>(topk);
  double ss = 0.0;
  for (std::int64_t i = 0; i < topk; ++i) {
    const double d = cohort_scores[static_cast<std::size_t>(i)] - mu;
    ss += d * d;
  }
  const double sigma = std::sqrt(ss / static_cast<double>(topk - 1));
  if (sigma == 0.0)
    throw NumericError("asnorm: zero variance in " + side + " cohort scores");
  return {mu, sigma};
}

inline double asnorm_score(double raw, const SideStats& enroll,
                           const SideStats& test) {
  return 0.5 * ((raw - enroll.mu) / enroll.sigma +
                (raw - test.mu) / test.sigma);
}

// Full AS-Norm of a single trial given each side's raw cohort score list.
inline double asnorm_score(double raw, const std::vector<double>& enroll_cohort,
                           const std::vector<double>& test_cohort,
                           std::int64_t topk) {
  return asnorm_score(raw, topk_stats(enroll_cohort, topk, "enroll"),
                      topk_stats(test_cohort, topk, "test"));
}

// Embedding-level convenience: cohort scores are cosines against every
// cohort embedding.
template <typename T>
double asnorm_score(const std::vector<T>& enroll, const std::vector<T>& test,
                    const std::vector<std::vector<T>>& cohort,
                    std::int64_t topk) {
  std::vector<double> ce, ct;
  ce.reserve(cohort.size());
  ct.reserve(cohort.size());
  for (const auto& c : cohort) {
    ce.push_back(cosine_score(enroll, c));
    ct.push_back(cosine_score(test, c));
  }
  return asnorm_score(cosine_score(enroll, test), ce, ct, topk);
}

// ---------------------------------------------------------------------------
// EER / minDCF
// ---------------------------------------------------------------------------

struct ScoreSet {
  std::vector<int> labels;     // 1 = target, 0 = nontarget
  std::vector<double> scores;  // parallel to labels
};

namespace detail {

struct OperatingPoint {
  double fnr = 0.0;
  double fpr = 0.0;
};

// All achievable (FNR, FPR) pairs, in increasing-threshold order. The rates
// are piecewise constant between distinct score values, so evaluating at
// every distinct value plus one point above the maximum enumerates them all.
// FNR(t) = fraction of targets < t; FPR(t) = fraction of nontargets >= t.
inline std::vector<OperatingPoint> roc_points(const ScoreSet& s) {
  if (s.labels.size() != s.scores.size())
    throw InputError("scores: parallel arrays differ in length");
  std::vector<double> tgt, non;
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    if (!std::isfinite(s.scores[i]))
      throw InputError("scores: non-finite score at trial " +
                       std::to_string(i));
    (s.labels[i] == 1 ? tgt : non).push_back(s.scores[i]);
  }
  if (tgt.empty() || non.empty())
    throw InputError("scores: need at least one target and one nontarget");
  std::sort(tgt.begin(), tgt.end());
  std::sort(non.begin(), non.end());
  std::vector<double> thresholds;
  thresholds.reserve(s.scores.size() + 1);
  thresholds.insert(thresholds.end(), tgt.begin(), tgt.end());
  thresholds.insert(thresholds.end(), non.begin(), non.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());
  const double above = thresholds.back() + 1.0;
  thresholds.push_back(above);
  std::vector<OperatingPoint> pts;
  pts.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto below = std::lower_bound(tgt.begin(), tgt.end(), t);
    const auto at_or_above = std::lower_bound(non.begin(), non.end(), t);
    OperatingPoint p;
    p.fnr = static_cast<double>(below - tgt.begin()) /
            static_cast<double>(tgt.size());
    p.fpr = static_cast<double>(non.end() - at_or_above) /
            static_cast<double>(non.size());
    pts.push_back(p);
  }
  return pts;
}

}  // namespace detail

// Equal error rate with linear interpolation between the two adjacent
// operating points where FNR - FPR changes sign.
inline double eer(const ScoreSet& s) {
  const auto pts = detail::roc_points(s);
  // FNR - FPR runs from negative (low threshold) to +1 (above max), both
  // classes nonempty, so a sign change always exists.
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double da = pts[i - 1].fnr - pts[i - 1].fpr;
    const double db = pts[i].fnr - pts[i].fpr;
    if (da < 0.0 && db >= 0.0) {
      const double alpha = -da / (db - da);
      return (1.0 - alpha) * pts[i - 1].fnr + alpha * pts[i].fnr;
    }
  }
  // Degenerate: the first point already crosses (FNR starts at 0, so this
  // can only mean FPR == 0 there too).
  return pts.front().fnr;
}

// Minimum normalized detection cost over all thresholds.
inline double min_dcf(const ScoreSet& s, double p_target = 0.01,
                      double c_fa = 1.0, double c_miss = 1.0) {
  if (p_target <= 0.0 || p_target >= 1.0)
    throw ConfigError("min_dcf: p_target must lie in (0,1)");
  if (c_fa <= 0.0 || c_miss <= 0.0)
    throw ConfigError("min_dcf: costs must be positive");
  const auto pts = detail::roc_points(s);
  const double norm = std::min(c_miss * p_target, c_fa * (1.0 - p_target));
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : pts) {
    const double cost =
        c_miss * p.fnr * p_target + c_fa * p.fpr * (1.0 - p_target);
    best = std::min(best, cost / norm);
  }
  return best;
}

}  // namespace redimnet
