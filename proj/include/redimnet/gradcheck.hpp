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

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "redimnet/tensor.hpp"

namespace redimnet {

struct GradCheckResult {
  bool ok = true;
  double max_rel_err = 0.0;
  // Where the worst relative error occurred, for diagnostics.
  std::size_t worst_leaf = 0;
  std::int64_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;

  std::string to_string() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "max_rel_err=%.3e at leaf %zu[%lld] analytic=%.9e "
                  "numeric=%.9e",
                  max_rel_err, worst_leaf,
                  static_cast<long long>(worst_index), analytic, numeric);
    return buf;
  }
};

// Central-difference gradient check in double precision. `fn` must rebuild
// the computation from the leaves' current data each call. The relative
// error metric is |a - n| / max(1e-5, |a| + |n|): the numeric estimate
// carries ~|f|*ulp/eps rounding noise (about 1e-11 for |f| ~ 1 at the
// default step), so coordinates below the denominator floor cannot be
// resolved to the relative tolerance and are instead checked absolutely
// with atol = floor * tol.
inline GradCheckResult grad_check(
    const std::function<Tensor<double>()>& fn,
    const std::vector<Tensor<double>>& leaves, double eps = 1e-4,
    double tol = 1e-5) {
  for (const auto& leaf : leaves)
    if (!leaf.requires_grad())
      throw UsageError("grad_check: every leaf must require grad");

  Tensor<double> loss = fn();
  if (loss.numel() != 1)
    throw UsageError("grad_check: fn must return a scalar, got shape " +
                     shape_str(loss.shape()));
  for (const auto& leaf : leaves) const_cast<Tensor<double>&>(leaf).zero_grad();
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    auto g = const_cast<Tensor<double>&>(leaf).grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  GradCheckResult res;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = const_cast<Tensor<double>&>(leaves[li]);
    auto d = leaf.data();
    for (std::int64_t i = 0; i < leaf.numel(); ++i) {
      const double saved = d[i];
      double plus, minus;
      {
        NoGradGuard ng;
        d[i] = saved + eps;
        plus = fn().item();
        d[i] = saved - eps;
        minus = fn().item();
        d[i] = saved;
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[li][static_cast<std::size_t>(i)];
      const double rel =
          std::abs(a - numeric) / std::max(1e-5, std::abs(a) + std::abs(numeric));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_leaf = li;
        res.worst_index = i;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  res.ok = res.max_rel_err < tol;
  return res;
}

}  // namespace redimnet
