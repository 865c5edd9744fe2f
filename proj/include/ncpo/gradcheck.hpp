#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "ncpo/math.hpp"
#include "ncpo/rng.hpp"

namespace ncpo {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int coords_checked = 0;
  int worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central finite differences against the analytic gradient on a random subset
// of coordinates. Each coordinate takes the best agreement across the step
// sweep (the optimal h depends on local curvature); the relative error is
// measured against the larger magnitude with a small absolute floor.
template <class LossFn>
GradCheckResult check_gradient(LossFn&& loss_of, const Vec& params, const Vec& analytic,
                               int n_coords, std::uint64_t seed,
                               const Vec& step_sizes = Vec{1e-4, 1e-5, 1e-6}) {
  require_same_size(params, analytic, "check_gradient");
  require(!params.empty(), "check_gradient: empty parameter vector");
  require(n_coords > 0, "check_gradient: need at least one coordinate");
  require(!step_sizes.empty(), "check_gradient: empty step sweep");

  int total = static_cast<int>(params.size());
  int n = std::min(n_coords, total);
  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int j = 0; j < n; ++j) {
    std::swap(order[j], order[j + rng.uniform_int(0, total - 1 - j)]);
  }

  GradCheckResult res;
  res.coords_checked = n;
  Vec p = params;
  for (int j = 0; j < n; ++j) {
    int i = order[j];
    double a = analytic[i];
    double best_err = std::numeric_limits<double>::infinity();
    double best_num = 0.0;
    for (double h : step_sizes) {
      p[i] = params[i] + h;
      double lp = loss_of(p);
      p[i] = params[i] - h;
      double lm = loss_of(p);
      p[i] = params[i];
      double num = (lp - lm) / (2.0 * h);
      double err = std::abs(num - a) / std::max({std::abs(num), std::abs(a), 1e-8});
      if (err < best_err) {
        best_err = err;
        best_num = num;
      }
    }
    if (best_err > res.max_rel_err) {
      res.max_rel_err = best_err;
      res.worst_coord = i;
      res.worst_analytic = a;
      res.worst_numeric = best_num;
    }
  }
  return res;
}

}  // namespace ncpo
