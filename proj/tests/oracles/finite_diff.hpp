#pragma once

// Five-point central differences, float64.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace oracle {

// Error is O(h^4) truncation plus O(eps/h) rounding. The three-point rule at
// 1e-5 left truncation errors around 1e-4 on high-curvature coordinates.
inline constexpr double kStep = 1e-4;

/// d f / d values[i] for every i, by
///   (8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h.
/// `values` is restored after each probe.
inline std::vector<double> numeric_gradient(std::vector<double>& values, const std::function<double()>& f,
                                            double h = kStep) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    auto at = [&](double d) {
      values[i] = keep + d;
      return f();
    };
    const double d1 = at(h) - at(-h), d2 = at(2.0 * h) - at(-2.0 * h);
    values[i] = keep;
    g[i] = (8.0 * d1 - d2) / (12.0 * h);
  }
  return g;
}

/// Largest elementwise relative error |a - n| / max(|a|, |n|, floor). The
/// floor keeps gradients that are zero up to rounding from dominating.
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                 double floor = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace oracle
