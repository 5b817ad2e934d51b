#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>

#include "crl/errors.hpp"

namespace crl {

struct TooFewPoints : Error {
  using Error::Error;
};
struct NonPositiveError : Error {
  using Error::Error;
};

/// Ordinary least squares on (log n, log error).
struct SlopeFit {
  double slope;
  double intercept;
  double r2;
  std::size_t points;
};

inline SlopeFit fit_slope(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) throw TooFewPoints("fit_slope: need at least 3 points");
  double sx = 0, sy = 0;
  for (const auto& [n, e] : points) {
    if (!(n > 0.0)) throw NonPositiveError("fit_slope: nonpositive abscissa");
    if (!(e > 0.0)) throw NonPositiveError("fit_slope: nonpositive error value");
    sx += std::log(n);
    sy += std::log(e);
  }
  double k = static_cast<double>(points.size());
  double mx = sx / k, my = sy / k;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [n, e] : points) {
    double dx = std::log(n) - mx;
    double dy = std::log(e) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw NonPositiveError("fit_slope: abscissae are all equal");
  double slope = sxy / sxx;
  double intercept = my - slope * mx;
  double ss_res = syy - slope * sxy;
  double r2 = syy <= 1e-30 ? 1.0 : 1.0 - std::max(0.0, ss_res) / syy;
  return {slope, intercept, r2, points.size()};
}

}  // namespace crl
