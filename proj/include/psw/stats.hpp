#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace psw {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Bessel-corrected standard deviation; 0 for fewer than two samples.
inline double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// Normal-approximation 95% half-width; 0 for fewer than two samples.
inline double ci95_halfwidth(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  return 1.96 * sample_std(xs) / std::sqrt(static_cast<double>(xs.size()));
}

struct MeanCi {
  double mean = 0.0;
  double ci95 = 0.0;
  std::size_t n = 0;
};

inline MeanCi mean_ci(std::span<const double> xs) { return {mean(xs), ci95_halfwidth(xs), xs.size()}; }

}  // namespace psw
