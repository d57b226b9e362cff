#pragma once

#include "robpanel/error.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace robpanel {

enum class ScaleMethod { MedianAbs0675, MAD14826 };

struct ScaleEstimate {
  double value = 0.0;
  ScaleMethod method = ScaleMethod::MedianAbs0675;
};

inline constexpr double kMedianAbsDivisor = 0.6745;
inline constexpr double kMadConsistency = 1.4826;

// Median with the midpoint convention for even lengths. Takes a copy.
inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty sequence");
  const auto n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  const double upper = *mid;
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

inline double median(std::span<const double> v) {
  return median(std::vector<double>(v.begin(), v.end()));
}

// median(|e|) / 0.6745.
inline ScaleEstimate initial_scale(std::span<const double> residuals) {
  if (residuals.empty()) throw std::invalid_argument("initial_scale: empty residual sequence");
  std::vector<double> a(residuals.size());
  std::transform(residuals.begin(), residuals.end(), a.begin(),
                 [](double e) { return std::abs(e); });
  const double value = median(std::move(a)) / kMedianAbsDivisor;
  if (!(value > 0.0)) throw ZeroScale("initial scale is zero: more than half of the residuals vanish");
  return {value, ScaleMethod::MedianAbs0675};
}

// 1.4826 * median |e - median(e)|, over the pooled sequence.
inline ScaleEstimate mad_scale(std::span<const double> residuals) {
  if (residuals.empty()) throw std::invalid_argument("mad_scale: empty residual sequence");
  const double center = median(residuals);
  std::vector<double> a(residuals.size());
  std::transform(residuals.begin(), residuals.end(), a.begin(),
                 [center](double e) { return std::abs(e - center); });
  const double value = kMadConsistency * median(std::move(a));
  if (!(value > 0.0)) throw ZeroScale("MAD scale is zero: residuals are (mostly) constant");
  return {value, ScaleMethod::MAD14826};
}

}  // namespace robpanel
