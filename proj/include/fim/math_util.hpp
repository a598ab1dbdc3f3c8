// SPDX-License-Identifier: Apache-2.0
//
// Part of fimkit, a flexible-metasurface link simulation and estimation toolkit.

#ifndef FIM_MATH_UTIL_HPP
#define FIM_MATH_UTIL_HPP

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

namespace fim {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;

// Canonicalizes an angle into [0, 2*pi).
inline double wrap_two_pi(double x) {
  x = std::fmod(x, kTwoPi);
  if (x < 0.0) x += kTwoPi;
  if (x >= kTwoPi) x = 0.0;
  return x;
}

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) * 0.3989422804014326779399460599344;
}

inline double normal_cdf(double z) {
  return 0.5 * std::erfc(-z * 0.7071067811865475244008443621048);
}

// Order-independent accumulation: the summation tree depends only on the
// element count, never on thread scheduling.
template <typename T>
T pairwise_sum(const T* data, std::size_t n) {
  if (n <= 8) {
    T acc{};
    for (std::size_t i = 0; i < n; ++i) acc += data[i];
    return acc;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(data, half) + pairwise_sum(data + half, n - half);
}

template <typename T>
T pairwise_sum(const std::vector<T>& v) {
  return pairwise_sum(v.data(), v.size());
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_of_mean = 0.0;
};

// Two-pass mean and standard error, both via pairwise summation.
inline MeanStderr mean_stderr(const std::vector<double>& samples) {
  MeanStderr out;
  const std::size_t n = samples.size();
  if (n == 0) return out;
  out.mean = pairwise_sum(samples) / double(n);
  if (n == 1) return out;
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = samples[i] - out.mean;
    sq[i] = d * d;
  }
  const double var = pairwise_sum(sq) / double(n - 1);
  out.stderr_of_mean = std::sqrt(var / double(n));
  return out;
}

// Closed linspace: count points from lo to hi inclusive.
inline std::vector<double> linspace(double lo, double hi, std::size_t count) {
  std::vector<double> v(count);
  if (count == 1) {
    v[0] = lo;
    return v;
  }
  const double step = (hi - lo) / double(count - 1);
  for (std::size_t i = 0; i < count; ++i) v[i] = lo + double(i) * step;
  return v;
}

}  // namespace fim

#endif  // FIM_MATH_UTIL_HPP
