#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace evoflow {

/// Fixed-order pairwise summation; result depends only on the input order.
inline double pairwise_sum(std::span<const double> xs) noexcept {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

struct SampleSummary {
  double mean = 0.0;
  double sd = 0.0;      // sample standard deviation (n-1)
  double stderr = 0.0;  // sd / sqrt(n)
  std::size_t n = 0;
};

inline SampleSummary summarize(std::span<const double> xs) {
  SampleSummary s;
  s.n = xs.size();
  if (s.n == 0) return s;
  s.mean = pairwise_sum(xs) / static_cast<double>(s.n);
  if (s.n < 2) return s;
  std::vector<double> dev(xs.size());
  std::transform(xs.begin(), xs.end(), dev.begin(), [&](double x) {
    const double d = x - s.mean;
    return d * d;
  });
  s.sd = std::sqrt(pairwise_sum(dev) / static_cast<double>(s.n - 1));
  s.stderr = s.sd / std::sqrt(static_cast<double>(s.n));
  return s;
}

/// Sample covariance of two equally long series.
inline double sample_covariance(std::span<const double> xs, std::span<const double> ys) {
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  const double mx = pairwise_sum(xs) / static_cast<double>(n);
  const double my = pairwise_sum(ys) / static_cast<double>(n);
  std::vector<double> prod(n);
  for (std::size_t i = 0; i < n; ++i) prod[i] = (xs[i] - mx) * (ys[i] - my);
  return pairwise_sum(prod) / static_cast<double>(n - 1);
}

/// Least-squares slope and intercept of y against x.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  return f;
}

}  // namespace evoflow
