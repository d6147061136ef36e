#pragma once

// Adaptive quadrature on finite intervals and on half-lines with numerical
// convergence/divergence certification.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "errors.hpp"

namespace evoflow {

struct QuadratureSettings {
  double rel_tol = 1e-8;
  /// Partial integrals beyond this magnitude are declared divergent.
  double divergence_threshold = 1e12;
  /// Number of half-line doublings before giving up.
  int max_doublings = 60;

  void validate() const {
    if (!(rel_tol > 0.0 && rel_tol <= 1e-2))
      throw DomainError("quadrature rel_tol must lie in (0, 1e-2]");
    if (!(divergence_threshold > 0.0))
      throw DomainError("quadrature divergence_threshold must be positive");
    if (max_doublings < 1) throw DomainError("quadrature max_doublings must be >= 1");
  }
};

enum class Convergence { Finite, Divergent, Inconclusive };

inline const char* to_string(Convergence c) {
  switch (c) {
    case Convergence::Finite:
      return "finite";
    case Convergence::Divergent:
      return "divergent";
    case Convergence::Inconclusive:
      return "inconclusive";
  }
  return "?";
}

/// Value of a (possibly improper) integral together with how far the
/// half-line was explored.
struct TailIntegral {
  Convergence status = Convergence::Inconclusive;
  double value = std::numeric_limits<double>::quiet_NaN();
  double error = std::numeric_limits<double>::quiet_NaN();
  double cutoff = 0.0;  // final truncation length L
  int doublings = 0;

  bool finite() const noexcept { return status == Convergence::Finite; }
  bool divergent() const noexcept { return status == Convergence::Divergent; }
};

namespace quad {

struct Result {
  double value;
  double error;
};

/// Adaptive Gauss-Kronrod (7/15) on [a, b].
template <class F>
Result integrate(F&& f, double a, double b, double rel_tol = 1e-10,
                 unsigned max_depth = 18) {
  if (a == b) return {0.0, 0.0};
  double err = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
      f, a, b, max_depth, rel_tol, &err);
  return {v, err};
}

/// Generic half-line integral by doubling. `segment(l0, l1)` must return the
/// contribution of the piece at distance [l0, l1] from the finite endpoint.
/// `tail_bound(L, partial)` may return an analytic bound on the remaining
/// tail beyond distance L, or NaN when no certificate is available; in that
/// case convergence is judged from the decay of successive contributions.
template <class Segment, class TailBound>
TailIntegral doubling_integral(Segment&& segment, TailBound&& tail_bound,
                               const QuadratureSettings& q,
                               double initial_length = 1.0) {
  q.validate();
  TailIntegral out;
  double length = initial_length;
  auto first = segment(0.0, length);
  double total = first.value;
  double err = first.error;
  double prev_contrib = std::abs(first.value);
  int growth_streak = 0;
  int decay_streak = 0;

  for (int j = 1; j <= q.max_doublings; ++j) {
    out.doublings = j;
    if (!std::isfinite(total) || std::abs(total) > q.divergence_threshold) {
      out.status = Convergence::Divergent;
      out.value = total;
      out.cutoff = length;
      return out;
    }
    const double bound = tail_bound(length, total);
    if (std::isfinite(bound) &&
        (bound <= q.rel_tol * std::abs(total) || bound <= 1e-300)) {
      out.status = Convergence::Finite;
      out.value = total;
      out.error = err + bound;
      out.cutoff = length;
      return out;
    }
    const auto piece = segment(length, 2.0 * length);
    length *= 2.0;
    total += piece.value;
    err += piece.error;
    const double contrib = std::abs(piece.value);
    if (prev_contrib > 0.0 && contrib >= 0.9 * prev_contrib)
      ++growth_streak;
    else
      growth_streak = 0;
    if (contrib <= 0.75 * prev_contrib || contrib == 0.0)
      ++decay_streak;
    else
      decay_streak = 0;
    prev_contrib = contrib;

    if (growth_streak >= 4 && j >= 6 && contrib > 0.0) {
      out.status = Convergence::Divergent;
      out.value = total;
      out.cutoff = length;
      return out;
    }
    if (!std::isfinite(bound) && decay_streak >= 3 &&
        contrib <= q.rel_tol * std::abs(total)) {
      out.status = Convergence::Finite;
      out.value = total;
      out.error = err + contrib;
      out.cutoff = length;
      return out;
    }
  }
  out.status = Convergence::Inconclusive;
  out.value = total;
  out.cutoff = length;
  return out;
}

/// \int_{-\infty}^t g(r) dr with increment-decay certification only.
template <class G>
TailIntegral integrate_to_minus_infinity(G&& g, double t, const QuadratureSettings& q) {
  auto segment = [&](double l0, double l1) {
    return integrate(g, t - l1, t - l0, q.rel_tol * 1e-2);
  };
  auto no_bound = [](double, double) { return std::numeric_limits<double>::quiet_NaN(); };
  return doubling_integral(segment, no_bound, q);
}

/// Discounted integral \int_{-\infty}^t exp(-\int_r^t A) B(r) dr.
///
/// `log_weight(r)` must return -\int_r^t A(u) du, `rate(r)` returns A(r) and
/// `source(r)` returns B(r). The tail beyond t-L is certified by
/// exp(log_weight(t-L)) * max|B| / min A sampled over [t-2L, t-L].
template <class LogWeight, class Rate, class Source>
TailIntegral discounted_integral(LogWeight&& log_weight, Rate&& rate, Source&& source,
                                 double t, const QuadratureSettings& q) {
  auto integrand = [&](double r) {
    const double lw = log_weight(r);
    if (lw < -745.0) return 0.0;
    return std::exp(lw) * source(r);
  };
  auto segment = [&](double l0, double l1) {
    return integrate(integrand, t - l1, t - l0, q.rel_tol * 1e-2);
  };
  auto tail = [&](double length, double) {
    constexpr int kSamples = 33;
    double a_min = std::numeric_limits<double>::infinity();
    double b_max = 0.0;
    for (int i = 0; i < kSamples; ++i) {
      const double r = t - length - length * i / (kSamples - 1.0);
      a_min = std::min(a_min, rate(r));
      b_max = std::max(b_max, std::abs(source(r)));
    }
    if (b_max == 0.0) return 0.0;
    if (!(a_min > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const double lw = log_weight(t - length);
    return std::exp(std::min(lw, 700.0)) * b_max / a_min;
  };
  return doubling_integral(segment, tail, q);
}

}  // namespace quad
}  // namespace evoflow
