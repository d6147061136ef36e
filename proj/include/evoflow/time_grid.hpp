#pragma once

#include <cmath>
#include <string>

#include "errors.hpp"

namespace evoflow {

/// Uniform grid s = t_0 < t_1 < ... < t_n = t.
struct TimeGrid {
  double s = 0.0;
  double t = 1.0;
  int n_steps = 1;

  static constexpr double kMaxStep = 0.1;

  double dt() const noexcept { return (t - s) / n_steps; }
  double time(int i) const noexcept { return i == n_steps ? t : s + i * dt(); }

  /// Grid on [s, t] with step at most `max_dt`.
  static TimeGrid with_max_step(double s, double t, double max_dt) {
    if (!(t > s)) throw PreconditionError("time grid requires s < t");
    if (!(max_dt > 0.0)) throw PreconditionError("time grid step must be positive");
    const int n = std::max(1, static_cast<int>(std::ceil((t - s) / max_dt - 1e-9)));
    TimeGrid g{s, t, n};
    g.validate();
    return g;
  }

  void validate() const {
    if (!(t > s)) throw PreconditionError("time grid requires s < t");
    if (n_steps < 1) throw PreconditionError("time grid requires n_steps >= 1");
    if (dt() > kMaxStep * (1.0 + 1e-12))
      throw PreconditionError("time grid step " + std::to_string(dt()) +
                              " exceeds the maximum of 0.1");
  }
};

}  // namespace evoflow
