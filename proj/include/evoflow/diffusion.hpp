#pragma once

// Path simulation for the L_t-diffusion with its frame and damped transport.
//
// One step from t0 to t1 (tm the midpoint):
//   x, basis <- drift flow and metric rescaling over [t0, tm]
//   tangent  = sqrt(2) * basis^T dB, then x <- exp_x(tangent) at tm
//   x, basis <- parallel transport, metric rescaling and drift flow over [tm, t1]
//   Q        <- exp(-int_{t0}^{t1} R^Z) Q
// The linear drift is integrated exactly (Strang splitting around the
// geodesic noise step); the noise sees the midpoint metric.

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "coefficients.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "parallel.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "time_grid.hpp"

namespace evoflow {

struct ExplosionGuard {
  double radius_cap = 1e6;
};

struct ExitRecord {
  double time = 0.0;
  int step = 0;
  double radius = 0.0;
};

struct PathOptions {
  ExplosionGuard guard;
};

struct Trajectory {
  TimeGrid grid;
  std::vector<SpacePoint> points;
  std::vector<FrameState> frames;
  std::vector<Matrix> q_matrices;
  std::optional<ExitRecord> exited;

  /// Number of recorded states (steps taken + 1).
  std::size_t size() const noexcept { return points.size(); }
};

inline double operator_norm(const Matrix& q) {
  if (q.rows() == 1) return std::abs(q(0, 0));
  Eigen::SelfAdjointEigenSolver<Matrix> es(q.transpose() * q, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

/// exp(-int_{t0}^{t1} R^Z) for one step. Isotropic operators use the exact
/// scalar integral; otherwise the step-frozen matrix exponential.
template <class M>
Matrix q_step_factor(const M& m, double t0, double t1) {
  const double tm = 0.5 * (t0 + t1);
  const Matrix r = m.rz_operator(tm);
  const double diag = r(0, 0);
  const bool isotropic =
      (r - diag * Matrix::Identity(r.rows(), r.cols())).cwiseAbs().maxCoeff() == 0.0;
  if (isotropic)
    return std::exp(-m.k_integral(t0, t1)) * Matrix::Identity(r.rows(), r.cols());
  return Matrix((-(t1 - t0) * r).exp());
}

/// State of one simulated path; advance() runs it over a grid.
template <class M>
class PathKernel {
 public:
  explicit PathKernel(const M& m, PathOptions opt = {})
      : m_(m), opt_(opt), d_(m.dim()), n_(m.ambient_dim()) {
    dB_.resize(d_);
    tangent_.resize(n_);
  }

  void start(double s, const Vector& x0) { start(s, x0, m_.canonical_frame(s, x0)); }

  void start(double s, const Vector& x0, const Matrix& basis0) {
    m_.check_time(s);
    m_.check_point(s, x0);
    t_ = s;
    x_ = x0;
    basis_ = basis0;
    q_ = Matrix::Identity(d_, d_);
    q_prev_ = q_;
    exit_.reset();
  }

  /// Runs over `grid` (which must start at the current time). Calls
  /// on_step(*this) after every step. Returns false when the guard fired.
  template <class OnStep>
  bool advance(const TimeGrid& grid, NoiseStream& noise, OnStep&& on_step) {
    grid.validate();
    m_.check_time(grid.t);
    if (std::abs(grid.s - t_) > 1e-12 * std::max(1.0, std::abs(t_)))
      throw PreconditionError("grid does not start at the current path time");
    if (exit_) return false;
    const double sdt = std::sqrt(grid.dt());
    for (int i = 0; i < grid.n_steps; ++i) {
      const double t0 = grid.time(i);
      const double t1 = grid.time(i + 1);
      t0_ = t0;
      for (int a = 0; a < d_; ++a) dB_[a] = sdt * noise.gaussian();
      step(t0, t1);
      on_step(*this);
      if (exit_) return false;
    }
    return true;
  }

  bool advance(const TimeGrid& grid, NoiseStream& noise) {
    return advance(grid, noise, [](const PathKernel&) {});
  }

  double time() const noexcept { return t_; }
  double step_start() const noexcept { return t0_; }
  const Vector& x() const noexcept { return x_; }
  const Vector& x_prev() const noexcept { return x_prev_; }
  const Matrix& basis() const noexcept { return basis_; }
  const Matrix& q() const noexcept { return q_; }
  /// Q_{s, t0} at the start of the last step.
  const Matrix& q_prev() const noexcept { return q_prev_; }
  /// Frame increments dB of the last step.
  const Vector& dB() const noexcept { return dB_; }
  /// Ambient/chart displacement vector used for the last noise move.
  const Vector& tangent() const noexcept { return tangent_; }
  const std::optional<ExitRecord>& exit() const noexcept { return exit_; }
  const M& model() const noexcept { return m_; }

 private:
  void step(double t0, double t1) {
    const double tm = 0.5 * (t0 + t1);
    m_.drift_flow(t0, tm, x_);
    m_.advance_metric(t0, tm, x_, basis_);
    tangent_.noalias() = basis_.transpose() * dB_;
    tangent_ *= std::sqrt(2.0);
    x_prev_ = x_;
    m_.exp_map(tm, x_, tangent_);
    m_.transport_frame(x_prev_, x_, basis_);
    m_.advance_metric(tm, t1, x_, basis_);
    m_.drift_flow(tm, t1, x_);
    m_.repair_frame(t1, x_, basis_);
    q_prev_ = q_;
    if constexpr (M::kIsotropicRZ)
      q_ *= std::exp(-m_.k_integral(t0, t1));
    else
      q_ = q_step_factor(m_, t0, t1) * q_;
    t_ = t1;
    if (m_.kind() != GeometryKind::ShrinkingSphere) {
      const double rho = m_.origin_distance(t1, x_);
      if (!std::isfinite(rho) || rho >= opt_.guard.radius_cap) exit_ = ExitRecord{t1, 0, rho};
    }
  }

  const M& m_;
  PathOptions opt_;
  int d_, n_;
  double t_ = 0.0, t0_ = 0.0;
  Vector x_, x_prev_, dB_, tangent_;
  Matrix basis_, q_, q_prev_;
  std::optional<ExitRecord> exit_;
};

// ---------------------------------------------------------------------------

/// Simulates one recorded path.
inline Trajectory simulate_path(const Model& model, const TimeGrid& grid, const SpacePoint& x0,
                                NoiseStream& noise, PathOptions opt = {}) {
  grid.validate();
  model.check_point(grid.s, x0);
  return model.visit([&](const auto& m) {
    Trajectory tr;
    tr.grid = grid;
    tr.points.reserve(grid.n_steps + 1);
    tr.frames.reserve(grid.n_steps + 1);
    tr.q_matrices.reserve(grid.n_steps + 1);
    PathKernel kernel(m, opt);
    kernel.start(grid.s, x0.coords);
    auto record = [&](const auto& k) {
      tr.points.push_back(SpacePoint{k.x()});
      tr.frames.push_back(FrameState{SpacePoint{k.x()}, k.basis(), k.time()});
      tr.q_matrices.push_back(k.q());
    };
    record(kernel);
    int steps = 0;
    kernel.advance(grid, noise, [&](const auto& k) {
      ++steps;
      record(k);
    });
    if (kernel.exit()) {
      tr.exited = *kernel.exit();
      tr.exited->step = steps;
    }
    return tr;
  });
}

/// Recomputes q_matrices from the trajectory's frames (step-frozen generator).
inline void evolve_q(const Model& model, Trajectory& tr) {
  if (tr.frames.empty()) return;
  model.visit([&](const auto& m) {
    const int d = m.dim();
    tr.q_matrices.assign(tr.frames.size(), Matrix::Identity(d, d));
    for (std::size_t i = 1; i < tr.frames.size(); ++i)
      tr.q_matrices[i] = q_step_factor(m, tr.frames[i - 1].time, tr.frames[i].time) *
                         tr.q_matrices[i - 1];
  });
}

/// Many independent recorded paths, path i driven by NoiseStream(seed, i).
inline std::vector<Trajectory> simulate_paths(const Model& model, const TimeGrid& grid,
                                              const SpacePoint& x0, std::size_t n,
                                              std::uint64_t seed, PathOptions opt = {}) {
  std::vector<Trajectory> out(n);
  parallel_for(n, [&](std::size_t i) {
    NoiseStream noise(seed, i);
    out[i] = simulate_path(model, grid, x0, noise, opt);
  });
  return out;
}

/// Pathwise check of |Q_{s,t_i}| <= exp(-int_s^{t_i} k) (1 + 10 dt).
inline double q_bound_violation(const Model& model, const Trajectory& tr) {
  double worst = 0.0;
  const double factor = 1.0 + 10.0 * tr.grid.dt();
  for (std::size_t i = 0; i < tr.q_matrices.size(); ++i) {
    const double bound = std::exp(-model.k_integral(tr.grid.s, tr.frames[i].time)) * factor;
    worst = std::max(worst, operator_norm(tr.q_matrices[i]) / bound);
  }
  return worst;
}

/// One JSON line per step: {t, coords, q_norm}.
inline void write_trajectory_jsonl(const Trajectory& tr, std::ostream& os) {
  for (std::size_t i = 0; i < tr.points.size(); ++i) {
    const Vector& x = tr.points[i].coords;
    Json j;
    j["t"] = tr.frames[i].time;
    j["coords"] = std::vector<double>(x.data(), x.data() + x.size());
    j["q_norm"] = operator_norm(tr.q_matrices[i]);
    os << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Parallel coupling

struct CoupledTrajectory {
  Trajectory x;
  Trajectory y;
  std::vector<double> distances;  // rho_{t_i}(X, Y)
};

/// Y is driven by the noise of X transported along the geodesic from X to Y.
inline CoupledTrajectory simulate_coupling(const Model& model, const TimeGrid& grid,
                                           const SpacePoint& x0, const SpacePoint& y0,
                                           NoiseStream& noise, PathOptions opt = {}) {
  grid.validate();
  model.check_point(grid.s, x0);
  model.check_point(grid.s, y0);
  return model.visit([&](const auto& m) {
    CoupledTrajectory out;
    out.x.grid = out.y.grid = grid;
    PathKernel kernel(m, opt);
    kernel.start(grid.s, x0.coords);
    Vector y = y0.coords;
    Vector ty(m.ambient_dim());
    auto record = [&](const auto& k) {
      out.x.points.push_back(SpacePoint{k.x()});
      out.x.frames.push_back(FrameState{SpacePoint{k.x()}, k.basis(), k.time()});
      out.x.q_matrices.push_back(k.q());
      out.y.points.push_back(SpacePoint{y});
      out.distances.push_back(m.distance(k.time(), k.x(), y));
    };
    record(kernel);
    kernel.advance(grid, noise, [&](const auto& k) {
      const double t0 = k.step_start();
      const double t1 = k.time();
      const double tm = 0.5 * (t0 + t1);
      Matrix unused;
      m.drift_flow(t0, tm, y);
      m.advance_metric(t0, tm, y, unused);
      ty = k.tangent();
      if (y != k.x_prev()) m.transport_vector(tm, k.x_prev(), y, ty);
      m.project_tangent(y, ty);
      m.exp_map(tm, y, ty);
      m.advance_metric(tm, t1, y, unused);
      m.drift_flow(tm, t1, y);
      record(k);
    });
    if (kernel.exit()) out.x.exited = *kernel.exit();
    return out;
  });
}

// ---------------------------------------------------------------------------
// Radial diagnostic

struct RadialDiagnostic {
  std::vector<double> times;
  std::vector<double> empirical;  // mean drift of phi(rho_t(X_t)) per step
  std::vector<double> bound;      // mean analytic bound per step
  std::vector<double> se;         // SE of empirical - bound per step
  double residual = 0.0;          // time average of empirical - bound
  double residual_se = 0.0;
};

enum class RadialPhi { Rho, RhoSquared };

/// Compares the empirical drift of phi(rho_t(X_t)) with the comparison bound.
/// Paths that exited contribute only their pre-exit segment.
inline RadialDiagnostic radial_diagnostic(const Model& model,
                                          const std::vector<Trajectory>& paths, RadialPhi phi,
                                          const H3Config& cfg = {}) {
  if (paths.empty()) throw PreconditionError("radial_diagnostic needs at least one path");
  const TimeGrid& g = paths.front().grid;
  const double dt = g.dt();
  auto phi_of = [&](double r) { return phi == RadialPhi::Rho ? r : r * r; };
  auto bound_of = [&](double t, double r) {
    return phi == RadialPhi::Rho ? radial_drift_bound(model, t, r, cfg)
                                 : rho_squared_drift_bound(model, t, r, cfg);
  };
  RadialDiagnostic out;
  std::vector<double> per_path_sum(paths.size(), 0.0);
  std::vector<double> per_path_count(paths.size(), 0.0);
  std::vector<double> diff, emp, bnd;
  for (int i = 0; i < g.n_steps; ++i) {
    diff.clear();
    emp.clear();
    bnd.clear();
    const double t0 = g.time(i), t1 = g.time(i + 1);
    for (std::size_t p = 0; p < paths.size(); ++p) {
      const auto& tr = paths[p];
      if (static_cast<std::size_t>(i + 1) >= tr.points.size()) continue;
      if (tr.exited && i + 1 >= tr.exited->step) continue;
      const double r0 = model.distance_to_origin(t0, tr.points[i].coords);
      const double r1 = model.distance_to_origin(t1, tr.points[i + 1].coords);
      if (!(r0 > 0.0)) continue;
      const double e = (phi_of(r1) - phi_of(r0)) / dt;
      const double b = bound_of(t0, r0);
      emp.push_back(e);
      bnd.push_back(b);
      diff.push_back(e - b);
      per_path_sum[p] += e - b;
      per_path_count[p] += 1.0;
    }
    if (diff.empty()) break;
    out.times.push_back(t0);
    out.empirical.push_back(summarize(emp).mean);
    out.bound.push_back(summarize(bnd).mean);
    out.se.push_back(summarize(diff).stderr);
  }
  std::vector<double> avg;
  for (std::size_t p = 0; p < paths.size(); ++p)
    if (per_path_count[p] > 0.0) avg.push_back(per_path_sum[p] / per_path_count[p]);
  const auto s = summarize(avg);
  out.residual = s.mean;
  out.residual_se = s.stderr;
  return out;
}

}  // namespace evoflow
