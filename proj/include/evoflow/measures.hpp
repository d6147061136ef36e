#pragma once

// Evolution systems of measures as particle ensembles: the Cesaro
// construction, forward propagation P*_{s,t}, moments, invariance and
// convergence checks, and the differentiation identity along the flow.

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "coefficients.hpp"
#include "diffusion.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "model_io.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "semigroup.hpp"
#include "stats.hpp"
#include "test_functions.hpp"

namespace evoflow {

struct Provenance {
  std::string construction;
  std::uint64_t seed = 0;
  Json parameters = Json::object();
};

/// Equally weighted point cloud approximating mu_t.
struct ParticleEnsemble {
  double time = 0.0;
  std::vector<Vector> points;
  Provenance provenance;
  std::size_t exits = 0;
  bool unreliable = false;

  std::size_t n() const noexcept { return points.size(); }
  double weight() const noexcept { return points.empty() ? 0.0 : 1.0 / points.size(); }

  void validate(const Model& model) const {
    for (const auto& p : points) model.check_point(time, SpacePoint{p});
  }
};

/// Step sizes for long ensemble paths: coarse early, fine over the final window.
struct EnsembleSettings {
  double coarse_dt = 0.1;
  double fine_dt = 2.5e-3;
  double fine_window = 2.0;
  PathOptions path;
};

inline std::vector<TimeGrid> path_schedule(double r, double t, const EnsembleSettings& cfg) {
  std::vector<TimeGrid> grids;
  if (!(t > r)) return grids;
  const double split = t - cfg.fine_window;
  if (split > r + 1e-12) {
    grids.push_back(TimeGrid::with_max_step(r, split, cfg.coarse_dt));
    grids.push_back(TimeGrid::with_max_step(split, t, cfg.fine_dt));
  } else {
    grids.push_back(TimeGrid::with_max_step(r, t, cfg.fine_dt));
  }
  return grids;
}

namespace detail {

/// Runs one path from (r, x) to t over the ensemble schedule; false on exit.
template <class M>
bool run_schedule(const M& m, double r, double t, Vector& x, NoiseStream& noise,
                  const EnsembleSettings& cfg) {
  if (!(t > r)) return true;
  PathKernel kernel(m, cfg.path);
  kernel.start(r, x);
  for (const auto& g : path_schedule(r, t, cfg))
    if (!kernel.advance(g, noise)) return false;
  x = kernel.x();
  return true;
}

inline void finish(ParticleEnsemble& ens, std::vector<char>& exited) {
  std::vector<Vector> kept;
  kept.reserve(ens.points.size());
  for (std::size_t i = 0; i < ens.points.size(); ++i)
    if (!exited[i]) kept.push_back(std::move(ens.points[i]));
  ens.exits = ens.points.size() - kept.size();
  ens.unreliable = ens.exits > 1e-3 * static_cast<double>(ens.points.size());
  ens.points = std::move(kept);
}

}  // namespace detail

/// Sample of mu_{s,t} = (t-s)^{-1} int_s^t P_{r,t}(o, .) dr: each particle
/// draws r uniformly on [s, t] and runs one path from the origin.
inline ParticleEnsemble cesaro_ensemble(const Model& model, double s, double t, std::size_t n,
                                        std::uint64_t seed, const EnsembleSettings& cfg = {}) {
  if (!(s < t)) throw PreconditionError("cesaro_ensemble requires s < t");
  if (n < 1000) throw PreconditionError("cesaro_ensemble requires n >= 1000");
  model.check_time(t);
  model.check_time(s);
  ParticleEnsemble ens;
  ens.time = t;
  ens.points.resize(n);
  ens.provenance = {"cesaro", seed, {{"s", s}, {"t", t}, {"n", n}}};
  std::vector<char> exited(n, 0);
  model.visit([&](const auto& m) {
    parallel_for(n, [&](std::size_t i) {
      NoiseStream noise(seed, i);
      const double r = s + (t - s) * noise.uniform();
      Vector x = m.origin(r);
      exited[i] = detail::run_schedule(m, r, t, x, noise, cfg) ? 0 : 1;
      ens.points[i] = m.origin(t);
      if (!exited[i]) ens.points[i] = std::move(x);
    });
  });
  detail::finish(ens, exited);
  return ens;
}

/// P*_{s,t} mu_s: every particle advanced by one independent path.
inline ParticleEnsemble propagate_ensemble(const Model& model, const ParticleEnsemble& ens,
                                           double t, std::uint64_t seed,
                                           const EnsembleSettings& cfg = {}) {
  if (t < ens.time) throw PreconditionError("propagate_ensemble cannot go backwards in time");
  if (t == ens.time) return ens;
  model.check_time(t);
  ParticleEnsemble out;
  out.time = t;
  out.points = ens.points;
  out.provenance = {"propagated", seed,
                    {{"from", ens.time}, {"to", t}, {"source", ens.provenance.construction}}};
  std::vector<char> exited(out.points.size(), 0);
  model.visit([&](const auto& m) {
    parallel_for(out.points.size(), [&](std::size_t i) {
      NoiseStream noise(seed, i);
      exited[i] = detail::run_schedule(m, ens.time, t, out.points[i], noise, cfg) ? 0 : 1;
    });
  });
  detail::finish(out, exited);
  out.exits += ens.exits;
  out.unreliable = out.unreliable || ens.unreliable;
  return out;
}

// ---------------------------------------------------------------------------
// Functionals

struct MomentEstimate {
  double value = 0.0;
  double se = 0.0;
  std::size_t n = 0;
  bool divergence_suspected = false;
  double top_share = 0.0;  // share of the sum carried by the top 1% of samples

  Json to_json() const {
    Json j{{"value", value}, {"stderr", se}, {"n", n}};
    if (divergence_suspected) j["flags"] = std::vector<std::string>{"divergence_suspected"};
    return j;
  }
};

inline std::vector<double> squared_distances(const Model& model, const ParticleEnsemble& ens) {
  std::vector<double> r2(ens.n());
  for (std::size_t i = 0; i < ens.n(); ++i) {
    const double r = model.distance_to_origin(ens.time, ens.points[i]);
    r2[i] = r * r;
  }
  return r2;
}

/// mu_t(phi(rho_t)).
inline MomentEstimate moment(const Model& model, const ParticleEnsemble& ens,
                             const std::function<double(double)>& phi) {
  std::vector<double> v(ens.n());
  for (std::size_t i = 0; i < ens.n(); ++i)
    v[i] = phi(model.distance_to_origin(ens.time, ens.points[i]));
  const auto s = summarize(v);
  return {s.mean, s.stderr, s.n};
}

/// mu_t(f).
inline MomentEstimate mean_of(const ParticleEnsemble& ens, const TestFunction& f) {
  std::vector<double> v(ens.n());
  for (std::size_t i = 0; i < ens.n(); ++i) v[i] = f(ens.points[i]);
  const auto s = summarize(v);
  return {s.mean, s.stderr, s.n};
}

/// mu_t(exp(lambda rho_t^2)) with the heavy-tail flag: divergence is
/// suspected when the largest 1% of the samples carry more than half the sum.
inline MomentEstimate exp_moment(const Model& model, const ParticleEnsemble& ens, double lambda) {
  auto r2 = squared_distances(model, ens);
  std::vector<double> v(r2.size());
  for (std::size_t i = 0; i < r2.size(); ++i) v[i] = std::exp(lambda * r2[i]);
  const auto s = summarize(v);
  MomentEstimate e{s.mean, s.stderr, s.n};
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t top = std::max<std::size_t>(1, sorted.size() / 100);
  const double total = pairwise_sum(sorted);
  const double top_sum = pairwise_sum(std::span<const double>(sorted).last(top));
  e.top_share = total > 0.0 ? top_sum / total : 0.0;
  e.divergence_suspected = !std::isfinite(total) || e.top_share > 0.5;
  return e;
}

// ---------------------------------------------------------------------------
// Reference ensembles

/// Exact sample of the Gaussian evolution system of a flat linear model.
inline ParticleEnsemble gaussian_ensemble(const Model& model, double t, std::size_t n,
                                          std::uint64_t seed) {
  const auto p = mehler_params(model, t, t);
  ParticleEnsemble ens;
  ens.time = t;
  ens.points = exact_measure_sample(p, n, seed);
  ens.provenance = {"exact_gaussian", seed, {{"t", t}, {"v", p.v}}};
  return ens;
}

/// Normalized volume measure of the sphere at time t (its evolution system).
inline ParticleEnsemble uniform_sphere_ensemble(const Model& model, double t, std::size_t n,
                                                std::uint64_t seed) {
  const SphereModel* sp = model.sphere();
  if (!sp) throw DomainError("uniform_sphere_ensemble requires the shrinking sphere");
  model.check_time(t);
  const double r = sp->radius(t);
  ParticleEnsemble ens;
  ens.time = t;
  ens.points.assign(n, Vector(sp->ambient_dim()));
  for (std::size_t i = 0; i < n; ++i) {
    NoiseStream noise(seed, i);
    Vector& x = ens.points[i];
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = noise.gaussian();
    x *= r / x.norm();
  }
  ens.provenance = {"uniform_sphere", seed, {{"t", t}}};
  return ens;
}

/// Every point translated by `offset` (negative control for invariance).
inline ParticleEnsemble shifted(const ParticleEnsemble& ens, const Vector& offset) {
  ParticleEnsemble out = ens;
  for (auto& p : out.points) p += offset;
  out.provenance.construction += "+shift";
  return out;
}

// ---------------------------------------------------------------------------
// Evolution system construction

struct SystemSettings {
  double depth = 0.0;          // burn-in t - s; 0 selects 20 / mean k on [t-1, t]
  double cesaro_window = 0.0;  // 0 selects the depth
  int max_doublings = 2;
  std::size_t probe_particles = 5000;
  EnsembleSettings ensemble;
};

inline double default_depth(const Model& model, double t) {
  const double kbar = model.k_integral(t - 1.0, t);
  if (!(kbar > 0.0)) throw DomainError("no positive curvature bound near t; no burn-in rule");
  return 20.0 / kbar;
}

/// Cesaro average over [t - depth - window, t - depth] pushed forward to t.
inline ParticleEnsemble cesaro_then_propagate(const Model& model, double t, double depth,
                                              double window, std::size_t n, std::uint64_t seed,
                                              const EnsembleSettings& cfg) {
  const double b = t - depth;
  const auto early = cesaro_ensemble(model, b - window, b, n, derive_seed(seed, 1), cfg);
  auto ens = propagate_ensemble(model, early, t, derive_seed(seed, 2), cfg);
  ens.provenance = {"evolution_system", seed,
                    {{"t", t}, {"depth", depth}, {"cesaro_window", window}, {"n", n}}};
  return ens;
}

/// mu_t of the evolution system. The burn-in depth doubles until the first
/// and second moments of rho_t agree with the doubled depth within 1 SE.
inline ParticleEnsemble evolution_system(const Model& model, double t, std::size_t n,
                                         std::uint64_t seed, const SystemSettings& cfg = {}) {
  model.check_time(t);
  double depth = cfg.depth > 0.0 ? cfg.depth : default_depth(model, t);
  auto window = [&](double d) { return cfg.cesaro_window > 0.0 ? cfg.cesaro_window : d; };
  const std::size_t probe = std::max<std::size_t>(1000, std::min(n, cfg.probe_particles));
  int doublings = 0;
  for (; doublings < cfg.max_doublings; ++doublings) {
    const auto a = cesaro_then_propagate(model, t, depth, window(depth), probe,
                                         derive_seed(seed, 100 + doublings), cfg.ensemble);
    const auto b = cesaro_then_propagate(model, t, 2.0 * depth, window(2.0 * depth), probe,
                                         derive_seed(seed, 200 + doublings), cfg.ensemble);
    bool stable = true;
    for (auto phi : {+[](double r) { return r; }, +[](double r) { return r * r; }}) {
      const auto ma = moment(model, a, phi), mb = moment(model, b, phi);
      stable = stable && std::abs(ma.value - mb.value) <= std::hypot(ma.se, mb.se);
    }
    if (stable) break;
    depth *= 2.0;
  }
  auto ens = cesaro_then_propagate(model, t, depth, window(depth), n, seed, cfg.ensemble);
  ens.provenance.parameters["doublings"] = doublings;
  return ens;
}

// ---------------------------------------------------------------------------
// Invariance

struct Residual {
  double value = 0.0;  // lhs - rhs
  double se = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;

  bool within(double k) const { return std::abs(value) <= k * se; }
  Json to_json() const {
    return Json{{"residual", value}, {"stderr", se}, {"lhs", lhs}, {"rhs", rhs}};
  }
};

/// int P_{s,t} f d mu_s - int f d mu_t, with one path per particle of ens_s
/// (cycled when n_paths exceeds the ensemble size).
inline Residual invariance_residual(const Model& model, const ParticleEnsemble& ens_s,
                                    const ParticleEnsemble& ens_t, const TestFunction& f,
                                    std::size_t n_paths, std::uint64_t seed,
                                    const EnsembleSettings& cfg = {}) {
  if (ens_s.n() == 0 || ens_t.n() == 0) throw PreconditionError("empty ensemble");
  if (!(ens_s.time <= ens_t.time)) throw PreconditionError("ensembles must satisfy s <= t");
  std::vector<double> lhs(n_paths);
  model.visit([&](const auto& m) {
    parallel_for(n_paths, [&](std::size_t i) {
      NoiseStream noise(seed, i);
      Vector x = ens_s.points[i % ens_s.n()];
      lhs[i] = detail::run_schedule(m, ens_s.time, ens_t.time, x, noise, cfg)
                   ? f(x)
                   : std::numeric_limits<double>::quiet_NaN();
    });
  });
  std::erase_if(lhs, [](double v) { return std::isnan(v); });
  const auto a = summarize(lhs);
  const auto b = mean_of(ens_t, f);
  return {a.mean - b.value, std::hypot(a.stderr, b.se), a.mean, b.value};
}

// ---------------------------------------------------------------------------
// Convergence to the evolution system

struct ConvergenceSettings {
  std::size_t particles = 400;
  std::size_t paths_per_particle = 100;
  double max_dt = 1e-2;
};

struct ConvergencePoint {
  double s = 0.0;
  double k_integral = 0.0;  // int_s^t k
  double residual = 0.0;    // || P_{s,t} f - mu_t(f) ||_{2, mu_s}
  double se = 0.0;
  bool above_noise = false;
};

struct ConvergenceReport {
  std::vector<ConvergencePoint> points;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double prefactor = std::numeric_limits<double>::quiet_NaN();
  VerdictReport verdict;
};

/// Decay of ||P_{s,t} f - mu_t(f)||_{2, mu_s} against int_s^t k. For each
/// particle x of mu_s, M paths give the unbiased estimate
/// (mean - mu_t f)^2 - sample variance / M of (P_{s,t} f(x) - mu_t f)^2.
inline ConvergenceReport convergence_decay(
    const Model& model, double t, const TestFunction& f, const std::vector<double>& s_grid,
    const std::function<ParticleEnsemble(double s, std::uint64_t seed)>& system_at,
    double mu_t_f, std::uint64_t seed, const ConvergenceSettings& cfg = {}) {
  if (s_grid.size() < 2) throw PreconditionError("convergence_decay needs at least two s values");
  const std::size_t M = cfg.paths_per_particle;
  if (M < 2) throw PreconditionError("convergence_decay needs at least two paths per particle");
  ConvergenceReport rep;
  for (std::size_t si = 0; si < s_grid.size(); ++si) {
    const double s = s_grid[si];
    if (!(s < t)) throw PreconditionError("every s must lie below t");
    const auto ens = system_at(s, derive_seed(seed, 1000 + si));
    const std::size_t np = std::min(cfg.particles, ens.n());
    const TimeGrid grid = TimeGrid::with_max_step(s, t, cfg.max_dt);
    std::vector<double> est(np);
    for (std::size_t i = 0; i < np; ++i) {
      const auto vals = sample_endpoints(model, grid, ens.points[i], M,
                                         derive_seed(seed, (si << 32) + i),
                                         [&](const Vector& y) { return f(y); });
      const auto sm = summarize(vals);
      const double dev = sm.mean - mu_t_f;
      est[i] = dev * dev - sm.sd * sm.sd / static_cast<double>(M);
    }
    const auto e = summarize(est);
    ConvergencePoint pt;
    pt.s = s;
    pt.k_integral = model.k_integral(s, t);
    pt.residual = std::sqrt(std::max(e.mean, 0.0));
    pt.se = e.mean > 0.0 ? e.stderr / (2.0 * pt.residual) : std::sqrt(e.stderr);
    pt.above_noise = e.mean > 3.0 * e.stderr;
    rep.points.push_back(pt);
  }
  std::vector<double> xs, ys;
  for (const auto& p : rep.points)
    if (p.above_noise) {
      xs.push_back(p.k_integral);
      ys.push_back(std::log(p.residual));
    }
  auto& v = rep.verdict;
  v.check_id = "convergence_decay";
  v.paper_ref = "exponential convergence to the evolution system";
  v.inputs = {{"t", t}, {"s_grid", s_grid}, {"function", f.to_json()}, {"seed", seed}};
  if (xs.size() >= 2) {
    const auto fit = fit_line(xs, ys);
    rep.slope = fit.slope;
    rep.prefactor = std::exp(fit.intercept);
    v.lhs = rep.slope;
    v.rhs = -0.8;
    v.slack = v.rhs - v.lhs;
    v.verdict = rep.slope <= -0.8 ? Verdict::Pass : Verdict::Fail;
  } else {
    v.verdict = Verdict::Inconclusive;
  }
  Json pts = Json::array();
  for (const auto& p : rep.points)
    pts.push_back({{"s", p.s}, {"k_integral", p.k_integral}, {"residual", p.residual},
                   {"stderr", p.se}, {"above_noise", p.above_noise}});
  v.details["points"] = pts;
  v.details["slope"] = xs.size() >= 2 ? Json(rep.slope) : Json(nullptr);
  v.details["prefactor"] = xs.size() >= 2 ? Json(rep.prefactor) : Json(nullptr);
  return rep;
}

// ---------------------------------------------------------------------------
// Differentiation along the flow

/// Space-time test function phi(r) g(x) with analytic (d/dr + L_r) on the
/// flat linear family; phi(r) = exp(a r).
struct SpaceTimeFunction {
  enum class Kind { Norm2, Coordinate };
  Kind kind = Kind::Norm2;
  double rate = 0.0;
  int axis = 0;

  static SpaceTimeFunction norm2_exp(double a) { return {Kind::Norm2, a, 0}; }
  static SpaceTimeFunction coordinate_exp(int i, double a) { return {Kind::Coordinate, a, i}; }

  double operator()(double r, const Vector& x) const {
    const double phi = std::exp(rate * r);
    return phi * (kind == Kind::Norm2 ? x.squaredNorm() : x[axis]);
  }

  /// (d/dr + L_r) f at (r, x); L_r = c(r)^-2 Laplacian - lambda(r) x . grad.
  double generator(const Model& model, double r, const Vector& x) const {
    const FlatModel* flat = model.flat();
    if (!flat) throw DomainError("analytic generator is available on the flat family only");
    const double phi = std::exp(rate * r);
    const double c = flat->scale(r);
    const double lam = flat->drift_spec().rate(r);
    if (kind == Kind::Norm2)
      return rate * phi * x.squaredNorm() +
             phi * (2.0 * model.dim() / (c * c) - 2.0 * lam * x.squaredNorm());
    return rate * phi * x[axis] - phi * lam * x[axis];
  }
};

/// d/dr mu_r(f(r, .)) by a central difference over particles carried from
/// r - dr through r to r + dr, against mu_r((d/dr + L_r) f).
inline Residual flow_derivative_check(const Model& model, const ParticleEnsemble& ens_minus,
                                      const SpaceTimeFunction& f, double dr, std::uint64_t seed,
                                      double max_dt = 1e-3) {
  if (!(dr > 0.0)) throw DomainError("dr must be positive");
  const double r = ens_minus.time + dr;
  const std::size_t n = ens_minus.n();
  std::vector<double> z(n), lhs(n), rhs(n);
  model.visit([&](const auto& m) {
    parallel_for(n, [&](std::size_t i) {
      NoiseStream noise(seed, i);
      PathKernel kernel(m);
      const Vector& x0 = ens_minus.points[i];
      kernel.start(ens_minus.time, x0);
      const double f_minus = f(ens_minus.time, x0);
      kernel.advance(TimeGrid::with_max_step(ens_minus.time, r, max_dt), noise);
      const double gen = f.generator(model, r, kernel.x());
      kernel.advance(TimeGrid::with_max_step(r, r + dr, max_dt), noise);
      lhs[i] = (f(r + dr, kernel.x()) - f_minus) / (2.0 * dr);
      rhs[i] = gen;
      z[i] = lhs[i] - rhs[i];
    });
  });
  const auto sz = summarize(z);
  return {sz.mean, sz.stderr, summarize(lhs).mean, summarize(rhs).mean};
}

// ---------------------------------------------------------------------------
// Snapshots

/// JSONL: a header {time, n, seed, model_hash} then one {coords} per particle.
inline void write_ensemble_jsonl(const Model& model, const ParticleEnsemble& ens, std::ostream& os) {
  Json h;
  h["time"] = ens.time;
  h["n"] = ens.n();
  h["seed"] = ens.provenance.seed;
  h["model_hash"] = io::model_hash(model);
  h["construction"] = ens.provenance.construction;
  os << h.dump() << '\n';
  for (const auto& p : ens.points) {
    Json j;
    j["coords"] = std::vector<double>(p.data(), p.data() + p.size());
    os << j.dump() << '\n';
  }
}

/// Reads a snapshot; rejects it when the model hash or the count disagree.
inline ParticleEnsemble read_ensemble_jsonl(const Model& model, std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw PreconditionError("ensemble snapshot is empty");
  const Json h = Json::parse(line);
  if (h.at("model_hash").get<std::string>() != io::model_hash(model))
    throw PreconditionError("ensemble snapshot was produced for a different model");
  ParticleEnsemble ens;
  ens.time = h.at("time").get<double>();
  ens.provenance.seed = h.at("seed").get<std::uint64_t>();
  ens.provenance.construction = h.value("construction", std::string("snapshot"));
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c = Json::parse(line).at("coords").get<std::vector<double>>();
    ens.points.push_back(Eigen::Map<const Vector>(c.data(), static_cast<Eigen::Index>(c.size())));
  }
  if (ens.n() != h.at("n").get<std::size_t>())
    throw PreconditionError("ensemble snapshot is truncated");
  ens.validate(model);
  return ens;
}

}  // namespace evoflow
