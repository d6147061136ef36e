#pragma once

// Coefficient profiles and hypothesis checks: the curvature lower bound k,
// the Lyapunov profiles H and H_1, the two integrability conditions on k,
// the non-explosion integral test, the radial drift comparison bound, and
// the rate functions used for ultraboundedness.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "profile.hpp"
#include "quadrature.hpp"
#include "report.hpp"

namespace evoflow {

// ---------------------------------------------------------------------------
// Types

/// Increasing function phi with phi(0) = 0 used in Lyapunov conditions.
struct PhiSpec {
  enum class Kind { Identity, Square, ExpSquareMinusOne };
  Kind kind = Kind::Square;
  double lambda = 0.0;  // ExpSquareMinusOne only

  double operator()(double r) const {
    switch (kind) {
      case Kind::Identity:
        return r;
      case Kind::Square:
        return r * r;
      case Kind::ExpSquareMinusOne:
        return std::expm1(lambda * r * r);
    }
    return 0.0;
  }
};

struct LyapunovSpec {
  PhiSpec phi;
  Profile a = Profile::constant(0.0);
  Profile c = Profile::constant(0.0);
  Profile m = Profile::constant(0.0);
};

struct H3Config {
  double epsilon = 1.0;
  Profile ell = Profile::constant(1.0);
  /// t -> |Z_t|_t(o); when empty the model's own value is used.
  std::optional<Profile> z_at_origin;

  void validate() const {
    if (!(epsilon > 0.0)) throw DomainError("H3 epsilon must be positive");
  }
};

/// Positive increasing gamma used in the ultraboundedness Lyapunov condition.
struct GammaSpec {
  enum class Kind { Linear, Power, Logarithmic };
  Kind kind = Kind::Linear;
  double alpha = 1.0;
  double delta = 1.0;  // Power only

  static GammaSpec linear(double alpha) { return {Kind::Linear, alpha, 1.0}; }
  static GammaSpec power(double alpha, double delta) { return {Kind::Power, alpha, delta}; }
  static GammaSpec logarithmic(double alpha) { return {Kind::Logarithmic, alpha, 1.0}; }

  double operator()(double r) const {
    switch (kind) {
      case Kind::Linear:
        return alpha * r;
      case Kind::Power:
        return alpha * std::pow(r, delta);
      case Kind::Logarithmic:
        return alpha * std::log(r);
    }
    return 0.0;
  }
};

// ---------------------------------------------------------------------------
// Curvature bound and window integrals

/// Exact lower bound k(t) of R^Z for the model, with closed-form integral.
inline Profile k_bound(const Model& model) {
  const double anchor = std::isfinite(model.horizon()) ? model.horizon() - 1.0 : 0.0;
  return Profile::custom(
      "k_bound", [model](double t) { return model.k(t); }, {},
      [model, anchor](double t) { return model.k_integral(anchor, t); });
}

/// \int_s^t exp(-2 \int_r^t k) dr, the log-Sobolev window constant.
template <class KIntegral>
double lsi_window(KIntegral&& k_int, double s, double t) {
  if (t <= s) return 0.0;
  return quad::integrate([&](double r) { return std::exp(-2.0 * k_int(r, t)); }, s, t, 1e-13)
      .value;
}

/// \int_s^t exp(2 \int_s^r k) dr, the Harnack / Bismut window constant.
template <class KIntegral>
double harnack_window(KIntegral&& k_int, double s, double t) {
  if (t <= s) return 0.0;
  return quad::integrate([&](double r) { return std::exp(2.0 * k_int(s, r)); }, s, t, 1e-13)
      .value;
}

inline double lsi_window(const Model& model, double s, double t) {
  return lsi_window([&](double a, double b) { return model.k_integral(a, b); }, s, t);
}
inline double harnack_window(const Model& model, double s, double t) {
  return harnack_window([&](double a, double b) { return model.k_integral(a, b); }, s, t);
}

// ---------------------------------------------------------------------------
// Lyapunov profiles

/// H(t) = \int_{-inf}^t exp(-\int_r^t c) a(r) dr.
inline TailIntegral h2_profile(const LyapunovSpec& spec, double t,
                               const QuadratureSettings& q = {}) {
  return quad::discounted_integral([&](double r) { return -spec.c.integral(r, t); },
                                   [&](double r) { return spec.c(r); },
                                   [&](double r) { return spec.a(r); }, t, q);
}

/// k_eps(t) = sup |Ric_t| over the eps-ball around o.
inline double k_eps(const Model& model, double t, double epsilon) {
  if (!(epsilon > 0.0)) throw DomainError("k_eps requires epsilon > 0");
  model.check_time(t);
  return model.visit([&](const auto& m) { return m.ricci_sup(t); });
}

inline double z_origin_norm(const Model& model, const H3Config& cfg, double t) {
  return cfg.z_at_origin ? (*cfg.z_at_origin)(t) : model.drift_norm_at_origin(t);
}

/// B_1(t) = 2d + (3(d-1)/eps + 3 k_eps eps + 2|Z|(o))^2 / (4 ell).
inline double h1_source(const Model& model, const H3Config& cfg, double t) {
  const int d = model.dim();
  const double ke = model.visit([&](const auto& m) { return m.ricci_sup(t); });
  const double inner =
      3.0 * (d - 1) / cfg.epsilon + 3.0 * ke * cfg.epsilon + 2.0 * z_origin_norm(model, cfg, t);
  return 2.0 * d + inner * inner / (4.0 * cfg.ell(t));
}

/// H_1(t) = \int_{-inf}^t exp(-\int_r^t A_1) B_1(r) dr with A_1 = 2k - ell.
inline TailIntegral h1_profile(const Model& model, const H3Config& cfg, double t,
                               const QuadratureSettings& q = {}) {
  cfg.validate();
  model.check_time(t);
  return quad::discounted_integral(
      [&](double r) { return -(2.0 * model.k_integral(r, t) - cfg.ell.integral(r, t)); },
      [&](double r) { return 2.0 * model.k(r) - cfg.ell(r); },
      [&](double r) { return h1_source(model, cfg, r); }, t, q);
}

namespace detail {
inline Json tail_json(const TailIntegral& ti) {
  Json j;
  j["status"] = to_string(ti.status);
  j["value"] = ti.value;
  j["cutoff"] = ti.cutoff;
  return j;
}
}  // namespace detail

/// Curvature-drift condition at t: \int e^{-2\int k} < inf, \int k = +inf and H_1(t) < inf.
inline VerdictReport check_h3(const Model& model, const H3Config& cfg, double t,
                              const QuadratureSettings& q = {}) {
  cfg.validate();
  model.check_time(t);
  const auto decay = quad::discounted_integral(
      [&](double r) { return -2.0 * model.k_integral(r, t); },
      [&](double r) { return 2.0 * model.k(r); }, [](double) { return 1.0; }, t, q);
  const auto k_total = quad::doubling_integral(
      [&](double l0, double l1) {
        return quad::Result{model.k_integral(t - l1, t - l0), 0.0};
      },
      [](double, double) { return std::numeric_limits<double>::quiet_NaN(); }, q);
  const auto h1 = h1_profile(model, cfg, t, q);

  VerdictReport rep;
  rep.check_id = "h3";
  rep.paper_ref = "curvature-drift hypothesis with finite H1";
  rep.inputs = {{"t", t}, {"epsilon", cfg.epsilon}, {"model", to_string(model.kind())}};
  rep.lhs = decay.value;
  rep.details["decay_integral"] = detail::tail_json(decay);
  rep.details["k_integral"] = detail::tail_json(k_total);
  rep.details["h1"] = detail::tail_json(h1);

  if (decay.divergent() || k_total.finite() || h1.divergent())
    rep.verdict = Verdict::Fail;
  else if (decay.finite() && k_total.divergent() && h1.finite())
    rep.verdict = Verdict::Pass;
  else
    rep.verdict = Verdict::Inconclusive;
  return rep;
}

/// Lyapunov condition at t: phi(0) = 0 and H(t) < inf.
inline VerdictReport check_h2(const LyapunovSpec& spec, double t,
                              const QuadratureSettings& q = {}) {
  const auto h = h2_profile(spec, t, q);
  VerdictReport rep;
  rep.check_id = "h2";
  rep.paper_ref = "Lyapunov hypothesis with finite H";
  rep.inputs = {{"t", t}};
  rep.lhs = h.value;
  rep.details["h"] = detail::tail_json(h);
  rep.details["phi_at_zero"] = spec.phi(0.0);
  if (spec.phi(0.0) != 0.0 || h.divergent())
    rep.verdict = Verdict::Fail;
  else
    rep.verdict = h.finite() ? Verdict::Pass : Verdict::Inconclusive;
  return rep;
}

/// m need only be continuous; report its sup over a time window.
inline double h1_window_sup_m(const LyapunovSpec& spec, double s, double t, int samples = 257) {
  double sup = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < samples; ++i) sup = std::max(sup, spec.m(s + (t - s) * i / (samples - 1.0)));
  return sup;
}

// ---------------------------------------------------------------------------
// Non-explosion

enum class ExplosionVerdict { NonExplosive, Inconclusive };

inline const char* to_string(ExplosionVerdict v) {
  return v == ExplosionVerdict::NonExplosive ? "non_explosive" : "inconclusive";
}

struct NonExplosionResult {
  ExplosionVerdict verdict = ExplosionVerdict::Inconclusive;
  TailIntegral outer;
};

/// Integral test \int_1^inf dt \int_1^t exp(-\int_r^t psi) dr = inf.
inline NonExplosionResult nonexplosion_test(const Profile& psi,
                                            const QuadratureSettings& q = {}) {
  auto inner = [&](double t) {
    if (t <= 1.0) return 0.0;
    return quad::integrate(
               [&](double r) {
                 const double e = psi.integral(r, t);
                 return e > 745.0 ? 0.0 : std::exp(-e);
               },
               1.0, t, q.rel_tol * 1e-2)
        .value;
  };
  auto segment = [&](double l0, double l1) {
    return quad::integrate(inner, 1.0 + l0, 1.0 + l1, q.rel_tol * 1e-2);
  };
  NonExplosionResult res;
  res.outer = quad::doubling_integral(
      segment, [](double, double) { return std::numeric_limits<double>::quiet_NaN(); }, q);
  res.verdict = res.outer.divergent() ? ExplosionVerdict::NonExplosive
                                      : ExplosionVerdict::Inconclusive;
  return res;
}

// ---------------------------------------------------------------------------
// Radial comparison

/// F_t(s) = sqrt(k_eps (d-1)) coth(sqrt(k_eps/(d-1)) (s ^ eps)) + k_eps (s ^ eps),
/// with the k_eps -> 0 limit (d-1)/(s ^ eps).
inline double radial_comparison(int dim, double k_eps_value, double s, double epsilon) {
  const double m = std::min(s, epsilon);
  const double n = dim - 1.0;
  if (dim == 1) return k_eps_value * m;
  if (k_eps_value <= 0.0) return n / m;
  const double x = std::sqrt(k_eps_value / n) * m;
  return std::sqrt(k_eps_value * n) / std::tanh(x) + k_eps_value * m;
}

/// Upper bound F_t(rho) - k(t) rho + |Z_t|(o) on (L_t + d/dt) rho_t.
inline double radial_drift_bound(const Model& model, double t, double rho, const H3Config& cfg) {
  if (!(rho > 0.0)) throw DomainError("radial_drift_bound requires rho > 0");
  cfg.validate();
  const double ke = k_eps(model, t, cfg.epsilon);
  return radial_comparison(model.dim(), ke, rho, cfg.epsilon) - model.k(t) * rho +
         z_origin_norm(model, cfg, t);
}

/// Bound on (L_t + d/dt) rho_t^2 used by the Lyapunov criteria.
inline double rho_squared_drift_bound(const Model& model, double t, double rho,
                                      const H3Config& cfg) {
  return 2.0 * rho * radial_drift_bound(model, t, rho, cfg) + 2.0 * model.dim();
}

/// Smallest c such that (L_t + d/dt) rho^2 <= c - gamma(rho^2) on the grid.
/// Fails when the requirement is still increasing at the outer edge of the
/// rho grid (no finite c).
inline VerdictReport lyapunov_gamma_check(const Model& model, const GammaSpec& gamma,
                                          const std::vector<double>& rho_grid,
                                          const std::vector<double>& time_grid,
                                          const H3Config& cfg = {}) {
  if (rho_grid.size() < 3) throw PreconditionError("rho grid needs at least 3 points");
  if (time_grid.empty()) throw PreconditionError("time grid is empty");
  double admissible = -std::numeric_limits<double>::infinity();
  bool unbounded = false;
  for (double t : time_grid) {
    std::vector<double> need(rho_grid.size());
    for (std::size_t i = 0; i < rho_grid.size(); ++i) {
      const double rho = rho_grid[i];
      need[i] = rho_squared_drift_bound(model, t, rho, cfg) + gamma(rho * rho);
      admissible = std::max(admissible, need[i]);
    }
    const std::size_t last = need.size() - 1;
    if (need[last] >= need[last - 1] && need[last] >= *std::max_element(need.begin(), need.end()))
      unbounded = true;
  }
  VerdictReport rep;
  rep.check_id = "lyapunov_gamma";
  rep.paper_ref = "space-time Lyapunov condition for ultraboundedness";
  rep.inputs = {{"gamma_alpha", gamma.alpha},
                {"gamma_delta", gamma.delta},
                {"rho_min", rho_grid.front()},
                {"rho_max", rho_grid.back()}};
  rep.lhs = admissible;
  rep.verdict = unbounded ? Verdict::Fail : Verdict::Pass;
  rep.details["admissible_c"] = unbounded ? Json(nullptr) : Json(admissible);
  return rep;
}

// ---------------------------------------------------------------------------
// Ultraboundedness rates

/// delta / (delta - 1).
inline double ultrabound_exponent(double delta) {
  if (!(delta > 1.0)) throw DomainError("ultrabound exponent requires delta > 1");
  return delta / (delta - 1.0);
}

/// exp(c dt^{-delta/(delta-1)}).
inline double ultrabound_rate(double c, double delta, double dt) {
  if (!(dt > 0.0)) throw DomainError("ultrabound rate requires dt > 0");
  return std::exp(c * std::pow(dt, -ultrabound_exponent(delta)));
}

/// G(r) = \int_r^inf ds / (s gamma(log(s)/lambda)), r > 1.
inline double gamma_tail_G(const GammaSpec& gamma, double lambda, double r,
                           const QuadratureSettings& q = {}) {
  if (!(r > 1.0)) throw DomainError("G(r) requires r > 1");
  if (!(lambda > 0.0)) throw DomainError("G(r) requires lambda > 0");
  const double u0 = std::log(r);
  if (gamma.kind == GammaSpec::Kind::Power && gamma.delta > 1.0)
    return std::pow(lambda, gamma.delta) / (gamma.alpha * (gamma.delta - 1.0)) *
           std::pow(u0, 1.0 - gamma.delta);
  // Substituting u = log s: G = \int_{log r}^inf du / gamma(u / lambda).
  auto seg = [&](double l0, double l1) {
    return quad::integrate([&](double u) { return 1.0 / gamma(u / lambda); }, u0 + l0, u0 + l1,
                           q.rel_tol * 1e-2);
  };
  const auto res = quad::doubling_integral(
      seg, [](double, double) { return std::numeric_limits<double>::quiet_NaN(); }, q);
  if (!res.finite())
    throw DomainError("gamma fails the ultraboundedness integrability condition (G divergent)");
  return res.value;
}

/// theta_s(t) <= G^{-1}(lambda dt / 4) v c2, with G inverted by bisection.
inline double theta_bound(const GammaSpec& gamma, double lambda, double dt, double c2 = 1.0,
                          const QuadratureSettings& q = {}) {
  if (!(dt > 0.0)) throw DomainError("theta_bound requires dt > 0");
  const double target = lambda * dt / 4.0;
  // G is decreasing in u = log r; bracket the root in u.
  auto g_of_u = [&](double u) { return gamma_tail_G(gamma, lambda, std::exp(u), q); };
  double lo = 1e-12;
  double hi = 1.0;
  if (g_of_u(lo) < target) return std::max(1.0, c2);  // G^{-1}(target) below 1 + 1e-12
  while (g_of_u(hi) > target) {
    hi *= 2.0;
    if (hi > 700.0) return std::numeric_limits<double>::infinity();
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g_of_u(mid) > target ? lo : hi) = mid;
  }
  return std::max(std::exp(0.5 * (lo + hi)), c2);
}

// ---------------------------------------------------------------------------
// Super-log-Sobolev constants from a contractivity bound

struct ContractivityBeta {
  double gamma;       // gamma_t(t - s)
  double beta_tilde;  // beta~_t(t - s)
};

inline ContractivityBeta beta_from_contractivity(const Profile& k, double p, double q, double s,
                                                 double t, double log_c) {
  if (!(p >= 2.0)) throw DomainError("beta_from_contractivity requires p >= 2");
  if (!(p < q)) throw DomainError("beta_from_contractivity requires p < q");
  if (!(log_c >= 0.0)) throw DomainError("beta_from_contractivity requires log C >= 0");
  if (!(s < t)) throw DomainError("beta_from_contractivity requires s < t");
  const double window = lsi_window([&](double a, double b) { return k.integral(a, b); }, s, t);
  return {4.0 * p * (q - 1.0) / (q - p) * window, p * q / (q - p) * log_c};
}

}  // namespace evoflow
