#pragma once

// Functional inequalities for P_{s,t}: semigroup log-Sobolev, hypercontractive
// exponents and norm checks, super-log-Sobolev profiles, supercontractivity and
// ultraboundedness probes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "coefficients.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "measures.hpp"
#include "oracle.hpp"
#include "profile.hpp"
#include "quadrature.hpp"
#include "report.hpp"
#include "semigroup.hpp"
#include "stats.hpp"
#include "test_functions.hpp"

namespace evoflow {

// ---------------------------------------------------------------------------
// Semigroup log-Sobolev inequality

inline constexpr double kEntropyDelta = 1e-6;

/// P(f^2 log f^2) <= 4 W P|grad f|^2 + Pf^2 log Pf^2 at x, W = int_s^t e^{-2 int_r^t k},
/// for f_delta = (f^2 + delta)^{1/2}. All three terms share the same paths.
inline VerdictReport semigroup_lsi_check(const Model& model, const TimeGrid& grid,
                                         const SpacePoint& x, const TestFunction& f,
                                         std::size_t n_paths, std::uint64_t seed,
                                         double delta = kEntropyDelta) {
  check_path_count(n_paths);
  const double s = grid.s, t = grid.t;
  const double window = lsi_window(model, s, t);
  // Per path: (g log g, |grad f_delta|^2, g) with g = f_delta^2.
  std::vector<double> a(n_paths), b(n_paths), c(n_paths);
  std::vector<char> exited(n_paths, 0);
  model.visit([&](const auto& m) {
    parallel_for(n_paths, [&](std::size_t i) {
      NoiseStream noise(seed, i);
      PathKernel kernel(m);
      kernel.start(s, x.coords);
      if (!kernel.advance(grid, noise)) {
        exited[i] = 1;
        return;
      }
      const Vector& y = kernel.x();
      const double fy = f(y);
      const double g = fy * fy + delta;
      const double gn = gradient_norm(model, t, f, y);
      a[i] = g * std::log(g);
      b[i] = fy * fy * gn * gn / g;
      c[i] = g;
    });
  });
  std::vector<double> za, zb, zc;
  for (std::size_t i = 0; i < n_paths; ++i)
    if (!exited[i]) {
      za.push_back(a[i]);
      zb.push_back(b[i]);
      zc.push_back(c[i]);
    }
  const auto sa = summarize(za), sb = summarize(zb), sc = summarize(zc);
  const double lhs = sa.mean;
  const double rhs = 4.0 * window * sb.mean + sc.mean * std::log(sc.mean);
  // Delta method on the slack rhs - lhs.
  std::vector<double> z(za.size());
  const double dlog = std::log(sc.mean) + 1.0;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = 4.0 * window * zb[i] + dlog * zc[i] - za[i];
  const auto sz = summarize(z);

  VerdictReport v;
  v.check_id = "semigroup_lsi";
  v.paper_ref = "semigroup log-Sobolev inequality";
  v.inputs = {{"s", s},
              {"t", t},
              {"x", std::vector<double>(x.coords.data(), x.coords.data() + x.coords.size())},
              {"function", f.to_json()},
              {"n_paths", n_paths},
              {"seed", seed},
              {"n_steps", grid.n_steps},
              {"delta", delta}};
  v.lhs = lhs;
  v.rhs = rhs;
  v.slack = rhs - lhs;
  v.se = sz.stderr;
  // Rounding allowance for the degenerate case of constant f, where se is 0.
  v.verdict = compare_le(lhs, rhs + 1e-12 * std::max(1.0, std::abs(rhs)), v.se);
  v.details = {{"window_constant", 4.0 * window},
               {"energy", sb.mean},
               {"mass", sc.mean},
               {"exits", n_paths - za.size()}};
  if (n_paths - za.size() > kUnreliableExitShare * n_paths)
    v.details["flags"] = std::vector<std::string>{"unreliable"};
  return v;
}

// ---------------------------------------------------------------------------
// Hypercontractive exponents

struct HyperSchedule {
  enum class Variant { PaperPrinted, NelsonType };
  double p = 2.0;
  Profile k = Profile::constant(0.0);
  double s = 0.0;
  double t = 0.0;
  Variant variant = Variant::NelsonType;

  void validate() const {
    if (!(p > 1.0)) throw DomainError("hypercontractive exponent p must exceed 1");
    if (!(s <= t)) throw DomainError("hyper schedule requires s <= t");
  }
};

inline const char* to_string(HyperSchedule::Variant v) {
  return v == HyperSchedule::Variant::PaperPrinted ? "paper_printed" : "nelson_type";
}

struct HyperThreshold {
  HyperSchedule::Variant variant = HyperSchedule::Variant::NelsonType;
  double q_max = 1.0;
  bool exponent_divergent = false;
  double exponent = 0.0;  // the integral inside exp(-...) or exp(2...)
  TailIntegral tail;

  Json to_json() const {
    Json j{{"variant", to_string(variant)}, {"q_max", q_max}, {"exponent", exponent}};
    if (exponent_divergent) j["flags"] = std::vector<std::string>{"exponent_divergent"};
    return j;
  }
};

/// Largest q permitted by the schedule. The printed exponent
/// (1/4) int_s^t (int_r^t e^{-2 int_u^t k} du)^{-1} dr is integrated after the
/// substitution r = t - (t-s) e^{-u}, which turns the endpoint singularity into
/// a half-line tail that the doubling quadrature can certify or reject.
inline HyperThreshold hyper_q_threshold(const HyperSchedule& h, const QuadratureSettings& q = {}) {
  h.validate();
  HyperThreshold out;
  out.variant = h.variant;
  if (h.t == h.s) {
    out.q_max = h.p;
    return out;
  }
  if (h.variant == HyperSchedule::Variant::NelsonType) {
    out.exponent = 2.0 * h.k.integral(h.s, h.t);
    out.q_max = std::exp(out.exponent) * (h.p - 1.0) + 1.0;
    return out;
  }
  const double len = h.t - h.s;
  // With d = t - r, d / int_r^t e^{-2 int_u^t k} du = 1 / int_0^1 e^{-2 int_{t - d xi}^t k} dxi.
  auto integrand = [&](double u) {
    const double d = len * std::exp(-u);
    const double mean = quad::integrate(
        [&](double xi) { return std::exp(-2.0 * h.k.integral(h.t - d * xi, h.t)); }, 0.0, 1.0, 1e-10)
        .value;
    return 0.25 / mean;
  };
  auto segment = [&](double l0, double l1) { return quad::integrate(integrand, l0, l1, 1e-10); };
  auto no_bound = [](double, double) { return std::numeric_limits<double>::quiet_NaN(); };
  QuadratureSettings qs = q;
  qs.max_doublings = std::min(qs.max_doublings, 9);
  out.tail = quad::doubling_integral(segment, no_bound, qs);
  out.exponent = out.tail.value;
  if (out.tail.finite()) {
    out.q_max = std::exp(-out.exponent) * (h.p - 1.0) + 1.0;
  } else {
    out.exponent_divergent = true;
    out.q_max = 1.0;
  }
  return out;
}

inline VerdictReport hyper_threshold_report(const HyperSchedule& h, const QuadratureSettings& q = {}) {
  const auto th = hyper_q_threshold(h, q);
  VerdictReport v;
  v.check_id = "hyper_threshold";
  v.paper_ref = "hypercontractivity exponent";
  v.inputs = {{"p", h.p}, {"s", h.s}, {"t", h.t}, {"k", h.k.name()}, {"variant", to_string(h.variant)}};
  v.lhs = th.q_max;
  v.rhs = th.q_max;
  v.slack = 0.0;
  v.verdict = th.exponent_divergent ? Verdict::ExponentDivergent : Verdict::Pass;
  v.details = th.to_json();
  return v;
}

// ---------------------------------------------------------------------------
// Norm checks on the Gaussian oracle

/// One-dimensional test function acting on the first chart coordinate.
struct ScalarTest {
  std::string name;
  std::function<double(double)> fn;
};

inline std::string short_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

inline ScalarTest constant_test(double a) {
  return {"constant(" + short_number(a) + ")", [a](double) { return a; }};
}

inline std::vector<ScalarTest> gaussian_exponential_family(const std::vector<double>& rates) {
  std::vector<ScalarTest> fam;
  for (double a : rates)
    fam.push_back({"exp(" + short_number(a) + "*x)", [a](double x) { return std::exp(a * x); }});
  return fam;
}

/// 1 + eps He_n(x / sqrt(v)) for n = 1..max_degree with probabilists' Hermite He_n.
inline std::vector<ScalarTest> hermite_mixture_family(double v, double eps, int max_degree) {
  std::vector<ScalarTest> fam;
  const double sd = std::sqrt(v);
  for (int n = 1; n <= max_degree; ++n)
    fam.push_back({"1+" + short_number(eps) + "*He" + std::to_string(n), [=](double x) {
                     const double y = x / sd;
                     double h0 = 1.0, h1 = y;
                     for (int j = 1; j < n; ++j) {
                       const double h2 = y * h1 - j * h0;
                       h0 = h1;
                       h1 = h2;
                     }
                     return 1.0 + eps * (n == 0 ? 1.0 : h1);
                   }});
  return fam;
}

struct NormRatio {
  std::string name;
  double numerator = 0.0;    // ||P_{s,t} f||_{q, mu_s}
  double denominator = 0.0;  // ||f||_{p, mu_t}
  double ratio = 0.0;
};

struct NormCheckResult {
  double p = 0.0;
  double q = 0.0;
  double max_ratio = 0.0;
  std::string argmax;
  std::vector<NormRatio> ratios;
  VerdictReport verdict;
};

/// max over the family of ||P_{s,t} f||_{q,s} / ||f||_{p,t} with exact Gaussian
/// quadrature. This is a lower bound on the operator norm, never the norm itself.
inline NormCheckResult norm_check(const Model& model, double p, double q, double s, double t,
                                  const std::vector<ScalarTest>& family) {
  if (!(q > p)) throw DomainError("norm_check requires q > p; use a contraction check instead");
  if (!(p >= 1.0)) throw DomainError("norm_check requires p >= 1");
  const auto kern = mehler_params(model, s, t);
  const auto at_s = mehler_params(model, s, s);
  const auto at_t = mehler_params(model, t, t);
  if (!kern.measure_exists) throw DomainError("no evolution system exists for this model");
  NormCheckResult out;
  out.p = p;
  out.q = q;
  for (const auto& f : family) {
    auto pf = [&](double x) { return gaussian_expectation(kern.m * x, kern.sigma2, f.fn); };
    const double num = std::pow(
        gaussian_expectation(0.0, at_s.v, [&](double x) { return std::pow(std::abs(pf(x)), q); }),
        1.0 / q);
    const double den = std::pow(
        gaussian_expectation(0.0, at_t.v, [&](double x) { return std::pow(std::abs(f.fn(x)), p); }),
        1.0 / p);
    NormRatio r{f.name, num, den, num / den};
    if (r.ratio > out.max_ratio || out.argmax.empty()) {
      out.max_ratio = r.ratio;
      out.argmax = r.name;
    }
    out.ratios.push_back(r);
  }
  auto& v = out.verdict;
  v.check_id = "norm_check";
  v.paper_ref = "L^p(mu_t) to L^q(mu_s) contractivity";
  v.inputs = {{"p", p}, {"q", q}, {"s", s}, {"t", t}, {"family_size", family.size()}};
  v.lhs = out.max_ratio;
  v.rhs = 1.0;
  v.slack = 1.0 - out.max_ratio;
  v.verdict = out.max_ratio <= 1.0 + 1e-6 ? Verdict::Pass : Verdict::Fail;
  Json rs = Json::array();
  for (const auto& r : out.ratios)
    rs.push_back({{"function", r.name}, {"ratio", r.ratio}});
  v.details = {{"argmax", out.argmax}, {"ratios", rs}};
  return out;
}

// ---------------------------------------------------------------------------
// Super-log-Sobolev profile

struct SuperLSIProfile {
  std::vector<double> r_grid;
  std::vector<double> beta;
  std::vector<double> se;
  std::vector<double> envelope;  // smallest non-increasing majorant of beta
};

/// Empirical beta_s(r) = max over the family of
/// (Ent_{mu_s}(f^2) - r ||grad f||^2_{2,s}) / ||f||^2_{2,s}, floored at 0.
inline std::pair<SuperLSIProfile, VerdictReport> super_lsi_check(
    const Model& model, const ParticleEnsemble& ens, const std::vector<double>& r_grid,
    const std::vector<TestFunction>& family, double delta = kEntropyDelta) {
  if (r_grid.empty()) throw PreconditionError("super_lsi_check needs a non-empty r grid");
  if (ens.n() < 2) throw PreconditionError("super_lsi_check needs an ensemble");
  for (double r : r_grid)
    if (!(r > 0.0)) throw DomainError("super_lsi_check requires positive r");
  const double s = ens.time;
  const std::size_t n = ens.n();

  struct Moments {
    std::vector<double> g, glog, energy;
    SampleSummary sg, sglog, se;
  };
  std::vector<Moments> mom(family.size());
  for (std::size_t j = 0; j < family.size(); ++j) {
    auto& m = mom[j];
    m.g.resize(n);
    m.glog.resize(n);
    m.energy.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double fx = family[j](ens.points[i]);
      const double g = fx * fx + delta;
      const double gn = gradient_norm(model, s, family[j], ens.points[i]);
      m.g[i] = g;
      m.glog[i] = g * std::log(g);
      m.energy[i] = fx * fx * gn * gn / g;
    }
    m.sg = summarize(m.g);
    m.sglog = summarize(m.glog);
    m.se = summarize(m.energy);
  }

  SuperLSIProfile prof;
  prof.r_grid = r_grid;
  for (double r : r_grid) {
    double best = 0.0, best_se = 0.0;
    for (const auto& m : mom) {
      const double mass = m.sg.mean;
      const double val = (m.sglog.mean - mass * std::log(mass) - r * m.se.mean) / mass;
      if (val > best) {
        // Delta method for the ratio.
        std::vector<double> z(n);
        for (std::size_t i = 0; i < n; ++i)
          z[i] = (m.glog[i] - (std::log(mass) + 1.0 + val) * m.g[i] - r * m.energy[i]) / mass;
        best = val;
        best_se = summarize(z).stderr;
      }
    }
    prof.beta.push_back(best);
    prof.se.push_back(best_se);
  }
  prof.envelope = prof.beta;
  for (std::size_t i = prof.envelope.size(); i-- > 1;)
    prof.envelope[i - 1] = std::max(prof.envelope[i - 1], prof.envelope[i]);

  VerdictReport v;
  v.check_id = "super_lsi";
  v.paper_ref = "super-log-Sobolev inequality";
  v.inputs = {{"s", s}, {"r_grid", r_grid}, {"family_size", family.size()}, {"n", n}};
  // Largest upward jump of beta as r increases, against its standard error.
  double worst = -std::numeric_limits<double>::infinity(), worst_se = 0.0;
  std::vector<std::size_t> order(r_grid.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return r_grid[a] < r_grid[b]; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    const double jump = prof.beta[order[i]] - prof.beta[order[i - 1]];
    if (jump > worst) {
      worst = jump;
      worst_se = std::hypot(prof.se[order[i]], prof.se[order[i - 1]]);
    }
  }
  if (order.size() < 2) worst = 0.0;
  v.lhs = worst;
  v.rhs = 0.0;
  v.slack = -worst;
  v.se = worst_se;
  v.verdict = worst <= worst_se ? Verdict::Pass : Verdict::Fail;
  v.details = {{"beta", prof.beta}, {"stderr", prof.se}, {"envelope", prof.envelope}};
  return {prof, v};
}

// ---------------------------------------------------------------------------
// Supercontractivity and ultraboundedness

enum class ContractivityKind { Supercontractive, Ultrabounded };

struct UltraboundProbe {
  std::vector<Vector> x_grid;
  double s = 0.0;
  double t = 0.0;
  std::size_t n_paths = 2000;
  double max_dt = 1e-2;
  std::uint64_t seed = 0;
};

/// Supercontractive: mu_t(exp(lambda rho_t^2)) shows no divergence over the
/// lambda grid. The ensemble factory may throw DomainError when no evolution
/// system exists, which yields NotApplicable.
inline VerdictReport supercontractivity_verdict(
    const Model& model, const std::function<ParticleEnsemble()>& system,
    const std::vector<double>& lambda_grid) {
  VerdictReport v;
  v.check_id = "supercontractive";
  v.paper_ref = "supercontractivity and exponential moments";
  v.inputs = {{"lambda_grid", lambda_grid}};
  ParticleEnsemble ens;
  try {
    ens = system();
  } catch (const DomainError& e) {
    v.verdict = Verdict::NotApplicable;
    v.details = {{"reason", e.what()}};
    return v;
  }
  Json ev = Json::array();
  bool any = false;
  double supported = 0.0;
  std::vector<double> sorted = lambda_grid;
  std::sort(sorted.begin(), sorted.end());
  for (double lam : sorted) {
    const auto e = exp_moment(model, ens, lam);
    ev.push_back({{"lambda", lam},
                  {"value", e.value},
                  {"stderr", e.se},
                  {"top_share", e.top_share},
                  {"divergence_suspected", e.divergence_suspected}});
    if (e.divergence_suspected)
      any = true;
    else if (!any)
      supported = lam;
  }
  v.inputs["t"] = ens.time;
  v.lhs = supported;
  v.rhs = sorted.empty() ? 0.0 : sorted.back();
  v.slack = v.lhs - v.rhs;
  v.verdict = any ? Verdict::Fail : Verdict::Pass;
  v.details = {{"evidence", ev}, {"supported_up_to", supported}};
  return v;
}

/// Ultrabounded: P_{s,t} exp(lambda rho_t^2)(x) shows no heavy tail over the
/// x and lambda grids. On the flat family the Mehler closed form is attached.
inline VerdictReport ultraboundedness_verdict(const Model& model, const UltraboundProbe& probe,
                                              const std::vector<double>& lambda_grid) {
  VerdictReport v;
  v.check_id = "ultrabounded";
  v.paper_ref = "ultraboundedness and exponential moments";
  v.inputs = {{"s", probe.s}, {"t", probe.t}, {"lambda_grid", lambda_grid},
              {"n_paths", probe.n_paths}, {"seed", probe.seed}};
  const TimeGrid grid = TimeGrid::with_max_step(probe.s, probe.t, probe.max_dt);
  const bool flat = model.flat() != nullptr;
  const MehlerParams kern = flat ? mehler_params(model, probe.s, probe.t) : MehlerParams{};
  Json ev = Json::array();
  bool any = false;
  double worst = 0.0;
  for (std::size_t li = 0; li < lambda_grid.size(); ++li) {
    const double lam = lambda_grid[li];
    for (std::size_t xi = 0; xi < probe.x_grid.size(); ++xi) {
      const Vector& x = probe.x_grid[xi];
      auto vals = sample_endpoints(model, grid, x, probe.n_paths,
                                   derive_seed(probe.seed, li * 1000 + xi), [&](const Vector& y) {
                                     const double r = model.distance_to_origin(probe.t, y);
                                     return std::exp(lam * r * r);
                                   });
      std::erase_if(vals, [](double z) { return std::isnan(z); });
      std::sort(vals.begin(), vals.end());
      const auto sm = summarize(vals);
      const std::size_t top = std::max<std::size_t>(1, vals.size() / 100);
      const double total = pairwise_sum(vals);
      const double share =
          total > 0.0 ? pairwise_sum(std::span<const double>(vals).last(top)) / total : 0.0;
      const bool flagged = !std::isfinite(total) || share > 0.5;
      any = any || flagged;
      worst = std::max(worst, sm.mean);
      Json e{{"lambda", lam},
             {"x", std::vector<double>(x.data(), x.data() + x.size())},
             {"value", sm.mean},
             {"stderr", sm.stderr},
             {"top_share", share},
             {"divergence_suspected", flagged}};
      if (flat) {
        const double ct = kern.scale_t;
        const double a = lam * ct * ct;
        const double denom = 1.0 - 2.0 * a * kern.sigma2;
        e["exact_finite"] = denom > 0.0;
        if (denom > 0.0)
          e["exact"] = std::pow(denom, -0.5 * kern.dim) *
                       std::exp(a * kern.m * kern.m * x.squaredNorm() / denom);
      }
      ev.push_back(e);
    }
  }
  v.lhs = worst;
  v.rhs = std::numeric_limits<double>::infinity();
  v.verdict = any ? Verdict::Fail : Verdict::Pass;
  v.details = {{"evidence", ev}};
  return v;
}

// ---------------------------------------------------------------------------
// Ultraboundedness from a super-log-Sobolev profile

struct UltraboundBound {
  double t0 = 0.0;     // int_2^inf r(p) / (p - 1) dp
  double bound = 1.0;  // exp(int_2^inf beta(r(p)) / p^2 dp)
  TailIntegral t0_tail;
  TailIntegral beta_tail;
};

/// Both integrals over [2, inf) by doubling quadrature. A divergent t0 means
/// the chosen r(p) cannot be used.
inline UltraboundBound ultrabound_bound_eval(const std::function<double(double)>& beta,
                                             const std::function<double(double)>& r_of_p,
                                             const QuadratureSettings& q = {}) {
  auto no_bound = [](double, double) { return std::numeric_limits<double>::quiet_NaN(); };
  auto seg = [&](auto&& g) {
    return [&, g](double l0, double l1) { return quad::integrate(g, 2.0 + l0, 2.0 + l1, 1e-11); };
  };
  UltraboundBound out;
  out.t0_tail = quad::doubling_integral(
      seg([&](double p) { return r_of_p(p) / (p - 1.0); }), no_bound, q);
  if (!out.t0_tail.finite()) throw DomainError("r(p) inadmissible: t0 integral does not converge");
  out.t0 = out.t0_tail.value;
  out.beta_tail = quad::doubling_integral(
      seg([&](double p) { return beta(r_of_p(p)) / (p * p); }), no_bound, q);
  out.bound = out.beta_tail.finite() ? std::exp(out.beta_tail.value)
                                     : std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace evoflow
