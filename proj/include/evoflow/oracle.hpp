#pragma once

// Closed-form Gaussian reference for the flat family with linear drift.
// In chart coordinates X_t = m x + N(0, sigma2 I) and mu_t = N(0, v(t) I).

#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <vector>

#include <Eigen/Eigenvalues>

#include "errors.hpp"
#include "geometry.hpp"
#include "quadrature.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "test_functions.hpp"

namespace evoflow {

struct MehlerParams {
  double s = 0.0;
  double t = 0.0;
  int dim = 1;
  double m = 1.0;       // exp(-Lambda(s, t))
  double sigma2 = 0.0;  // transition variance per coordinate
  double v = 0.0;       // variance of mu_t per coordinate (chart units)
  bool measure_exists = true;
  double scale_s = 1.0;  // c(s)
  double scale_t = 1.0;  // c(t)

  Json to_json() const {
    Json j;
    j["s"] = s;
    j["t"] = t;
    j["m"] = m;
    j["sigma2"] = sigma2;
    j["v"] = measure_exists ? Json(v) : Json("non_existent");
    return j;
  }
};

inline MehlerParams mehler_params(const Model& model, double s, double t,
                                  const QuadratureSettings& q = {}) {
  const FlatModel* flat = model.flat();
  if (!flat) throw DomainError("the Gaussian oracle covers the flat model family only");
  if (!(s <= t)) throw DomainError("mehler_params requires s <= t");
  model.check_time(t);
  const DriftSpec& drift = flat->drift_spec();
  const Profile& c = flat->conformal_factor();

  MehlerParams p;
  p.s = s;
  p.t = t;
  p.dim = model.dim();
  p.scale_s = c(s);
  p.scale_t = c(t);
  p.m = std::exp(-drift.rate_integral(s, t));
  auto integrand = [&](double r) {
    const double cr = c(r);
    return 2.0 * std::exp(-2.0 * drift.rate_integral(r, t)) / (cr * cr);
  };
  p.sigma2 = s == t ? 0.0 : quad::integrate(integrand, s, t, 1e-13).value;

  // 2 c(r)^-2 e^{-2 Lambda(r,t)} = 2 c(t)^-2 e^{-2 int_r^t k}.
  const double ct = p.scale_t;
  const auto v = quad::discounted_integral(
      [&](double r) { return -2.0 * model.k_integral(r, t); },
      [&](double r) { return 2.0 * model.k(r); }, [&](double) { return 2.0 / (ct * ct); }, t, q);
  p.measure_exists = v.finite();
  p.v = v.finite() ? v.value : std::numeric_limits<double>::infinity();
  return p;
}

/// Parameters of P_{s,r} followed by P_{r,t}, composed in closed form.
inline MehlerParams compose(const MehlerParams& first, const MehlerParams& second) {
  if (first.t != second.s) throw DomainError("compose requires matching intermediate time");
  MehlerParams p = second;
  p.s = first.s;
  p.scale_s = first.scale_s;
  p.m = first.m * second.m;
  p.sigma2 = second.m * second.m * first.sigma2 + second.sigma2;
  return p;
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature (physicists' weight e^{-z^2}), Golub-Welsch.

struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline GaussHermite gauss_hermite_rule(int n) {
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) jac(i, i - 1) = jac(i - 1, i) = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac, Eigen::EigenvaluesOnly);
  GaussHermite rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  // Orthonormal Hermite values psi_0..psi_{n-1} at z; returns psi_n and sum psi_k^2.
  auto sweep = [n](double z, double& prev, double& sumsq) {
    double p0 = 0.0, p1 = std::pow(std::numbers::pi, -0.25);
    sumsq = 0.0;
    for (int k = 0; k < n; ++k) {
      sumsq += p1 * p1;
      const double p2 = std::sqrt(2.0 / (k + 1)) * z * p1 - std::sqrt(double(k) / (k + 1)) * p0;
      p0 = p1;
      p1 = p2;
    }
    prev = p0;
    return p1;
  };
  // The eigenvalues are accurate; the eigenvector weights are not in the
  // tails, so weights come from the Christoffel function after Newton polish.
  for (int i = 0; i < n; ++i) {
    double z = es.eigenvalues()[i], prev = 0.0, sumsq = 0.0;
    for (int it = 0; it < 3; ++it) {
      const double pn = sweep(z, prev, sumsq);
      z -= pn / (std::sqrt(2.0 * n) * prev);
    }
    sweep(z, prev, sumsq);
    rule.nodes[i] = z;
    rule.weights[i] = 1.0 / sumsq;
  }
  return rule;
}

inline const GaussHermite& gauss_hermite_200() {
  static const GaussHermite rule = gauss_hermite_rule(200);
  return rule;
}

/// E g(Y) for Y ~ N(mean, var), one-dimensional.
template <class G>
double gaussian_expectation(double mean, double var, G&& g) {
  if (var <= 0.0) return g(mean);
  const auto& gh = gauss_hermite_200();
  const double scale = std::sqrt(2.0 * var);
  double sum = 0.0;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) sum += gh.weights[i] * g(mean + scale * gh.nodes[i]);
  return sum / std::sqrt(std::numbers::pi);
}

// ---------------------------------------------------------------------------
// Exact semigroup

namespace detail {

/// E f(mean + sqrt(var) Z), Z standard normal in R^d.
inline double gaussian_mean_of(const TestFunction& f, const Vector& mean, double var) {
  const int d = static_cast<int>(mean.size());
  using K = TestFunction::Kind;
  switch (f.kind()) {
    case K::Constant:
      return f.level();
    case K::Coordinate:
      return mean[f.axis()];
    case K::Norm2:
      return mean.squaredNorm() + d * var;
    case K::GaussianBump: {
      const double w2 = f.width() * f.width();
      return std::pow(w2 / (w2 + var), 0.5 * d) *
             std::exp(-(mean - f.center()).squaredNorm() / (2.0 * (w2 + var)));
    }
    case K::LipCap:
      return gaussian_expectation(mean[f.axis()], var, [&](double y) {
        return f.cap() * std::tanh(f.slope() * (y - f.shift()) / f.cap());
      });
    case K::ExpRadial: {
      const double denom = 1.0 - 2.0 * f.lambda() * var;
      if (denom <= 0.0) return std::numeric_limits<double>::infinity();
      return std::pow(denom, -0.5 * d) * std::exp(f.lambda() * mean.squaredNorm() / denom);
    }
    case K::ExpCoordinate:
      return std::exp(f.rate() * mean[f.axis()] + 0.5 * f.rate() * f.rate() * var);
  }
  return 0.0;
}

/// E grad f(mean + sqrt(var) Z).
inline Vector gaussian_mean_of_gradient(const TestFunction& f, const Vector& mean, double var) {
  const int d = static_cast<int>(mean.size());
  using K = TestFunction::Kind;
  Vector g = Vector::Zero(d);
  switch (f.kind()) {
    case K::Constant:
      break;
    case K::Coordinate:
      g[f.axis()] = 1.0;
      break;
    case K::Norm2:
      g = 2.0 * mean;
      break;
    case K::GaussianBump: {
      const double w2 = f.width() * f.width();
      g = -(mean - f.center()) * (gaussian_mean_of(f, mean, var) / (w2 + var));
      break;
    }
    case K::LipCap:
      g[f.axis()] = gaussian_expectation(mean[f.axis()], var, [&](double y) {
        const double th = std::tanh(f.slope() * (y - f.shift()) / f.cap());
        return f.slope() * (1.0 - th * th);
      });
      break;
    case K::ExpRadial: {
      const double denom = 1.0 - 2.0 * f.lambda() * var;
      if (denom <= 0.0) {
        g.setConstant(std::numeric_limits<double>::infinity());
        break;
      }
      g = (2.0 * f.lambda() / denom) * gaussian_mean_of(f, mean, var) * mean;
      break;
    }
    case K::ExpCoordinate:
      g[f.axis()] = f.rate() * gaussian_mean_of(f, mean, var);
      break;
  }
  return g;
}

}  // namespace detail

/// P_{s,t} f(x).
inline double exact_p(const MehlerParams& p, const Vector& x, const TestFunction& f) {
  if (x.size() != p.dim) throw DomainError("point dimension does not match the oracle");
  return detail::gaussian_mean_of(f, p.m * x, p.sigma2);
}

/// Coordinate gradient of P_{s,t} f at x, equal to m P_{s,t}(grad f)(x).
inline Vector exact_gradient(const MehlerParams& p, const Vector& x, const TestFunction& f) {
  if (x.size() != p.dim) throw DomainError("point dimension does not match the oracle");
  return p.m * detail::gaussian_mean_of_gradient(f, p.m * x, p.sigma2);
}

/// Components of grad^s P_{s,t} f(x) in the canonical g_s-orthonormal frame.
inline Vector exact_frame_gradient(const MehlerParams& p, const Vector& x,
                                   const TestFunction& f) {
  return exact_gradient(p, x, f) / p.scale_s;
}

/// mu_t(f).
inline double exact_mu(const MehlerParams& p, const TestFunction& f) {
  if (!p.measure_exists) throw DomainError("no evolution system exists for this model");
  return detail::gaussian_mean_of(f, Vector::Zero(p.dim), p.v);
}

/// mu_t(rho_t^2) = c(t)^2 d v.
inline double exact_mu_second_moment(const MehlerParams& p) {
  if (!p.measure_exists) throw DomainError("no evolution system exists for this model");
  return p.scale_t * p.scale_t * p.dim * p.v;
}

/// mu_t(exp(lambda rho_t^2)) = (1 - 2 lambda c^2 v)^{-d/2}; +inf when divergent.
inline double exact_exp_moment(const MehlerParams& p, double lambda) {
  if (!p.measure_exists) throw DomainError("no evolution system exists for this model");
  const double denom = 1.0 - 2.0 * lambda * p.scale_t * p.scale_t * p.v;
  // v comes from quadrature; treat the critical rate itself as divergent.
  if (denom <= 1e-9) return std::numeric_limits<double>::infinity();
  return std::pow(denom, -0.5 * p.dim);
}

/// Entropy mu_t(f^2 log(f^2 / mu_t(f^2))) for f depending on one coordinate.
template <class G>
double exact_entropy_1d(const MehlerParams& p, G&& f_of_coordinate) {
  const double mass =
      gaussian_expectation(0.0, p.v, [&](double y) { return f_of_coordinate(y) * f_of_coordinate(y); });
  const double ent = gaussian_expectation(0.0, p.v, [&](double y) {
    const double f2 = f_of_coordinate(y) * f_of_coordinate(y);
    return f2 > 0.0 ? f2 * std::log(f2) : 0.0;
  });
  return ent - mass * std::log(mass);
}

/// Exact sample of mu_t, chart coordinates, one Philox stream per point.
inline std::vector<Vector> exact_measure_sample(const MehlerParams& p, std::size_t n,
                                                std::uint64_t seed) {
  if (!p.measure_exists) throw DomainError("no evolution system exists for this model");
  std::vector<Vector> pts(n, Vector(p.dim));
  const double sd = std::sqrt(p.v);
  for (std::size_t i = 0; i < n; ++i) {
    NoiseStream noise(seed, i);
    for (int j = 0; j < p.dim; ++j) pts[i][j] = sd * noise.gaussian();
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Fixture table

/// Oracle values consumed by the test suites; regenerated by oracle-selftest.
inline Json oracle_fixtures() {
  Json fx;
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };

  const Model ou = Model::ornstein_uhlenbeck(2, 1.0);
  const auto p_ou = mehler_params(ou, 0.0, 1.0);
  fx["ou"]["params"] = p_ou.to_json();
  Vector x(2);
  x << 1.0, 0.0;
  fx["ou"]["p_coordinate_at_1_0"] = exact_p(p_ou, x, TestFunction::coordinate(0));
  fx["ou"]["mu_second_moment"] = exact_mu_second_moment(p_ou);
  fx["ou"]["exp_moment_0.25"] = exact_exp_moment(p_ou, 0.25);
  const Vector origin = Vector::Zero(2);
  fx["ou"]["grad_lip_cap_at_0"] =
      vec(exact_gradient(p_ou, origin, TestFunction::lip_cap(0.0, 1.0, 10.0)));
  Vector c(2);
  c << 0.5, -0.25;
  fx["ou"]["grad_bump_at_0"] = vec(exact_gradient(p_ou, origin, TestFunction::gaussian_bump(c, 1.0)));
  fx["ou"]["p_bump_at_1_0"] = exact_p(p_ou, x, TestFunction::gaussian_bump(c, 1.0));

  const Model conf = Model::conformal_flat(2, Profile::exponential(-1.0));
  const auto p_conf = mehler_params(conf, 0.0, 1.0);
  fx["conformal"]["params"] = p_conf.to_json();
  fx["conformal"]["p_norm2_at_0"] = exact_p(p_conf, origin, TestFunction::norm2());
  fx["conformal"]["mu_second_moment"] = exact_mu_second_moment(p_conf);
  fx["conformal"]["frame_grad_lip_cap_at_0"] =
      vec(exact_frame_gradient(p_conf, origin, TestFunction::lip_cap(0.0, 1.0, 10.0)));

  const Model heat = Model::static_flat(2);
  fx["heat"]["measure_exists"] = mehler_params(heat, 0.0, 1.0).measure_exists;
  return fx;
}

}  // namespace evoflow
