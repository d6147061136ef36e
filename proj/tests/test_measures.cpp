#include <gtest/gtest.h>

#include <sstream>

#include "evoflow/measures.hpp"
#include "evoflow/oracle.hpp"

using namespace evoflow;

namespace {
const Model ou = Model::ornstein_uhlenbeck(2, 1.0);
const Model conformal = Model::conformal_flat(2, Profile::exponential(-1.0));
const Model sphere = Model::shrinking_sphere(2, 0.0);

// Cesaro average of delta_0 P_{r,t} over a window of length T.
double cesaro_rho2(double T) { return 2.0 * (1.0 - (1.0 - std::exp(-2.0 * T)) / (2.0 * T)); }

EnsembleSettings coarse() {
  EnsembleSettings es;
  es.coarse_dt = 0.05;
  es.fine_dt = 1e-2;
  return es;
}

auto second_moment(const Model& m, const ParticleEnsemble& e) {
  return moment(m, e, [](double x) { return x * x; });
}
}  // namespace

TEST(Cesaro, OuSecondMoment) {
  const auto ens = cesaro_ensemble(ou, -19.0, 1.0, 10000, 1, coarse());
  const auto m2 = second_moment(ou, ens);
  EXPECT_NEAR(m2.value, cesaro_rho2(20.0), 3.0 * m2.se);
}

TEST(Cesaro, ConformalSecondMoment) {
  const auto ens = cesaro_ensemble(conformal, -19.0, 1.0, 10000, 2, coarse());
  const auto m2 = second_moment(conformal, ens);
  EXPECT_NEAR(m2.value, cesaro_rho2(20.0), 3.0 * m2.se);
}

TEST(Cesaro, ShortWindowConcentratesAtOrigin) {
  const auto ens = cesaro_ensemble(ou, 1.0 - 1e-4, 1.0, 1000, 3, coarse());
  EXPECT_LT(second_moment(ou, ens).value, 1e-3);
  EXPECT_THROW(cesaro_ensemble(ou, 0.0, 1.0, 10, 3), PreconditionError);
}

TEST(Propagate, IdentityAndStationarity) {
  const auto g = gaussian_ensemble(ou, 0.0, 20000, 4);
  const auto same = propagate_ensemble(ou, g, 0.0, 5);
  EXPECT_EQ(same.points, g.points);
  const auto moved = propagate_ensemble(ou, g, 1.0, 6, coarse());
  const auto m2 = second_moment(ou, moved);
  EXPECT_NEAR(m2.value, 2.0, 3.0 * m2.se);
  EXPECT_NEAR(mean_of(moved, TestFunction::coordinate(0)).value, 0.0,
              3.0 * mean_of(moved, TestFunction::coordinate(0)).se);
}

TEST(Invariance, ConstantExactlyZero) {
  const auto a = gaussian_ensemble(ou, 0.0, 1000, 7), b = gaussian_ensemble(ou, 1.0, 1000, 8);
  const auto r = invariance_residual(ou, a, b, TestFunction::constant(3.0), 200, 9, coarse());
  EXPECT_EQ(r.value, 0.0);
}

TEST(Invariance, GaussianSystemAndShiftedControl) {
  const auto a = gaussian_ensemble(ou, 0.0, 4000, 10), b = gaussian_ensemble(ou, 1.0, 4000, 11);
  Vector c(2);
  c << 0.5, -0.25;
  const auto r = invariance_residual(ou, a, b, TestFunction::gaussian_bump(c, 1.0), 4000, 12, coarse());
  EXPECT_TRUE(r.within(3.0)) << r.value << " se " << r.se;
  const Vector off = Vector::Unit(2, 0);
  const auto bad = invariance_residual(ou, shifted(a, off), shifted(b, off), TestFunction::coordinate(0),
                                       4000, 13, coarse());
  EXPECT_GT(std::abs(bad.value), 5.0 * bad.se);
}

TEST(Invariance, PropagatedCesaroSystem) {
  SystemSettings ss;
  ss.ensemble = coarse();
  const auto b = evolution_system(ou, 0.0, 3000, 14, ss);
  const auto c = propagate_ensemble(ou, b, 1.0, 15, coarse());
  const auto r = invariance_residual(ou, b, c, TestFunction::lip_cap(0.0, 1.0, 2.0), 3000, 16, coarse());
  EXPECT_TRUE(r.within(3.0)) << r.value << " se " << r.se;
}

TEST(Moments, OuBoundAndExpMoment) {
  const auto g = gaussian_ensemble(ou, 1.0, 200000, 17);
  const auto m2 = second_moment(ou, g);
  EXPECT_NEAR(m2.value, 2.0, 3.0 * m2.se);
  EXPECT_LE(m2.value, h1_profile(ou, H3Config{}, 1.0).value);
  const auto e = exp_moment(ou, g, 0.25);
  EXPECT_NEAR(e.value, 2.0, 0.1);
  EXPECT_FALSE(e.divergence_suspected);
  EXPECT_TRUE(exp_moment(ou, g, 0.5).divergence_suspected);
}

TEST(EvolutionSystem, HeatHasNoBurnIn) {
  EXPECT_THROW(evolution_system(Model::static_flat(2), 1.0, 1000, 18), DomainError);
  EXPECT_NEAR(default_depth(ou, 1.0), 20.0, 1e-12);
}

TEST(Convergence, ConstantIsInconclusive) {
  ConvergenceSettings cs;
  cs.particles = 50;
  cs.paths_per_particle = 20;
  cs.max_dt = 0.05;
  const auto rep = convergence_decay(
      ou, 1.0, TestFunction::constant(1.0), {0.5, 0.0, -0.5, -1.0},
      [](double s, std::uint64_t sd) { return gaussian_ensemble(ou, s, 50, sd); }, 1.0, 19, cs);
  EXPECT_EQ(rep.verdict.verdict, Verdict::Inconclusive);
  for (const auto& p : rep.points) EXPECT_EQ(p.residual, 0.0);
}

TEST(Convergence, OuSlope) {
  ConvergenceSettings cs;
  cs.particles = 300;
  cs.paths_per_particle = 100;
  cs.max_dt = 0.02;
  const auto f = TestFunction::lip_cap(0.0, 1.0, 2.0);
  const auto rep = convergence_decay(
      ou, 1.0, f, {0.5, 0.0, -0.5, -1.0},
      [](double s, std::uint64_t sd) { return gaussian_ensemble(ou, s, 300, sd); },
      exact_mu(mehler_params(ou, 1.0, 1.0), f), 20, cs);
  EXPECT_NEAR(rep.slope, -1.0, 0.2);
}

TEST(Convergence, SphereResidualShrinksWithDepth) {
  ConvergenceSettings cs;
  cs.particles = 200;
  cs.paths_per_particle = 50;
  cs.max_dt = 0.02;
  const auto f = TestFunction::coordinate(0);
  const auto rep = convergence_decay(
      sphere, -1.0, f, {-1.2, -2.0, -4.0},
      [](double s, std::uint64_t sd) { return uniform_sphere_ensemble(sphere, s, 200, sd); }, 0.0, 21, cs);
  ASSERT_EQ(rep.points.size(), 3u);
  // Bound (|t|/|s|) const: the ratio residual * |s| stays bounded.
  EXPECT_LT(rep.points[2].residual, rep.points[0].residual);
}

TEST(FlowDerivative, OuNorm2) {
  const auto g = gaussian_ensemble(ou, 0.0, 20000, 22);
  const auto f = SpaceTimeFunction::norm2_exp(-1.0);
  const auto r = flow_derivative_check(ou, g, f, 0.05, 23, 1e-3);
  EXPECT_LE(std::abs(r.value), 3.0 * r.se + 1e-3) << r.value << " se " << r.se;
  // Exact: d/dr (e^{-r} 2) = -2 e^{-r}.
  EXPECT_NEAR(r.rhs, -2.0 * std::exp(-0.05), 0.1);
  EXPECT_THROW(flow_derivative_check(sphere, uniform_sphere_ensemble(sphere, -2.0, 10, 1), f, 0.1, 1),
               DomainError);
}

TEST(FlowDerivative, HalvingDrIsSelfConsistent) {
  const auto f = SpaceTimeFunction::coordinate_exp(0, 0.5);
  double prev = 0.0;
  for (double dr : {0.1, 0.05, 0.025}) {
    const auto g = gaussian_ensemble(ou, 0.0, 10000, 24);
    const auto r = flow_derivative_check(ou, g, f, dr, 25, 1e-3);
    EXPECT_LE(std::abs(r.value), 3.0 * r.se + 1e-3);
    if (dr < 0.1) {
      EXPECT_LE(std::abs(r.value), std::abs(prev) + 3.0 * r.se);
    }
    prev = r.value;
  }
}

TEST(Snapshot, RoundTripAndRejection) {
  const auto g = gaussian_ensemble(ou, 1.0, 50, 26);
  std::stringstream ss;
  write_ensemble_jsonl(ou, g, ss);
  const auto back = read_ensemble_jsonl(ou, ss);
  EXPECT_EQ(back.points, g.points);
  EXPECT_EQ(back.time, 1.0);

  std::stringstream other;
  write_ensemble_jsonl(ou, g, other);
  EXPECT_THROW(read_ensemble_jsonl(conformal, other), PreconditionError);

  std::stringstream cut;
  write_ensemble_jsonl(ou, g, cut);
  std::string text = cut.str();
  text.resize(text.rfind("{\"coords\""));
  std::stringstream truncated(text);
  EXPECT_THROW(read_ensemble_jsonl(ou, truncated), PreconditionError);
}
