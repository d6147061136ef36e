#include <gtest/gtest.h>

#include "evoflow/measures.hpp"
#include "evoflow/oracle.hpp"
#include "evoflow/semigroup.hpp"

using namespace evoflow;

namespace {
const Model ou = Model::ornstein_uhlenbeck(2, 1.0);
const Model conformal = Model::conformal_flat(2, Profile::exponential(-1.0));
const Model sphere = Model::shrinking_sphere(2, 0.0);
const TimeGrid unit{0.0, 1.0, 50};

Vector sphere_point(double t, double angle) {
  const double r = sphere.sphere()->radius(t);
  Vector x(3);
  x << r * std::sin(angle), 0.0, r * std::cos(angle);
  return x;
}
}  // namespace

TEST(EstimateP, ConstantIsExact) {
  const auto e = estimate_p(ou, unit, SpacePoint{Vector::Unit(2, 0)}, TestFunction::constant(1.0), 1000, 1);
  EXPECT_EQ(e.mean, 1.0);
  EXPECT_EQ(e.stderr, 0.0);
}

TEST(EstimateP, OuCoordinate) {
  const auto e = estimate_p(ou, unit, SpacePoint{Vector::Unit(2, 0)}, TestFunction::coordinate(0), 20000, 2);
  EXPECT_NEAR(e.mean, std::exp(-1.0), 3.0 * e.stderr);
}

TEST(EstimateP, ConformalNorm2) {
  const auto e = estimate_p(conformal, unit, SpacePoint{Vector::Zero(2)}, TestFunction::norm2(), 20000, 3);
  EXPECT_NEAR(e.mean, 2.0 * (std::exp(2.0) - 1.0), 3.0 * e.stderr);
}

TEST(EstimateP, TooFewPaths) {
  EXPECT_THROW(estimate_p(ou, unit, SpacePoint{Vector::Zero(2)}, TestFunction::norm2(), 10, 3),
               PreconditionError);
}

TEST(EstimateP, ExitsFlagUnreliable) {
  PathOptions opt;
  opt.guard.radius_cap = 1.2;
  const auto e = estimate_p(ou, unit, SpacePoint{Vector::Unit(2, 0)}, TestFunction::coordinate(0), 1000, 4, opt);
  EXPECT_GT(e.exits, 0u);
  EXPECT_TRUE(e.unreliable);
}

// Weak order one: halving dt on a nonlinear model moves the estimate by a
// shrinking amount.
TEST(EstimateP, WeakOrderOnSphere) {
  const auto f = TestFunction::gaussian_bump(sphere_point(-1.0, 0.3), 1.0);
  const SpacePoint x{sphere_point(-2.0, 0.5)};
  std::vector<double> v;
  for (int n : {10, 20, 40, 200})
    v.push_back(estimate_p(sphere, TimeGrid{-2.0, -1.0, n}, x, f, 40000, 5).mean);
  const double e10 = std::abs(v[0] - v[3]), e20 = std::abs(v[1] - v[3]), e40 = std::abs(v[2] - v[3]);
  EXPECT_LT(e40, e10 + 0.01);
  EXPECT_LT(std::min(e20, e40), 0.02);
}

TEST(Bismut, ConstantGivesZero) {
  const auto g = bismut_gradient(ou, unit, SpacePoint{Vector::Unit(2, 0)}, TestFunction::constant(2.0),
                                 BismutSchedule::linear(), 2000, 6);
  EXPECT_EQ(g.mean.norm(), 0.0);
}

TEST(Bismut, UnboundedRejected) {
  EXPECT_THROW(bismut_gradient(ou, unit, SpacePoint{Vector::Zero(2)}, TestFunction::coordinate(0),
                               BismutSchedule::linear(), 2000, 6),
               DomainError);
}

TEST(Bismut, LipCapAtOriginMatchesExact) {
  const auto f = TestFunction::lip_cap(0.0, 1.0, 10.0);
  const SpacePoint x{Vector::Zero(2)};
  const Vector ex = exact_frame_gradient(mehler_params(ou, 0.0, 1.0), x.coords, f);
  EXPECT_NEAR(ex[0], std::exp(-1.0), 0.01);
  for (auto sched : {BismutSchedule::linear(), BismutSchedule::paper_optimal()}) {
    const auto g = bismut_gradient(ou, unit, x, f, sched, 20000, 7);
    EXPECT_TRUE(gradient_matches(g, ex)) << sched.name() << " " << g.mean.transpose();
  }
}

TEST(Bismut, AgreesWithFiniteDifferencesOnSphere) {
  const SpacePoint x{sphere_point(-2.0, 0.5)};
  const auto f = TestFunction::gaussian_bump(sphere_point(-2.0, 0.5), 2.0);
  const TimeGrid g{-2.0, -1.0, 50};
  const auto b = bismut_gradient(sphere, g, x, f, BismutSchedule::linear(), 20000, 8);
  const auto fd = fd_gradient(sphere, g, x, f, 2e-3, 20000, 9);
  EXPECT_TRUE(gradients_agree(b, fd)) << b.mean.transpose() << " vs " << fd.mean.transpose();
}

TEST(Harnack, Coefficients) {
  EXPECT_NEAR(harnack_coefficient(Model::static_flat(2), 0.0, 1.0, 2.0), 0.5, 1e-14);
  EXPECT_NEAR(harnack_coefficient(ou, 0.0, 1.0, 2.0), 1.0 / (std::exp(2.0) - 1.0), 1e-12);
  EXPECT_THROW(harnack_coefficient(ou, 0.0, 1.0, 1.0), DomainError);
}

TEST(Harnack, SamePointAndOuPair) {
  Vector c(2);
  c << 0.5, -0.25;
  const auto f = TestFunction::gaussian_bump(c, 1.0);
  const SpacePoint x{Vector::Unit(2, 0)};
  EXPECT_EQ(harnack_check(ou, unit, x, x, f, 2.0, 4000, 10).verdict, Verdict::Pass);
  Vector y(2);
  y << -0.5, 1.0;
  EXPECT_EQ(harnack_check(ou, unit, x, SpacePoint{y}, f, 2.0, 4000, 11).verdict, Verdict::Pass);
}

TEST(GradientBound, ConstantAndConformal) {
  const auto a = gaussian_ensemble(conformal, 0.0, 200, 12).points;
  const auto b = gaussian_ensemble(conformal, 1.0, 2000, 13).points;
  GradientBoundSettings gs;
  gs.max_points = 40;
  gs.paths_per_point = 1000;
  const auto c = gradient_bound_check(conformal, 0.0, 1.0, TestFunction::constant(1.0), 2.0, a, b, 14, gs);
  EXPECT_EQ(c.lhs, 0.0);
  EXPECT_EQ(c.rhs, 0.0);
  EXPECT_EQ(c.verdict, Verdict::Pass);
  const auto l = gradient_bound_check(conformal, 0.0, 1.0, TestFunction::lip_cap(0.0, 1.0, 2.0), 2.0, a, b, 15, gs);
  EXPECT_EQ(l.verdict, Verdict::Pass);
  EXPECT_THROW(gradient_bound_check(conformal, 0.0, 1.0, TestFunction::constant(1.0), 2.0, {}, b, 1, gs),
               PreconditionError);
}
