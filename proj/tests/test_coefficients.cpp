#include <gtest/gtest.h>

#include "evoflow/coefficients.hpp"

using namespace evoflow;

namespace {
const Model ou = Model::ornstein_uhlenbeck(2, 1.0);
const Model heat = Model::static_flat(2);
const Model sphere = Model::shrinking_sphere(2, 0.0);
}  // namespace

TEST(H2Profile, Constants) {
  LyapunovSpec spec;
  spec.a = Profile::constant(2.0);
  spec.c = Profile::constant(1.0);
  const auto h = h2_profile(spec, 0.0);
  ASSERT_TRUE(h.finite());
  EXPECT_NEAR(h.value, 2.0, 1e-8);
  EXPECT_NEAR(h2_profile(spec, 7.5).value, 2.0, 1e-8);

  spec.c = Profile::constant(3.0);
  EXPECT_NEAR(h2_profile(spec, 0.0).value, 2.0 / 3.0, 1e-8);

  spec.a = Profile::constant(0.0);
  EXPECT_EQ(h2_profile(spec, 0.0).value, 0.0);

  spec.a = Profile::constant(1.0);
  spec.c = Profile::constant(0.0);
  EXPECT_TRUE(h2_profile(spec, 0.0).divergent());
  EXPECT_EQ(check_h2(spec, 0.0).verdict, Verdict::Fail);
}

TEST(H1Profile, Examples) {
  const auto h = h1_profile(ou, H3Config{}, 0.0);
  ASSERT_TRUE(h.finite());
  EXPECT_NEAR(h.value, 6.25, 1e-7);
  EXPECT_NEAR(h1_source(ou, H3Config{}, 0.0), 6.25, 1e-14);
  EXPECT_TRUE(h1_profile(heat, H3Config{}, 0.0).divergent());

  H3Config wide;
  wide.epsilon = 100.0;
  EXPECT_NEAR(h1_source(ou, wide, 0.0), 4.0 + 9.0 / (4.0 * 1e4), 1e-12);
}

TEST(KEps, Examples) {
  EXPECT_EQ(k_eps(heat, 0.0, 1.0), 0.0);
  EXPECT_NEAR(k_eps(sphere, -1.0, 1.0), 0.5, 1e-14);
  const Model s3 = Model::shrinking_sphere(3, 0.25);  // r = 1 at t = 0
  EXPECT_NEAR(k_eps(s3, 0.0, 1.0), 2.0, 1e-14);
  EXPECT_THROW(k_eps(heat, 0.0, 0.0), DomainError);
}

TEST(CheckH3, Examples) {
  const auto pass = check_h3(ou, H3Config{}, 0.0);
  EXPECT_EQ(pass.verdict, Verdict::Pass);
  EXPECT_NEAR(pass.lhs, 0.5, 1e-8);
  EXPECT_EQ(check_h3(heat, H3Config{}, 0.0).verdict, Verdict::Fail);

  // On the sphere both decay sub-conditions hold (integral = |t|) but H1 diverges.
  const auto sp = check_h3(sphere, H3Config{}, -1.0);
  EXPECT_NEAR(sp.lhs, 1.0, 1e-6);
  EXPECT_EQ(sp.details["k_integral"]["status"], "divergent");
  EXPECT_EQ(sp.details["h1"]["status"], "divergent");
  EXPECT_EQ(sp.verdict, Verdict::Fail);
}

TEST(NonExplosion, Classification) {
  EXPECT_EQ(nonexplosion_test(Profile::constant(1.0)).verdict, ExplosionVerdict::NonExplosive);
  EXPECT_EQ(nonexplosion_test(Profile::constant(0.0)).verdict, ExplosionVerdict::NonExplosive);
  EXPECT_EQ(nonexplosion_test(Profile::exponential(1.0)).verdict, ExplosionVerdict::Inconclusive);
}

TEST(RadialDriftBound, Examples) {
  EXPECT_NEAR(radial_drift_bound(ou, 0.0, 2.0, H3Config{}), -1.0, 1e-14);
  const double small = radial_drift_bound(heat, 0.0, 1e-6, H3Config{});
  EXPECT_NEAR(small * 1e-6, 1.0, 1e-9);
  EXPECT_THROW(radial_drift_bound(ou, 0.0, 0.0, H3Config{}), DomainError);
  // Sphere d=2, t=-1: sqrt(.5) coth(sqrt(.5)) + .5 - rho at rho = 1.
  const double x = std::sqrt(0.5);
  const double expected = x * std::cosh(x) / std::sinh(x) + 0.5 - 1.0;
  EXPECT_NEAR(radial_drift_bound(sphere, -1.0, 1.0, H3Config{}), expected, 1e-12);
}

TEST(LyapunovGamma, Examples) {
  std::vector<double> rho;
  for (int i = 0; i <= 900; ++i) rho.push_back(1.0 + 0.01 * i);
  const auto v = lyapunov_gamma_check(ou, GammaSpec::linear(1.0), rho, {0.0});
  EXPECT_EQ(v.verdict, Verdict::Pass);
  EXPECT_NEAR(v.lhs, 5.0, 1e-9);

  std::vector<double> near0{1e-6, 1e-3, 0.5, 1.0, 2.0, 4.0};
  EXPECT_NEAR(lyapunov_gamma_check(ou, GammaSpec::linear(1.0), near0, {0.0}).lhs, 6.0, 1e-5);

  EXPECT_EQ(lyapunov_gamma_check(ou, GammaSpec::power(0.1, 2.0), rho, {0.0}).verdict, Verdict::Fail);
  EXPECT_EQ(lyapunov_gamma_check(heat, GammaSpec::linear(0.01), rho, {0.0}).verdict, Verdict::Fail);
}

TEST(Ultrabound, RateAndTheta) {
  EXPECT_EQ(ultrabound_exponent(2.0), 2.0);
  EXPECT_NEAR(ultrabound_rate(1.0, 2.0, 0.5), std::exp(4.0), 1e-10);
  // gamma(r) = r^2, lambda = 1: G(r) = 1/log r, G^{-1}(y) = e^{1/y}.
  const GammaSpec sq = GammaSpec::power(1.0, 2.0);
  EXPECT_NEAR(gamma_tail_G(sq, 1.0, std::exp(2.0)), 0.5, 1e-14);
  const double dt = 2.0;
  EXPECT_NEAR(theta_bound(sq, 1.0, dt), std::exp(4.0 / dt), 1e-8);
  EXPECT_THROW(gamma_tail_G(GammaSpec::logarithmic(1.0), 1.0, 3.0), DomainError);
}

TEST(BetaFromContractivity, Examples) {
  const auto b = beta_from_contractivity(Profile::constant(1.0), 2.0, 4.0, 0.0, 1.0, 0.0);
  EXPECT_NEAR(b.gamma, 6.0 * (1.0 - std::exp(-2.0)), 1e-12);
  EXPECT_EQ(b.beta_tilde, 0.0);
  EXPECT_THROW(beta_from_contractivity(Profile::constant(1.0), 4.0, 4.0, 0.0, 1.0, 0.0), DomainError);
  const auto e1 = beta_from_contractivity(Profile::constant(1.0), 2.0, 2.01, 0.0, 1.0, 1.0);
  const auto e2 = beta_from_contractivity(Profile::constant(1.0), 2.0, 2.001, 0.0, 1.0, 1.0);
  EXPECT_NEAR(e1.beta_tilde, 2.0 * 2.01 / 0.01, 1e-9);
  EXPECT_NEAR(e2.beta_tilde / e1.beta_tilde, 4002.0 / 402.0, 1e-9);
}

TEST(Windows, ClosedForms) {
  EXPECT_NEAR(lsi_window(ou, 0.0, 1.0), 0.5 * (1.0 - std::exp(-2.0)), 1e-13);
  EXPECT_NEAR(harnack_window(ou, 0.0, 1.0), 0.5 * (std::exp(2.0) - 1.0), 1e-12);
  EXPECT_NEAR(harnack_window(heat, 0.0, 1.0), 1.0, 1e-14);
}
