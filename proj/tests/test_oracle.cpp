#include <gtest/gtest.h>

#include <fstream>
#include <numbers>

#include "evoflow/oracle.hpp"

using namespace evoflow;

namespace {
const Model ou = Model::ornstein_uhlenbeck(2, 1.0);
const Model conformal = Model::conformal_flat(2, Profile::exponential(-1.0));
}  // namespace

TEST(MehlerParams, OuClosedForm) {
  const auto p = mehler_params(ou, 0.0, 1.0);
  EXPECT_NEAR(p.m, std::exp(-1.0), 1e-15);
  EXPECT_NEAR(p.sigma2, 1.0 - std::exp(-2.0), 1e-13);
  EXPECT_NEAR(p.v, 1.0, 1e-9);
  EXPECT_TRUE(p.measure_exists);
}

TEST(MehlerParams, HeatHasNoSystem) {
  const auto p = mehler_params(Model::static_flat(2), 0.0, 1.0);
  EXPECT_FALSE(p.measure_exists);
  EXPECT_THROW(exact_mu(p, TestFunction::coordinate(0)), DomainError);
  EXPECT_THROW(mehler_params(Model::shrinking_sphere(2, 0.0), -2.0, -1.0), DomainError);
}

TEST(MehlerParams, ConformalMoments) {
  for (double t : {-1.0, 0.0, 1.5}) {
    const auto p = mehler_params(conformal, t, t);
    EXPECT_NEAR(p.v, std::exp(2.0 * t), 1e-8 * std::exp(2.0 * t));
    EXPECT_NEAR(exact_mu_second_moment(p), 2.0, 1e-8);
  }
}

TEST(MehlerParams, ChapmanKolmogorov) {
  for (const Model* m : {&ou, &conformal}) {
    const auto a = mehler_params(*m, 0.0, 0.4), b = mehler_params(*m, 0.4, 1.0);
    const auto whole = mehler_params(*m, 0.0, 1.0);
    const auto c = compose(a, b);
    EXPECT_NEAR(c.m, whole.m, 1e-12);
    EXPECT_NEAR(c.sigma2, whole.sigma2, 1e-12 * whole.sigma2);
  }
}

TEST(ExactP, Examples) {
  const auto p = mehler_params(ou, 0.0, 1.0);
  Vector x(2);
  x << 1.0, 0.0;
  EXPECT_NEAR(exact_p(p, x, TestFunction::coordinate(0)), std::exp(-1.0), 1e-15);
  EXPECT_TRUE(exact_gradient(p, x, TestFunction::coordinate(0)).isApprox(Vector::Unit(2, 0) * p.m));
  EXPECT_EQ(exact_p(p, x, TestFunction::constant(1.0)), 1.0);
  EXPECT_EQ(exact_gradient(p, x, TestFunction::constant(1.0)).norm(), 0.0);
  const auto pc = mehler_params(conformal, 0.0, 1.0);
  EXPECT_NEAR(exact_p(pc, Vector::Zero(2), TestFunction::norm2()), 2.0 * (std::exp(2.0) - 1.0), 1e-10);
}

TEST(ExactP, ExpMoment) {
  const auto p = mehler_params(ou, 1.0, 1.0);
  EXPECT_NEAR(exact_exp_moment(p, 0.25), 2.0, 1e-8);
  EXPECT_TRUE(std::isinf(exact_exp_moment(p, 0.5)));
}

TEST(ExactP, ConformalGradientContraction) {
  // grad^s P f = e^{-int k} P grad^t f exactly on the conformal model.
  const auto p = mehler_params(conformal, 0.0, 1.0);
  const auto f = TestFunction::lip_cap(0.0, 1.0, 10.0);
  Vector x(2);
  x << 0.3, -0.1;
  const Vector g = exact_frame_gradient(p, x, f);
  Vector expected(2);
  expected.setZero();
  expected[0] = gaussian_expectation(p.m * x[0], p.sigma2, [](double y) {
    const double th = std::tanh(y / 10.0);
    return 1.0 - th * th;
  });
  expected *= std::exp(-conformal.k_integral(0.0, 1.0)) / p.scale_t;
  EXPECT_NEAR((g - expected).norm(), 0.0, 1e-12);
}

TEST(GaussHermite, Moments) {
  auto norm = [](int k) {
    return gaussian_expectation(0.0, 1.0, [k](double z) { return std::pow(z, k); });
  };
  EXPECT_NEAR(norm(0), 1.0, 1e-13);
  EXPECT_NEAR(norm(2), 1.0, 1e-13);
  EXPECT_NEAR(norm(4), 3.0, 1e-12);
  EXPECT_NEAR(norm(6), 15.0, 1e-11);
  for (double a : {1.0, 3.0, 4.1})
    EXPECT_NEAR(gaussian_expectation(0.0, 1.0, [a](double z) { return std::exp(a * z); }) /
                    std::exp(0.5 * a * a),
                1.0, 1e-12);
}

TEST(Fixtures, MatchCommittedFile) {
  std::ifstream in(std::string(EVOFLOW_SOURCE_DIR) + "/tests/fixtures/oracle_fixtures.json");
  ASSERT_TRUE(in) << "fixture file missing";
  const Json committed = Json::parse(in);
  const Json fresh = oracle_fixtures();
  ASSERT_EQ(committed.size(), fresh.size());
  // Frozen values, compared at a tolerance fitting double rounding.
  std::function<void(const Json&, const Json&, const std::string&)> cmp =
      [&](const Json& a, const Json& b, const std::string& path) {
        if (a.is_number() && b.is_number()) {
          const double x = a.get<double>(), y = b.get<double>();
          EXPECT_NEAR(x, y, 1e-12 * std::max(1.0, std::abs(y))) << path;
        } else if (a.is_structured()) {
          ASSERT_EQ(a.size(), b.size()) << path;
          for (auto it = b.begin(); it != b.end(); ++it) {
            const std::string key = b.is_object() ? it.key() : std::to_string(std::distance(b.begin(), it));
            cmp(b.is_object() ? a.at(it.key()) : a.at(std::distance(b.begin(), it)), *it, path + "." + key);
          }
        } else {
          EXPECT_EQ(a, b) << path;
        }
      };
  cmp(committed, fresh, "");
  EXPECT_NEAR(committed["ou"]["p_coordinate_at_1_0"].get<double>(), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(committed["ou"]["exp_moment_0.25"].get<double>(), 2.0, 1e-8);
}
