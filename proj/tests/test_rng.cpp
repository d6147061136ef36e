#include <gtest/gtest.h>

#include <set>

#include "evoflow/rng.hpp"
#include "evoflow/stats.hpp"

using namespace evoflow;

// Known-answer vectors from the Random123 distribution.
TEST(Philox, KnownAnswers) {
  using C = Philox4x32::Counter;
  EXPECT_EQ(Philox4x32::block(C{0, 0, 0, 0}, {0, 0}),
            (C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(Philox4x32::block(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                              {0xffffffff, 0xffffffff}),
            (C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(Philox4x32::block(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                              {0xa4093822, 0x299f31d0}),
            (C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(NoiseStream, SameKeySameDraws) {
  NoiseStream a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.gaussian(), b.gaussian());
}

TEST(NoiseStream, DistinctPathsDiffer) {
  NoiseStream a(42, 0), b(42, 1), c(43, 0);
  const double x = a.uniform();
  EXPECT_NE(x, b.uniform());
  EXPECT_NE(x, c.uniform());
}

TEST(NoiseStream, UniformOpenInterval) {
  NoiseStream s(1, 0);
  for (int i = 0; i < 10000; ++i) {
    const double u = s.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(NoiseStream, GaussianMoments) {
  NoiseStream s(2024, 3);
  std::vector<double> x(200000), x2(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = s.gaussian();
    x2[i] = x[i] * x[i];
  }
  const auto m = summarize(x), v = summarize(x2);
  EXPECT_NEAR(m.mean, 0.0, 4.0 * m.stderr);
  EXPECT_NEAR(v.mean, 1.0, 4.0 * v.stderr);
}

TEST(DeriveSeed, DistinctChildren) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t tag = 0; tag < 1000; ++tag) seen.insert(derive_seed(99, tag));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(5, 6), derive_seed(5, 6));
  EXPECT_NE(derive_seed(5, 6), derive_seed(6, 5));
}

TEST(Stats, PairwiseSumAndFit) {
  std::vector<double> xs(1000, 0.1);
  EXPECT_NEAR(pairwise_sum(xs), 100.0, 1e-12);
  std::vector<double> a{0, 1, 2, 3}, b{1, 3, 5, 7};
  const auto f = fit_line(a, b);
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
}
