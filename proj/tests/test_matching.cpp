#include <gtest/gtest.h>

#include <numeric>

#include "napl/matching.hpp"
#include "support/suites.hpp"

using namespace napl;

TEST(Hungarian, EqualsBruteForceForSmallSizes) {
  const auto s = suites::matching_vs_brute_force(100, 0x5EED);
  EXPECT_EQ(s.matrices, 600u);
  EXPECT_EQ(s.exact, s.matrices) << s.first_failure;
  // Ties are broken toward the lexicographically smallest optimum.
  EXPECT_EQ(s.same_assignment, s.matrices);
}

TEST(Hungarian, NeverWorseThanSampledPermutations) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 12 + trial % 10;
    std::vector<double> v(n * n);
    for (auto& x : v) x = uniform(rng, 0, 10);
    const CostMatrix cost(n, v);
    const auto m = hungarian_match(cost);
    validate_matching(m, n, n);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (int s = 0; s < 200; ++s) {
      std::shuffle(perm.begin(), perm.end(), rng);
      EXPECT_LE(m.total_cost, assignment_cost(cost, perm) + 1e-9);
    }
  }
}

TEST(Hungarian, IdentityAndAntiDiagonal) {
  const CostMatrix diag(3, {0, 1, 1, 1, 0, 1, 1, 1, 0});
  EXPECT_EQ(hungarian_match(diag).assignment, (std::vector<std::size_t>{0, 1, 2}));
  const CostMatrix anti(3, {5, 5, 0, 5, 0, 5, 0, 5, 5});
  const auto m = hungarian_match(anti);
  EXPECT_EQ(m.assignment, (std::vector<std::size_t>{2, 1, 0}));
  EXPECT_DOUBLE_EQ(m.total_cost, 0.0);
}

TEST(Hungarian, AllEqualCostsGiveIdentity) {
  const CostMatrix flat(4, std::vector<double>(16, 2.5));
  EXPECT_EQ(hungarian_match(flat).assignment, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Hungarian, EmptyAndSingleton) {
  EXPECT_TRUE(hungarian_match(CostMatrix(0, {})).assignment.empty());
  EXPECT_EQ(hungarian_match(CostMatrix(1, {-3})).assignment, (std::vector<std::size_t>{0}));
}

TEST(Hungarian, RejectsNonFiniteCosts) {
  const CostMatrix bad(2, {0, std::numeric_limits<double>::quiet_NaN(), 1, 1});
  EXPECT_THROW(hungarian_match(bad), ContractError);
  EXPECT_THROW(CostMatrix(2, {1, 2, 3}), ContractError);
}

TEST(Hungarian, ValidateMatchingCatchesDuplicates) {
  Matching m{{0, 0}, 0};
  EXPECT_THROW(validate_matching(m, 2, 2), ContractError);
  Matching short_m{{1}, 0};
  EXPECT_THROW(validate_matching(short_m, 2, 2), ContractError);
}
