#include "stad/hungarian.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <vector>

#include "stad/rng.hpp"

using namespace stad;

namespace {

// Exhaustive minimum over all injective row->column maps, iterating
// permutations in lexicographic order so ties resolve the same way the solver
// promises.
std::pair<double, std::vector<int>> brute_force(const CostMatrix& cm) {
  std::vector<int> cols(static_cast<std::size_t>(cm.cols));
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> best_assign;
  do {
    double total = 0.0;
    for (int i = 0; i < cm.rows; ++i) total += cm.at(i, cols[static_cast<std::size_t>(i)]);
    if (total < best) {
      best = total;
      best_assign.assign(cols.begin(), cols.begin() + cm.rows);
    }
  } while (std::next_permutation(cols.begin(), cols.end()));
  return {best, best_assign};
}

CostMatrix random_matrix(Rng& rng, int rows, int cols) {
  CostMatrix cm(rows, cols, cols);
  for (auto& v : cm.c) v = rng.uniform(0.0, 10.0);
  return cm;
}

}  // namespace

TEST(Hungarian, DiagonalZeroIsIdentity) {
  CostMatrix cm(3, 3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) cm.at(i, j) = i == j ? 0.0 : 5.0;
  EXPECT_EQ(solve_assignment(cm), (std::vector<int>{0, 1, 2}));
}

TEST(Hungarian, WorkedTwoByTwo) {
  CostMatrix cm(2, 2, 2);
  cm.at(0, 0) = 1;
  cm.at(0, 1) = 2;
  cm.at(1, 0) = 2;
  cm.at(1, 1) = 4;
  const auto a = solve_assignment(cm);
  EXPECT_EQ(a, (std::vector<int>{1, 0}));
  EXPECT_DOUBLE_EQ(assignment_cost(cm, a), 4.0);
}

TEST(Hungarian, FiveByFiveMatchesBruteForce) {
  Rng rng(11);
  const CostMatrix cm = random_matrix(rng, 5, 5);
  const auto a = solve_assignment(cm);
  const auto [best, ba] = brute_force(cm);
  EXPECT_EQ(assignment_cost(cm, a), best);
  EXPECT_EQ(a, ba);
}

TEST(Hungarian, RandomUpTo6x6MatchesBruteForceExactly) {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(1, 6);
    const int m = n + static_cast<int>(rng.uniform_int(3));
    const CostMatrix cm = random_matrix(rng, n, m);
    const auto a = solve_assignment(cm);
    const auto [best, ba] = brute_force(cm);
    EXPECT_EQ(assignment_cost(cm, a), best) << "trial " << trial;
  }
}

TEST(Hungarian, LexicographicOnExactTies) {
  // two identical columns: the lower index must win for the first row
  CostMatrix cm(1, 2, 2);
  cm.at(0, 0) = 1.5;
  cm.at(0, 1) = 1.5;
  EXPECT_EQ(solve_assignment(cm), (std::vector<int>{0}));

  // duplicated pair of columns; optimal total is unique, assignment is not
  CostMatrix dup(2, 4, 4);
  const double row0[4] = {2.0, 7.0, 2.0, 7.0};
  const double row1[4] = {1.0, 3.0, 1.0, 3.0};
  for (int j = 0; j < 4; ++j) {
    dup.at(0, j) = row0[j];
    dup.at(1, j) = row1[j];
  }
  const auto a = solve_assignment(dup);
  const auto [best, ba] = brute_force(dup);
  EXPECT_EQ(assignment_cost(dup, a), best);
  EXPECT_EQ(a, ba) << "expected the lexicographically smallest optimum";
  EXPECT_EQ(a, (std::vector<int>{0, 2}));
}

TEST(Hungarian, ScalingInvariance) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const CostMatrix cm = random_matrix(rng, 4, 5);
    CostMatrix scaled = cm;
    const double k = rng.uniform(0.1, 20.0);
    for (auto& v : scaled.c) v *= k;
    EXPECT_EQ(solve_assignment(cm), solve_assignment(scaled));
  }
}

TEST(Hungarian, RejectsBadInput) {
  CostMatrix wide(3, 2, 2);
  EXPECT_THROW(solve_assignment(wide), std::invalid_argument);
  CostMatrix inf(1, 1, 1);
  inf.at(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(solve_assignment(inf), std::invalid_argument);
  EXPECT_TRUE(solve_assignment(CostMatrix{}).empty());
}
