#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace stad {

// Rectangular cost matrix with `rows` predictions and `cols >= rows` columns.
// The first `real_cols` columns are real targets, the rest are background
// padding (relevant to the caller, not to the solver).
struct CostMatrix {
  int rows = 0;
  int cols = 0;
  int real_cols = 0;
  std::vector<double> c;

  CostMatrix() = default;
  CostMatrix(int r, int m, int real) : rows(r), cols(m), real_cols(real), c(static_cast<std::size_t>(r) * m, 0.0) {}

  double& at(int i, int j) { return c[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return c[static_cast<std::size_t>(i) * cols + j]; }

  bool finite() const {
    for (double v : c)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

namespace detail {

// Potentials-based shortest augmenting path assignment (rows <= cols).
// Returns row -> column, minimizing the total cost.
inline std::vector<int> assign_min_cost(int n, int m, const std::vector<double>& cost,
                                        const std::vector<int>& row_ids,
                                        const std::vector<int>& col_ids, int full_cols) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);
  auto c_at = [&](int i, int j) {
    return cost[static_cast<std::size_t>(row_ids[i]) * full_cols + col_ids[j]];
  };
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c_at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return row_to_col;
}

}  // namespace detail

// Total cost of an assignment, summed in row order. Brute-force checks sum in
// the same order, so equal assignments compare bitwise equal.
inline double assignment_cost(const CostMatrix& cm, const std::vector<int>& row_to_col) {
  double total = 0.0;
  for (int i = 0; i < cm.rows; ++i) total += cm.at(i, row_to_col[static_cast<std::size_t>(i)]);
  return total;
}

// Minimum-cost assignment of every row to a distinct column. Among optimal
// assignments the lexicographically smallest (by column index, row by row) is
// returned, which pins down the behaviour on duplicated targets.
inline std::vector<int> solve_assignment(const CostMatrix& cm) {
  if (cm.rows == 0) return {};
  if (cm.cols < cm.rows)
    throw std::invalid_argument("solve_assignment: need at least as many columns as rows");
  if (!cm.finite()) throw std::invalid_argument("solve_assignment: non-finite cost");

  std::vector<int> all_rows(static_cast<std::size_t>(cm.rows));
  std::vector<int> all_cols(static_cast<std::size_t>(cm.cols));
  for (int i = 0; i < cm.rows; ++i) all_rows[static_cast<std::size_t>(i)] = i;
  for (int j = 0; j < cm.cols; ++j) all_cols[static_cast<std::size_t>(j)] = j;

  std::vector<int> best =
      detail::assign_min_cost(cm.rows, cm.cols, cm.c, all_rows, all_cols, cm.cols);
  const double opt = assignment_cost(cm, best);

  // Lexicographic refinement: fix rows one at a time to the smallest column
  // that still admits an assignment of exactly optimal total cost.
  std::vector<char> col_taken(static_cast<std::size_t>(cm.cols), 0);
  for (int i = 0; i < cm.rows; ++i) {
    for (int cand = 0; cand < best[static_cast<std::size_t>(i)]; ++cand) {
      if (col_taken[static_cast<std::size_t>(cand)]) continue;
      // Solve for the remaining rows on the remaining columns.
      std::vector<int> rows, cols;
      for (int r = i + 1; r < cm.rows; ++r) rows.push_back(r);
      for (int c = 0; c < cm.cols; ++c)
        if (!col_taken[static_cast<std::size_t>(c)] && c != cand) cols.push_back(c);
      std::vector<int> sub;
      if (!rows.empty())
        sub = detail::assign_min_cost(static_cast<int>(rows.size()), static_cast<int>(cols.size()),
                                      cm.c, rows, cols, cm.cols);
      std::vector<int> candidate = best;
      candidate[static_cast<std::size_t>(i)] = cand;
      for (std::size_t k = 0; k < rows.size(); ++k)
        candidate[static_cast<std::size_t>(rows[k])] = cols[static_cast<std::size_t>(sub[k])];
      if (assignment_cost(cm, candidate) == opt) {
        best = candidate;
        break;
      }
    }
    col_taken[static_cast<std::size_t>(best[static_cast<std::size_t>(i)])] = 1;
  }
  return best;
}

}  // namespace stad
