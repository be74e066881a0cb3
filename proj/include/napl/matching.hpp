#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "napl/common.hpp"

namespace napl {

/// Dense square cost matrix, row-major.
struct CostMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(std::size_t size, std::vector<double> v) : n(size), values(std::move(v)) {
    require(values.size() == n * n, "cost matrix must be square");
  }
  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
};

/// σ as a row → column map, plus Σ_i cost(i, σ(i)) summed in row order.
struct Matching {
  std::vector<std::size_t> assignment;
  double total_cost = 0;
};

inline double assignment_cost(const CostMatrix& cost, const std::vector<std::size_t>& assignment) {
  double total = 0;
  for (std::size_t i = 0; i < assignment.size(); ++i) total += cost(i, assignment[i]);
  return total;
}

inline void validate_matching(const Matching& m, std::size_t rows, std::size_t cols) {
  require(m.assignment.size() == rows, "matching is not total over the ground-truth set");
  std::vector<bool> used(cols, false);
  for (auto j : m.assignment) {
    require(j < cols, "matching maps outside the prediction set");
    require(!used[j], "matching is not injective");
    used[j] = true;
  }
}

namespace detail {

inline constexpr std::size_t kUnmatched = std::numeric_limits<std::size_t>::max();

// Row potentials u, column potentials v with cost(i,j) − u_i − v_j ≥ 0 and
// equality on the returned assignment (shortest augmenting paths, O(n³)).
inline void solve_assignment(const CostMatrix& cost, std::vector<double>& u, std::vector<double>& v,
                             std::vector<std::size_t>& row_of_col) {
  const std::size_t n = cost.n;
  const double inf = std::numeric_limits<double>::infinity();
  u.assign(n + 1, 0.0);
  v.assign(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);  // 1-based columns, p[j] = row
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
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
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  row_of_col.assign(n, kUnmatched);
  for (std::size_t j = 1; j <= n; ++j) row_of_col[j - 1] = p[j] - 1;
  u.erase(u.begin());
  v.erase(v.begin());
}

}  // namespace detail

/// Minimum-cost perfect matching of rows to columns. Among optimal
/// assignments the lexicographically smallest assignment vector is returned:
/// every optimal assignment uses only edges that are tight under the optimal
/// dual, so rows are fixed in order to the smallest tight column that still
/// admits a perfect matching on the remaining tight edges.
inline Matching hungarian_match(const CostMatrix& cost) {
  const std::size_t n = cost.n;
  for (double c : cost.values) {
    if (!std::isfinite(c)) throw ContractError("hungarian_match: cost matrix has non-finite entries");
  }
  Matching out;
  if (n == 0) return out;

  std::vector<double> u, v;
  std::vector<std::size_t> match_col;
  detail::solve_assignment(cost, u, v, match_col);
  std::vector<std::size_t> match_row(n);
  for (std::size_t j = 0; j < n; ++j) match_row[match_col[j]] = j;

  double scale = 1.0;
  for (double c : cost.values) scale = std::max(scale, std::abs(c));
  const double tol = 1e-9 * scale;
  auto tight = [&](std::size_t i, std::size_t j) { return cost(i, j) - u[i] - v[j] <= tol; };

  std::vector<bool> fixed_col(n, false);
  std::vector<bool> visited(n, false);
  // Re-matches row r through tight edges into currently free columns.
  auto augment = [&](auto&& self, std::size_t r) -> bool {
    for (std::size_t c = 0; c < n; ++c) {
      if (fixed_col[c] || visited[c] || !tight(r, c)) continue;
      visited[c] = true;
      if (match_col[c] == detail::kUnmatched || self(self, match_col[c])) {
        match_col[c] = r;
        match_row[r] = c;
        return true;
      }
    }
    return false;
  };

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (fixed_col[j] || !tight(i, j)) continue;
      if (match_row[i] == j) {
        fixed_col[j] = true;
        break;
      }
      const auto saved_row = match_row;
      const auto saved_col = match_col;
      const std::size_t displaced = match_col[j];
      const std::size_t released = match_row[i];
      match_row[i] = j;
      match_col[j] = i;
      match_col[released] = detail::kUnmatched;
      match_row[displaced] = detail::kUnmatched;
      fixed_col[j] = true;
      std::fill(visited.begin(), visited.end(), false);
      if (augment(augment, displaced)) break;
      fixed_col[j] = false;
      match_row = saved_row;
      match_col = saved_col;
    }
  }

  out.assignment = match_row;
  out.total_cost = assignment_cost(cost, out.assignment);
  return out;
}

}  // namespace napl
