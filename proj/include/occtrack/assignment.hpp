#pragma once

#include "occtrack/common.hpp"

#include <limits>
#include <vector>

namespace occtrack {

/// Exact minimum-cost assignment by shortest augmenting paths in O(n^2·m).
/// Returns, per row, the assigned column. With rows ≤ cols every row is
/// assigned; otherwise the cheapest rows win and the rest get -1.
inline std::vector<int> min_cost_assignment(const MatX& cost) {
    const int n = static_cast<int>(cost.rows());
    const int m = static_cast<int>(cost.cols());
    if (n == 0) return {};
    if (n > m) {
        const std::vector<int> col_to_row = min_cost_assignment(cost.transpose());
        std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
        for (int j = 0; j < m; ++j)
            if (col_to_row[static_cast<std::size_t>(j)] >= 0)
                row_to_col[static_cast<std::size_t>(col_to_row[static_cast<std::size_t>(j)])] = j;
        return row_to_col;
    }

    const double inf = std::numeric_limits<double>::infinity();
    // 1-based potentials; p[j] is the row matched to column j, 0 when free.
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(m) + 1, 0);
    std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = p[static_cast<std::size_t>(j0)];
            int j1 = 0;
            double delta = inf;
            for (int j = 1; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= m; ++j)
        if (p[static_cast<std::size_t>(j)] != 0)
            row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return row_to_col;
}

}  // namespace occtrack
