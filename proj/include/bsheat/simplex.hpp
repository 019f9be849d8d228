#pragma once

// Dense two-phase simplex for small standard-form programs
//   min c.x   s.t.  A x = b,  x >= 0.
// Bland's rule throughout (no cycling), dense tableau storage. Intended for
// the epigraph programs the control module assembles; sizes are a few
// thousand variables at most.

#include <cmath>
#include <string>
#include <vector>

#include "common.hpp"

namespace bsheat {

enum class LpStatus { optimal, infeasible, unbounded, iteration_limit };

struct LpResult {
    LpStatus status = LpStatus::iteration_limit;
    std::vector<double> x;
    double objective = 0.0;
    int iterations = 0;
};

namespace detail {

class SimplexTableau {
public:
    SimplexTableau(const std::vector<std::vector<double>>& A, const std::vector<double>& b,
                   std::size_t extra_cols)
        : m_(A.size()), n_(A.empty() ? 0 : A[0].size()), cols_(n_ + extra_cols + 1) {
        tab_.assign(m_, std::vector<double>(cols_, 0.0));
        basis_.assign(m_, 0);
        for (std::size_t r = 0; r < m_; ++r) {
            for (std::size_t c = 0; c < n_; ++c) tab_[r][c] = A[r][c];
            tab_[r][cols_ - 1] = b[r];
            if (tab_[r][cols_ - 1] < 0.0)
                for (auto& v : tab_[r]) v = -v;
        }
    }

    std::size_t rows() const { return m_; }
    std::size_t rhs_col() const { return cols_ - 1; }
    std::vector<std::vector<double>>& tab() { return tab_; }
    std::vector<std::size_t>& basis() { return basis_; }

    void pivot(std::size_t pr, std::size_t pc) {
        const double piv = tab_[pr][pc];
        for (auto& v : tab_[pr]) v /= piv;
        for (std::size_t r = 0; r < m_; ++r) {
            if (r == pr) continue;
            const double f = tab_[r][pc];
            if (f == 0.0) continue;
            for (std::size_t c = 0; c < cols_; ++c) tab_[r][c] -= f * tab_[pr][c];
        }
        basis_[pr] = pc;
    }

private:
    std::size_t m_, n_, cols_;
    std::vector<std::vector<double>> tab_;
    std::vector<std::size_t> basis_;
};

// Minimizes cost over the tableau with Bland's rule; cost is a row over all
// structural columns. Returns false on unboundedness.
inline bool run_simplex(SimplexTableau& t, std::vector<double>& cost, double& value,
                        int& iterations, int max_iterations, std::size_t usable_cols) {
    constexpr double kTol = 1e-9;
    while (iterations < max_iterations) {
        std::size_t pc = usable_cols;
        for (std::size_t c = 0; c < usable_cols; ++c) {
            if (cost[c] < -kTol) {
                pc = c;
                break;  // Bland: smallest index
            }
        }
        if (pc == usable_cols) return true;  // optimal
        std::size_t pr = t.rows();
        double best = 0.0;
        for (std::size_t r = 0; r < t.rows(); ++r) {
            const double a = t.tab()[r][pc];
            if (a > kTol) {
                const double ratio = t.tab()[r][t.rhs_col()] / a;
                if (pr == t.rows() || ratio < best - 1e-12 ||
                    (std::abs(ratio - best) <= 1e-12 && t.basis()[r] < t.basis()[pr])) {
                    pr = r;
                    best = ratio;
                }
            }
        }
        if (pr == t.rows()) return false;  // unbounded
        ++iterations;
        t.pivot(pr, pc);
        const double f = cost[pc];
        for (std::size_t c = 0; c < cost.size(); ++c) cost[c] -= f * t.tab()[pr][c];
        value += f * t.tab()[pr][t.rhs_col()];
        cost[pc] = 0.0;
    }
    return true;  // iteration limit; caller checks
}

}  // namespace detail

inline LpResult solve_lp(const std::vector<std::vector<double>>& A,
                         const std::vector<double>& b, const std::vector<double>& c,
                         int max_iterations = 200000) {
    const std::size_t m = A.size();
    const std::size_t n = c.size();
    for (const auto& row : A)
        require(row.size() == n, "solve_lp: ragged constraint matrix");
    require(b.size() == m, "solve_lp: rhs size mismatch");

    detail::SimplexTableau t(A, b, m);  // artificials appended after structurals
    for (std::size_t r = 0; r < m; ++r) {
        t.tab()[r][n + r] = 1.0;
        t.basis()[r] = n + r;
    }

    LpResult res;
    // Phase 1: minimize the artificial sum.
    std::vector<double> cost(n + m + 1, 0.0);
    double value = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t col = 0; col <= n + m; ++col) cost[col] -= t.tab()[r][col];
        value += t.tab()[r][t.rhs_col()];
    }
    for (std::size_t r = 0; r < m; ++r) cost[n + r] = 0.0;
    if (!detail::run_simplex(t, cost, value, res.iterations, max_iterations, n + m)) {
        res.status = LpStatus::unbounded;  // cannot happen in phase 1
        return res;
    }
    if (res.iterations >= max_iterations) {
        res.status = LpStatus::iteration_limit;
        return res;
    }
    if (value > 1e-7) {
        res.status = LpStatus::infeasible;
        return res;
    }
    // Drive leftover artificials out of the basis where possible.
    for (std::size_t r = 0; r < m; ++r) {
        if (t.basis()[r] < n) continue;
        std::size_t pc = n;
        for (std::size_t col = 0; col < n; ++col)
            if (std::abs(t.tab()[r][col]) > 1e-9) {
                pc = col;
                break;
            }
        if (pc < n) t.pivot(r, pc);
        // otherwise the row is redundant; its artificial stays at zero
    }

    // Phase 2 on the original objective.
    std::vector<double> cost2(n + m + 1, 0.0);
    for (std::size_t col = 0; col < n; ++col) cost2[col] = c[col];
    double value2 = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        const std::size_t bcol = t.basis()[r];
        if (bcol < n && cost2[bcol] != 0.0) {
            const double f = cost2[bcol];
            for (std::size_t col = 0; col <= n + m; ++col)
                cost2[col] -= f * t.tab()[r][col];
            value2 -= f * t.tab()[r][t.rhs_col()];
            cost2[bcol] = 0.0;
        }
    }
    // Artificial columns are no longer eligible.
    if (!detail::run_simplex(t, cost2, value2, res.iterations, max_iterations, n)) {
        res.status = LpStatus::unbounded;
        return res;
    }
    if (res.iterations >= max_iterations) {
        res.status = LpStatus::iteration_limit;
        return res;
    }
    res.x.assign(n, 0.0);
    for (std::size_t r = 0; r < m; ++r)
        if (t.basis()[r] < n) res.x[t.basis()[r]] = t.tab()[r][t.rhs_col()];
    res.objective = 0.0;
    for (std::size_t col = 0; col < n; ++col) res.objective += c[col] * res.x[col];
    res.status = LpStatus::optimal;
    return res;
}

}  // namespace bsheat
