#pragma once

// Backward time-stepping solver for
//   dy = -(Lap y + alpha y + beta Y + F) dt + Y dW,   y(T) = y_T,
// on the tree x grid product, plus the discrete Ito-formula residual
// machinery used to certify it.
//
// One backward step at a level-n node:
//   Y_n = (y_{n+1}^up - y_{n+1}^down) / (2 sqrt(dt))     (martingale rep.)
//   m_n = (y_{n+1}^up + y_{n+1}^down) / 2                (= E[y_{n+1} | F_n])
//   (I - dt (Lap_h + alpha_n)) y_n = m_n + dt (beta_n . Y_n + F_n)
// Implicit in the diffusion and alpha, explicit in the beta coupling; the
// precondition dt ||beta||_inf^2 < 1 mirrors the delta-absorption in the
// a priori estimates, and dt ||alpha||_inf < 1 keeps the step matrix an
// M-matrix (maximum principle).

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "field.hpp"
#include "toolkit.hpp"

namespace bsheat {

struct SolveOptions {
    int jobs = 1;
};

struct BSPDESolution {
    AdaptedField y;  // levels 0..N
    AdaptedField Y;  // levels 0..N-1; no level-N value is invented
    double dt = 0.0;
    double max_step_residual = 0.0;
};

inline void validate_problem(const ScenarioTree& tree, const Discretization& disc,
                             const CoefficientSet& coeffs, const ProblemData& data) {
    require(coeffs.alpha.stored_levels() >= tree.levels &&
                coeffs.beta.stored_levels() >= tree.levels,
            "solve_linear: coefficients must cover levels 0..N-1");
    require(coeffs.alpha.points == disc.interior_points &&
                coeffs.beta.points == disc.interior_points,
            "solve_linear: coefficient grid size mismatch");
    require(data.source.stored_levels() >= tree.levels,
            "solve_linear: source must cover levels 0..N-1");
    require(data.source.points == disc.interior_points,
            "solve_linear: source grid size mismatch");
    require(data.terminal.level == tree.levels,
            "solve_linear: terminal slice must live at level N");
    require(data.terminal.points == disc.interior_points &&
                data.terminal.node_count() == tree.node_count(tree.levels),
            "solve_linear: terminal slice shape mismatch");
    if (!coeffs.alpha.finite() || !coeffs.beta.finite() || !data.source.finite())
        throw data_error("solve_linear: non-finite coefficient or source data");
    for (double v : data.terminal.data)
        if (!std::isfinite(v)) throw data_error("solve_linear: non-finite terminal data");

    const double bs = coeffs.beta_sup();
    if (tree.dt * bs * bs >= 1.0)
        throw config_error(
            "solve_linear: explicit beta coupling needs dt*||beta||_inf^2 < 1 "
            "(got " +
            std::to_string(tree.dt * bs * bs) + "); decrease dt");
    const double as = coeffs.alpha_sup();
    if (tree.dt * as >= 1.0)
        throw config_error(
            "solve_linear: step matrix needs dt*||alpha||_inf < 1 (got " +
            std::to_string(tree.dt * as) + "); decrease dt");
}

inline BSPDESolution solve_linear(const ScenarioTree& tree, const Discretization& disc,
                                  const CoefficientSet& coeffs, const ProblemData& data,
                                  const SolveOptions& opts = {}) {
    validate_problem(tree, disc, coeffs, data);
    const int N = tree.levels;
    const int M = disc.interior_points;
    const double dt = tree.dt;
    const double isq = 1.0 / (2.0 * std::sqrt(dt));

    BSPDESolution sol;
    sol.dt = dt;
    sol.y = AdaptedField::zeros(tree, disc, N + 1);
    sol.Y = AdaptedField::zeros(tree, disc, N);
    sol.y.levels[static_cast<std::size_t>(N)] = data.terminal.data;

    std::vector<double> level_residual(static_cast<std::size_t>(N), 0.0);
    for (int n = N - 1; n >= 0; --n) {
        const std::int64_t cnt = tree.node_count(n);
        std::vector<double> worst(static_cast<std::size_t>(cnt), 0.0);
        parallel_for(cnt, opts.jobs, [&](std::int64_t v) {
            const auto up = sol.y.at(n + 1, tree.child(n, v, true));
            const auto dn = sol.y.at(n + 1, tree.child(n, v, false));
            auto Yrow = sol.Y.at(n, v);
            const auto beta = coeffs.beta.at(n, v);
            const auto alpha = coeffs.alpha.at(n, v);
            const auto src = data.source.at(n, v);
            SpatialVector rhs(static_cast<std::size_t>(M));
            SpatialVector diag_c(alpha.begin(), alpha.end());
            for (int j = 0; j < M; ++j) {
                const auto ju = static_cast<std::size_t>(j);
                Yrow[ju] = (up[ju] - dn[ju]) * isq;
                const double m = 0.5 * (up[ju] + dn[ju]);
                rhs[ju] = m + dt * (beta[ju] * Yrow[ju] + src[ju]);
            }
            const SpatialVector yn = solve_step_system(disc, dt, diag_c, rhs);
            worst[static_cast<std::size_t>(v)] =
                step_system_residual(disc, dt, diag_c, yn, rhs);
            auto out = sol.y.at(n, v);
            for (int j = 0; j < M; ++j) out[static_cast<std::size_t>(j)] = yn[static_cast<std::size_t>(j)];
        });
        for (double w : worst)
            level_residual[static_cast<std::size_t>(n)] =
                std::max(level_residual[static_cast<std::size_t>(n)], w);
    }
    for (double w : level_residual) sol.max_step_residual = std::max(sol.max_step_residual, w);
    return sol;
}

// ---------------------------------------------------------------------------
// Discrete Ito-formula residual.
//
// The identity being checked, per scenario, from level t to N:
//   integral phi(y(t)) + int_t^T int phi''(y) |grad y|^2
//     + 1/2 int_t^T int phi''(y) Y^2
//   = integral phi(y_T) + int_t^T int phi'(y) (alpha y + beta Y + F)
//     - int_t^T int phi'(y) Y dW.
// Time integrals use the left-endpoint rule on levels t..N-1; the gradient
// integral weights each edge by the average of phi''(y) at its endpoints
// (boundary values 0), which reduces exactly to the H^1 seminorm at p = 2.
// The report stores E[LHS - RHS | F_t] per node; the stochastic integral has
// conditional expectation exactly zero, so it never enters the per-node
// values, and its global expectation is reported separately.

struct ScalarFamily {
    std::function<double(double)> value;
    std::function<double(double)> d1;
    std::function<double(double)> d2;
};

inline ScalarFamily power_scalar_family(double p) {
    return {[p](double r) { return power_family(p, r, 0); },
            [p](double r) { return power_family(p, r, 1); },
            [p](double r) { return power_family(p, r, 2); }};
}

inline ScalarFamily truncated_scalar_family(const TruncationFamily& fam) {
    return {[fam](double r) { return phi(fam, r, 0); },
            [fam](double r) { return phi(fam, r, 1); },
            [fam](double r) { return phi(fam, r, 2); }};
}

struct ItoResidualReport {
    int level = 0;
    std::vector<double> per_node;         // E[LHS - RHS | F_t] per node at `level`
    double expectation = 0.0;             // E[LHS - RHS]
    double stochastic_expectation = 0.0;  // E[ sum_n <phi'(y_n), Y_n> dW_n ]
    double max_abs_per_node = 0.0;
};

namespace detail {

// Quadrature of int phi''(y) |grad y|^2 as the exact discrete pairing
//   <-Lap_h y, phi'(y)>_h = sum_edges (y_{j+1} - y_j)(phi'(y_{j+1}) - phi'(y_j)) / h,
// a mean-value-weighted edge rule. This makes the gradient term cancel the
// dt <phi'(y), Lap_h y> drift contribution identically, so the Ito-formula
// residual is purely temporal; at p = 2 it is the H^1 seminorm.
inline double edge_weighted_gradient(const Discretization& disc,
                                     std::span<const double> y,
                                     const ScalarFamily& fam) {
    const int m = disc.interior_points;
    NeumaierSum s;
    double prev_val = 0.0;
    double prev_d1 = fam.d1(0.0);
    for (int j = 0; j < m; ++j) {
        const double cur = y[static_cast<std::size_t>(j)];
        const double d1 = fam.d1(cur);
        s.add((cur - prev_val) * (d1 - prev_d1));
        prev_val = cur;
        prev_d1 = d1;
    }
    s.add((0.0 - prev_val) * (fam.d1(0.0) - prev_d1));
    return s.value() / disc.h;
}

}  // namespace detail

inline ItoResidualReport ito_residual_with(const ScenarioTree& tree,
                                           const Discretization& disc,
                                           const BSPDESolution& sol,
                                           const CoefficientSet& coeffs,
                                           const ProblemData& data,
                                           const ScalarFamily& fam, int t_idx) {
    require(t_idx >= 0 && t_idx <= tree.levels, "ito_residual: level out of range");
    const int N = tree.levels;
    const int M = disc.interior_points;
    const double dt = tree.dt;
    const double sq = std::sqrt(dt);

    std::vector<std::vector<double>> terms(static_cast<std::size_t>(N) + 1);
    NeumaierSum stoch;
    for (int n = t_idx; n < N; ++n) {
        const std::int64_t cnt = tree.node_count(n);
        auto& slot = terms[static_cast<std::size_t>(n)];
        slot.assign(static_cast<std::size_t>(cnt), 0.0);
        for (std::int64_t v = 0; v < cnt; ++v) {
            const auto y = sol.y.at(n, v);
            const auto Y = sol.Y.at(n, v);
            const auto al = coeffs.alpha.at(n, v);
            const auto be = coeffs.beta.at(n, v);
            const auto src = data.source.at(n, v);
            NeumaierSum cross, drift, zrow;
            for (int j = 0; j < M; ++j) {
                const auto ju = static_cast<std::size_t>(j);
                const double d2v = fam.d2(y[ju]);
                const double d1v = fam.d1(y[ju]);
                cross.add(d2v * Y[ju] * Y[ju]);
                drift.add(d1v * (al[ju] * y[ju] + be[ju] * Y[ju] + src[ju]));
                zrow.add(d1v * Y[ju]);
            }
            const double grad = detail::edge_weighted_gradient(disc, y, fam);
            slot[static_cast<std::size_t>(v)] =
                dt * (grad + 0.5 * disc.h * cross.value() - disc.h * drift.value());
            // up and down contributions of the dW term, added adjacently so
            // the exact cancellation survives compensated summation
            const double z = tree.probability(n, v) * disc.h * zrow.value() * sq;
            stoch.add(z * 0.5);
            stoch.add(-z * 0.5);
        }
    }
    {
        const std::int64_t cnt = tree.node_count(N);
        auto& slot = terms[static_cast<std::size_t>(N)];
        slot.assign(static_cast<std::size_t>(cnt), 0.0);
        for (std::int64_t v = 0; v < cnt; ++v) {
            const auto yT = sol.y.at(N, v);
            NeumaierSum s;
            for (int j = 0; j < M; ++j) s.add(fam.value(yT[static_cast<std::size_t>(j)]));
            slot[static_cast<std::size_t>(v)] = -disc.h * s.value();
        }
    }

    ItoResidualReport rep;
    rep.level = t_idx;
    rep.per_node = conditional_sum(tree, terms, t_idx);
    const std::int64_t cnt = tree.node_count(t_idx);
    NeumaierSum mean;
    for (std::int64_t v = 0; v < cnt; ++v) {
        const auto y = sol.y.at(t_idx, v);
        NeumaierSum s;
        for (int j = 0; j < M; ++j) s.add(fam.value(y[static_cast<std::size_t>(j)]));
        auto& r = rep.per_node[static_cast<std::size_t>(v)];
        r += disc.h * s.value();
        rep.max_abs_per_node = std::max(rep.max_abs_per_node, std::abs(r));
        mean.add(tree.probability(t_idx, v) * r);
    }
    rep.expectation = mean.value();
    rep.stochastic_expectation = stoch.value();
    return rep;
}

inline ItoResidualReport ito_residual(const ScenarioTree& tree, const Discretization& disc,
                                      const BSPDESolution& sol,
                                      const CoefficientSet& coeffs,
                                      const ProblemData& data, double p, int t_idx) {
    require(p >= 2.0, "ito_residual: p must be >= 2");
    return ito_residual_with(tree, disc, sol, coeffs, data, power_scalar_family(p), t_idx);
}

inline ItoResidualReport phi_identity_check(const ScenarioTree& tree,
                                            const Discretization& disc,
                                            const BSPDESolution& sol,
                                            const CoefficientSet& coeffs,
                                            const ProblemData& data,
                                            const TruncationFamily& fam, int t_idx) {
    return ito_residual_with(tree, disc, sol, coeffs, data,
                             truncated_scalar_family(fam), t_idx);
}

// ---------------------------------------------------------------------------
// Telescoped weak-form residual against a grid test vector, per path:
//   (y(t), phi) - (y_T, phi) + sum_n dt (grad y_n, grad phi)
//     - sum_n dt (drift_n, phi) + sum_n (Y_n, phi) dW_n,
// with (grad u, grad phi) = sum of edge-jump products / h (exact summation by
// parts). drift(n, node) supplies alpha y + beta Y + F, or the semilinear
// variant. Returns the max absolute defect over all paths.

template <class DriftFn>
double telescoped_weak_residual(const ScenarioTree& tree, const Discretization& disc,
                                const BSPDESolution& sol, const SpatialVector& testvec,
                                int t_idx, DriftFn&& drift) {
    check_length(disc, testvec, "telescoped_weak_residual");
    const int N = tree.levels;
    const int M = disc.interior_points;
    const double dt = tree.dt;
    const double sq = std::sqrt(dt);

    auto grad_pair = [&](std::span<const double> u) {
        NeumaierSum s;
        double pu = 0.0, pp = 0.0;
        for (int j = 0; j < M; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            s.add((u[ju] - pu) * (testvec[ju] - pp));
            pu = u[ju];
            pp = testvec[ju];
        }
        s.add((0.0 - pu) * (0.0 - pp));
        return s.value() / disc.h;
    };
    auto dot_vec = [&](const SpatialVector& w) {
        NeumaierSum s;
        for (int j = 0; j < M; ++j)
            s.add(w[static_cast<std::size_t>(j)] * testvec[static_cast<std::size_t>(j)]);
        return disc.h * s.value();
    };
    auto dot_span = [&](std::span<const double> u) {
        NeumaierSum s;
        for (int j = 0; j < M; ++j)
            s.add(u[static_cast<std::size_t>(j)] * testvec[static_cast<std::size_t>(j)]);
        return disc.h * s.value();
    };

    double worst = 0.0;
    for_each_path(tree, [&](const std::vector<std::int64_t>& nodes, double) {
        NeumaierSum acc;
        acc.add(dot_span(sol.y.at(t_idx, nodes[static_cast<std::size_t>(t_idx)])));
        acc.add(-dot_span(sol.y.at(N, nodes[static_cast<std::size_t>(N)])));
        for (int n = t_idx; n < N; ++n) {
            const std::int64_t v = nodes[static_cast<std::size_t>(n)];
            acc.add(dt * grad_pair(sol.y.at(n, v)));
            acc.add(-dt * dot_vec(drift(n, v)));
            const bool went_up =
                nodes[static_cast<std::size_t>(n) + 1] == tree.child(n, v, true);
            acc.add((went_up ? sq : -sq) * dot_span(sol.Y.at(n, v)));
        }
        worst = std::max(worst, std::abs(acc.value()));
    });
    return worst;
}

inline double linear_weak_residual(const ScenarioTree& tree, const Discretization& disc,
                                   const BSPDESolution& sol, const CoefficientSet& coeffs,
                                   const ProblemData& data, const SpatialVector& testvec,
                                   int t_idx) {
    const int M = disc.interior_points;
    return telescoped_weak_residual(
        tree, disc, sol, testvec, t_idx, [&](int n, std::int64_t v) {
            const auto y = sol.y.at(n, v);
            const auto Y = sol.Y.at(n, v);
            const auto al = coeffs.alpha.at(n, v);
            const auto be = coeffs.beta.at(n, v);
            const auto src = data.source.at(n, v);
            SpatialVector d(static_cast<std::size_t>(M));
            for (int j = 0; j < M; ++j) {
                const auto ju = static_cast<std::size_t>(j);
                d[ju] = al[ju] * y[ju] + be[ju] * Y[ju] + src[ju];
            }
            return d;
        });
}

}  // namespace bsheat
