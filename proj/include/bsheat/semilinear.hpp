#pragma once

// Picard fixed point for the semilinear equation
//   dy = -(Lap y + alpha y + beta Y + f(y)) dt + Y dW,  y(T) = y_T,
// by successive linearization: each sweep solves the linear equation
// with drift alpha + f'(0) and frozen source ybar^2 G(ybar), where G is the
// second-order Taylor remainder of f. At a fixed point the Taylor identity
// f(s) = f'(0) s + s^2 G(s) turns the linearized source back into f(y), up
// to G's quadrature error.

#include <cmath>
#include <string>
#include <vector>

#include "reports.hpp"

namespace bsheat {

struct PicardOptions {
    double tol = 1e-8;       // stop when the sup-norm difference falls below
    int max_iterations = 50;
    int quad_panels = 64;    // panels for the G quadrature
    int jobs = 1;
    double blowup_sup = 1e6;  // divergence declared above this sup norm
};

struct PicardStep {
    int k = 0;
    double diff_sup = 0.0;      // ||y_k - y_{k-1}||_inf over all nodes
    double diff_yp = 0.0;       // Y_p-style norm of the difference pair
    double ratio = 0.0;         // diff_sup(k) / diff_sup(k-1)
    double sup_norm = 0.0;      // ||y_k||_inf
    double yp_norm = 0.0;       // discrete Y_p norm of (y_k, Y_k)
};

struct PicardResult {
    BSPDESolution solution;
    std::vector<PicardStep> history;
    bool converged = false;
    bool diverged = false;
    int iterations = 0;
};

namespace detail {

// Discrete Y_p norm: sqrt(E sup_t ||y||_2^2) + sqrt(E int ||grad y||^2)
// + ||y||_inf + (E[(int ||Y||^2)^{p/2}])^{1/p}.
inline double yp_norm(const ScenarioTree& tree, const Discretization& disc,
                      const BSPDESolution& sol, double p) {
    const auto pm = detail::path_moments(tree, disc, sol, 2.0);
    const double grad = detail::expected_time_integral(tree, [&](int n, std::int64_t v) {
        return h1_seminorm_sq(disc,
                              SpatialVector(sol.y.at(n, v).begin(), sol.y.at(n, v).end()));
    });
    NeumaierSum ypow;
    for_each_path(tree, [&](const std::vector<std::int64_t>& nodes, double prob) {
        NeumaierSum quad;
        for (int n = 0; n < tree.levels; ++n) {
            const auto Y = sol.Y.at(n, nodes[static_cast<std::size_t>(n)]);
            NeumaierSum s;
            for (double val : Y) s.add(val * val);
            quad.add(tree.dt * disc.h * s.value());
        }
        ypow.add(prob * std::pow(quad.value(), p / 2.0));
    });
    return std::sqrt(pm.sup_p) + std::sqrt(grad) + sol.y.sup_abs() +
           std::pow(ypow.value(), 1.0 / p);
}

}  // namespace detail

// initial_ybar seeds the frozen source of the first sweep (zero by default,
// which lies in every ball since f(0) = 0).
inline PicardResult picard_solve(const ScenarioTree& tree, const Discretization& disc,
                                 const CoefficientSet& coeffs,
                                 const NonlinearitySpec& f, const LevelField& terminal,
                                 double p = 2.0, const PicardOptions& opts = {},
                                 const AdaptedField* initial_ybar = nullptr) {
    require(p >= 2.0, "picard_solve: p must be >= 2");
    require(terminal.level == tree.levels, "picard_solve: terminal slice at level N");
    if (std::abs(f.f(0.0)) > 1e-12)
        throw data_error("picard_solve: f(0) must vanish");

    const int N = tree.levels;
    const int M = disc.interior_points;
    const double fp0 = f.d1(0.0);

    CoefficientSet shifted = coeffs;
    for (int n = 0; n < N; ++n)
        for (std::int64_t v = 0; v < tree.node_count(n); ++v) {
            auto row = shifted.alpha.at(n, v);
            for (int j = 0; j < M; ++j) row[static_cast<std::size_t>(j)] += fp0;
        }

    SolveOptions solve_opts;
    solve_opts.jobs = opts.jobs;

    PicardResult res;
    AdaptedField prev_y;  // empty on the first sweep
    AdaptedField source = AdaptedField::zeros(tree, disc, N);
    if (initial_ybar) {
        require(initial_ybar->stored_levels() >= N,
                "picard_solve: initial guess must cover levels 0..N-1");
        for (int n = 0; n < N; ++n)
            for (std::int64_t v = 0; v < tree.node_count(n); ++v) {
                const auto y = initial_ybar->at(n, v);
                auto src = source.at(n, v);
                for (int j = 0; j < M; ++j) {
                    const double s = y[static_cast<std::size_t>(j)];
                    src[static_cast<std::size_t>(j)] =
                        s * s * nonlinearity_G(f, s, opts.quad_panels);
                }
            }
    }
    double prev_diff = 0.0;
    for (int k = 1; k <= opts.max_iterations; ++k) {
        ProblemData data{terminal, source};
        BSPDESolution sol = solve_linear(tree, disc, shifted, data, solve_opts);

        PicardStep step;
        step.k = k;
        step.sup_norm = sol.y.sup_abs();
        step.yp_norm = detail::yp_norm(tree, disc, sol, p);
        if (prev_y.stored_levels() > 0) {
            BSPDESolution diff = sol;
            for (int n = 0; n <= N; ++n)
                for (std::size_t i = 0; i < diff.y.levels[static_cast<std::size_t>(n)].size(); ++i)
                    diff.y.levels[static_cast<std::size_t>(n)][i] -=
                        prev_y.levels[static_cast<std::size_t>(n)][i];
            step.diff_sup = diff.y.sup_abs();
            // report the full norm of the difference pair as well
            BSPDESolution dpair = diff;
            dpair.Y = res.solution.Y;  // previous Y
            for (int n = 0; n < N; ++n)
                for (std::size_t i = 0; i < dpair.Y.levels[static_cast<std::size_t>(n)].size(); ++i)
                    dpair.Y.levels[static_cast<std::size_t>(n)][i] =
                        sol.Y.levels[static_cast<std::size_t>(n)][i] -
                        res.solution.Y.levels[static_cast<std::size_t>(n)][i];
            step.diff_yp = detail::yp_norm(tree, disc, dpair, p);
            step.ratio = (prev_diff > 0.0) ? step.diff_sup / prev_diff : 0.0;
            prev_diff = step.diff_sup;
        }
        res.history.push_back(step);
        res.iterations = k;

        const bool have_diff = prev_y.stored_levels() > 0;
        prev_y = sol.y;
        res.solution = std::move(sol);

        if (!res.solution.y.finite() || step.sup_norm > opts.blowup_sup) {
            res.diverged = true;
            break;
        }
        if (have_diff && step.diff_sup <= opts.tol) {
            res.converged = true;
            break;
        }
        if (have_diff && step.ratio > 10.0 && res.history.size() >= 4) {
            const std::size_t m = res.history.size();
            if (res.history[m - 2].ratio > 10.0 && res.history[m - 3].ratio > 10.0) {
                res.diverged = true;
                break;
            }
        }

        // refresh the frozen source ybar^2 G(ybar) from the new iterate
        for (int n = 0; n < N; ++n)
            for (std::int64_t v = 0; v < tree.node_count(n); ++v) {
                const auto y = res.solution.y.at(n, v);
                auto src = source.at(n, v);
                for (int j = 0; j < M; ++j) {
                    const double s = y[static_cast<std::size_t>(j)];
                    src[static_cast<std::size_t>(j)] =
                        s * s * nonlinearity_G(f, s, opts.quad_panels);
                }
            }
    }
    return res;
}

// Telescoped weak-form residual of the semilinear equation with the true
// f(y) in the drift, max over paths and supplied test vectors.
inline double verify_semilinear(const ScenarioTree& tree, const Discretization& disc,
                                const BSPDESolution& sol, const NonlinearitySpec& f,
                                const CoefficientSet& coeffs, const LevelField& terminal,
                                const std::vector<SpatialVector>& test_vectors,
                                int t_idx = 0) {
    require(terminal.level == tree.levels, "verify_semilinear: terminal at level N");
    const int M = disc.interior_points;
    double worst = 0.0;
    for (const auto& tv : test_vectors) {
        const double r = telescoped_weak_residual(
            tree, disc, sol, tv, t_idx, [&](int n, std::int64_t v) {
                const auto y = sol.y.at(n, v);
                const auto Y = sol.Y.at(n, v);
                const auto al = coeffs.alpha.at(n, v);
                const auto be = coeffs.beta.at(n, v);
                SpatialVector d(static_cast<std::size_t>(M));
                for (int j = 0; j < M; ++j) {
                    const auto ju = static_cast<std::size_t>(j);
                    d[ju] = al[ju] * y[ju] + be[ju] * Y[ju] + f.f(y[ju]);
                }
                return d;
            });
        worst = std::max(worst, r);
    }
    return worst;
}

struct ProbeRecord {
    double amplitude = 0.0;
    bool converged = false;
    bool diverged = false;
    double worst_ratio = 0.0;  // max contraction ratio over the run
    double final_diff = 0.0;
    int iterations = 0;
};

struct SmallnessProbe {
    std::vector<ProbeRecord> records;
    double largest_contracting = 0.0;   // largest amplitude that converged
    double smallest_diverging = 0.0;    // 0 when no failure in the ladder
    bool no_failure_in_ladder = true;
};

// Runs the Picard iteration along an increasing amplitude ladder applied to
// a fixed terminal direction, bracketing the empirical smallness threshold.
inline SmallnessProbe smallness_probe(const ScenarioTree& tree, const Discretization& disc,
                                      const CoefficientSet& coeffs,
                                      const NonlinearitySpec& f,
                                      const LevelField& terminal_direction,
                                      const std::vector<double>& amplitudes,
                                      double p = 2.0, const PicardOptions& opts = {}) {
    require(!amplitudes.empty(), "smallness_probe: empty ladder");
    for (std::size_t i = 1; i < amplitudes.size(); ++i)
        require(amplitudes[i] > amplitudes[i - 1],
                "smallness_probe: amplitudes must increase");
    SmallnessProbe probe;
    for (double a : amplitudes) {
        LevelField terminal = terminal_direction;
        for (auto& v : terminal.data) v *= a;
        const auto run = picard_solve(tree, disc, coeffs, f, terminal, p, opts);
        ProbeRecord rec;
        rec.amplitude = a;
        rec.converged = run.converged;
        rec.diverged = run.diverged;
        rec.iterations = run.iterations;
        for (const auto& step : run.history) {
            if (step.k >= 3) rec.worst_ratio = std::max(rec.worst_ratio, step.ratio);
            rec.final_diff = step.diff_sup;
        }
        probe.records.push_back(rec);
        if (rec.converged) probe.largest_contracting = a;
        if (!rec.converged && probe.no_failure_in_ladder) {
            probe.no_failure_in_ladder = false;
            probe.smallest_diverging = a;
        }
    }
    return probe;
}

}  // namespace bsheat
