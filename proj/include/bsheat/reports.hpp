#pragma once

// Verification reports for the a priori estimates: energy (p = 2), L^p with
// the (p/2)-power Y moment, and the uniform L^inf bound with its explicit
// exponential rate. Each report carries both sides of the inequality, the
// implied constant, and a pass/fail verdict against a margin.
//
// sup_t means the max over time levels; expectations of path functionals
// (running sup, (int ||Y||^2)^{p/2}) are exact path sums, so reports require
// path enumeration and are capped in tree depth.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "solver.hpp"

namespace bsheat {

struct EstimateReport {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    double implied_constant = 0.0;  // lhs / rhs, 0 when both vanish
    double margin = 1.0;
    bool passed = true;
    std::vector<std::pair<std::string, double>> terms;

    double term(const std::string& key) const {
        for (const auto& [k, v] : terms)
            if (k == key) return v;
        throw usage_error("EstimateReport: unknown term " + key);
    }

    void finish(double margin_) {
        margin = margin_;
        if (rhs == 0.0) {
            implied_constant = (lhs == 0.0) ? 0.0 : INFINITY;
            passed = (lhs == 0.0);
        } else {
            implied_constant = lhs / rhs;
            passed = lhs <= margin * rhs;
        }
    }
};

// Regression margins for the random-data battery (20 seeds, N = 8 full tree,
// M = 16, unit amplitudes): empirical maxima 0.7904 (energy) and 0.7766
// (L^p over p in {2,4,8}) times 1.5, frozen as the committed baseline; see
// tests/acceptance_main.cpp.
inline constexpr double kEnergyReportMargin = 1.19;
inline constexpr double kLpReportMargin = 1.17;

namespace detail {

struct PathMoments {
    double sup_p = 0.0;       // E[ sup_n ||y_n||_p^p ]
    double y_quad_pow = 0.0;  // E[ (sum_n dt ||Y_n||_2^2)^{p/2} ]
};

inline PathMoments path_moments(const ScenarioTree& tree, const Discretization& disc,
                                const BSPDESolution& sol, double p) {
    // ||y_n||_p^p and ||Y_n||_2^2 per (level, node), then exact path sums.
    const int N = tree.levels;
    std::vector<std::vector<double>> ynorm(static_cast<std::size_t>(N) + 1);
    std::vector<std::vector<double>> ysq(static_cast<std::size_t>(N));
    for (int n = 0; n <= N; ++n) {
        const std::int64_t cnt = tree.node_count(n);
        ynorm[static_cast<std::size_t>(n)].resize(static_cast<std::size_t>(cnt));
        for (std::int64_t v = 0; v < cnt; ++v) {
            const auto y = sol.y.at(n, v);
            NeumaierSum s;
            for (double val : y) s.add(std::pow(std::abs(val), p));
            ynorm[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)] =
                disc.h * s.value();
        }
        if (n == N) continue;
        ysq[static_cast<std::size_t>(n)].resize(static_cast<std::size_t>(cnt));
        for (std::int64_t v = 0; v < cnt; ++v) {
            const auto Y = sol.Y.at(n, v);
            NeumaierSum s;
            for (double val : Y) s.add(val * val);
            ysq[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)] =
                disc.h * s.value();
        }
    }
    PathMoments out;
    NeumaierSum sup_acc, pow_acc;
    for_each_path(tree, [&](const std::vector<std::int64_t>& nodes, double prob) {
        double sup = 0.0;
        NeumaierSum quad;
        for (int n = 0; n <= N; ++n) {
            sup = std::max(sup, ynorm[static_cast<std::size_t>(n)]
                                     [static_cast<std::size_t>(nodes[static_cast<std::size_t>(n)])]);
            if (n < N)
                quad.add(tree.dt *
                         ysq[static_cast<std::size_t>(n)]
                            [static_cast<std::size_t>(nodes[static_cast<std::size_t>(n)])]);
        }
        sup_acc.add(prob * sup);
        pow_acc.add(prob * std::pow(quad.value(), p / 2.0));
    });
    out.sup_p = sup_acc.value();
    out.y_quad_pow = pow_acc.value();
    return out;
}

// E[ sum_n dt * g(level, node) ] for a per-node density.
template <class G>
double expected_time_integral(const ScenarioTree& tree, G&& g) {
    NeumaierSum acc;
    for (int n = 0; n < tree.levels; ++n)
        for (std::int64_t v = 0; v < tree.node_count(n); ++v)
            acc.add(tree.dt * tree.probability(n, v) * g(n, v));
    return acc.value();
}

}  // namespace detail

// Energy estimate check:
//   E[sup ||y||_2^2] + E int ||grad y||^2 + E int ||Y||^2
//     <= margin * ( E||y_T||_2^2 + E int ||F||_2^2 ).
inline EstimateReport energy_report(const ScenarioTree& tree, const Discretization& disc,
                                    const BSPDESolution& sol, const ProblemData& data,
                                    const CoefficientSet& /*coeffs*/,
                                    double margin = kEnergyReportMargin) {
    EstimateReport rep;
    rep.name = "energy";
    const auto pm = detail::path_moments(tree, disc, sol, 2.0);
    const double grad = detail::expected_time_integral(tree, [&](int n, std::int64_t v) {
        return h1_seminorm_sq(disc, SpatialVector(sol.y.at(n, v).begin(),
                                                  sol.y.at(n, v).end()));
    });
    const double yterm = detail::expected_time_integral(tree, [&](int n, std::int64_t v) {
        const auto Y = sol.Y.at(n, v);
        NeumaierSum s;
        for (double val : Y) s.add(val * val);
        return disc.h * s.value();
    });
    const double rhs_source = detail::expected_time_integral(tree, [&](int n, std::int64_t v) {
        const auto F = data.source.at(n, v);
        NeumaierSum s;
        for (double val : F) s.add(val * val);
        return disc.h * s.value();
    });
    NeumaierSum term_acc;
    for (std::int64_t v = 0; v < tree.node_count(tree.levels); ++v) {
        const auto yT = data.terminal.at(v);
        NeumaierSum s;
        for (double val : yT) s.add(val * val);
        term_acc.add(tree.probability(tree.levels, v) * disc.h * s.value());
    }
    rep.terms = {{"sup_y_l2_sq", pm.sup_p},
                 {"gradient", grad},
                 {"y_process", yterm},
                 {"rhs_terminal", term_acc.value()},
                 {"rhs_source", rhs_source}};
    rep.lhs = pm.sup_p + grad + yterm;
    rep.rhs = term_acc.value() + rhs_source;
    rep.finish(margin);
    return rep;
}

// L^p estimate check with the (p/2)-power moment of the Y process:
//   E[sup ||y||_p^p] + E[(int ||Y||_2^2)^{p/2}]
//     <= margin * ( E||y_T||_p^p + E int ||F||_p^p ),
// with the weighted gradient and cross terms of the L^p Ito estimate
// reported alongside.
inline EstimateReport lp_report(const ScenarioTree& tree, const Discretization& disc,
                                const BSPDESolution& sol, const ProblemData& data,
                                const CoefficientSet& /*coeffs*/, double p,
                                double margin = kLpReportMargin) {
    require(p >= 2.0, "lp_report: p must be >= 2");
    EstimateReport rep;
    rep.name = "lp";
    const auto pm = detail::path_moments(tree, disc, sol, p);
    const double grad = detail::expected_time_integral(tree, [&](int n, std::int64_t v) {
        // int |y|^{p-2} |grad y|^2 with edge-averaged weights, d2/(p(p-1))
        const auto fam = power_scalar_family(p);
        return detail::edge_weighted_gradient(disc, sol.y.at(n, v), fam) /
               (p * (p - 1.0));
    });
    const double cross = detail::expected_time_integral(tree, [&](int n, std::int64_t v) {
        const auto y = sol.y.at(n, v);
        const auto Y = sol.Y.at(n, v);
        NeumaierSum s;
        for (std::size_t j = 0; j < y.size(); ++j)
            s.add(std::pow(std::abs(y[j]), p - 2.0) * Y[j] * Y[j]);
        return disc.h * s.value();
    });
    const double rhs_source = detail::expected_time_integral(tree, [&](int n, std::int64_t v) {
        const auto F = data.source.at(n, v);
        NeumaierSum s;
        for (double val : F) s.add(std::pow(std::abs(val), p));
        return disc.h * s.value();
    });
    NeumaierSum term_acc;
    for (std::int64_t v = 0; v < tree.node_count(tree.levels); ++v) {
        const auto yT = data.terminal.at(v);
        NeumaierSum s;
        for (double val : yT) s.add(std::pow(std::abs(val), p));
        term_acc.add(tree.probability(tree.levels, v) * disc.h * s.value());
    }
    rep.terms = {{"sup_y_lp", pm.sup_p},
                 {"y_quad_pow", pm.y_quad_pow},
                 {"gradient_weighted", grad},
                 {"cross_weighted", cross},
                 {"rhs_terminal", term_acc.value()},
                 {"rhs_source", rhs_source}};
    rep.lhs = pm.sup_p + pm.y_quad_pow;
    rep.rhs = term_acc.value() + rhs_source;
    rep.finish(margin);
    return rep;
}

// Uniform bound with the explicit exponential rate:
//   max |y|  <=  e^{(K+1) T} ( ||y_T||_inf + ||F||_inf ),   K = ||a|| + ||b||^2.
// The discrete scheme obeys this outright (convex one-step averaging plus an
// M-matrix solve), so the default margin is 1 + 1e-9.
inline EstimateReport linf_report(const ScenarioTree& tree, const Discretization& /*disc*/,
                                  const BSPDESolution& sol, const ProblemData& data,
                                  const CoefficientSet& coeffs,
                                  double margin = 1.0 + 1e-9) {
    EstimateReport rep;
    rep.name = "linf";
    const double K = coeffs.rate();
    const double yT_inf = sup_abs(data.terminal);
    const double F_inf = data.source.sup_abs();
    rep.terms = {{"max_abs_y", sol.y.sup_abs()},
                 {"rate_K", K},
                 {"terminal_inf", yT_inf},
                 {"source_inf", F_inf}};
    rep.lhs = sol.y.sup_abs();
    rep.rhs = std::exp((K + 1.0) * tree.horizon) * (yT_inf + F_inf);
    rep.finish(margin);
    return rep;
}

}  // namespace bsheat
