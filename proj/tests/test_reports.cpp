#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "bsheat/reports.hpp"
#include "support/oracles.hpp"

using namespace bsheat;

namespace {

constexpr double kPi = std::numbers::pi;

struct RandomProblem {
    CoefficientSet coeffs;
    ProblemData data;
};

RandomProblem random_problem(const ScenarioTree& tree, const Discretization& disc,
                             double coeff_amp, double data_amp, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uc(-coeff_amp, coeff_amp);
    std::uniform_real_distribution<double> ud(-data_amp, data_amp);
    RandomProblem rp;
    rp.coeffs.alpha = AdaptedField::zeros(tree, disc, tree.levels);
    rp.coeffs.beta = AdaptedField::zeros(tree, disc, tree.levels);
    rp.data.source = AdaptedField::zeros(tree, disc, tree.levels);
    rp.data.terminal = LevelField::zeros(tree, disc, tree.levels);
    for (auto& lv : rp.coeffs.alpha.levels)
        for (auto& v : lv) v = uc(rng);
    for (auto& lv : rp.coeffs.beta.levels)
        for (auto& v : lv) v = uc(rng);
    for (auto& lv : rp.data.source.levels)
        for (auto& v : lv) v = ud(rng);
    for (auto& v : rp.data.terminal.data) v = ud(rng);
    return rp;
}

void scale_data(ProblemData& data, double s) {
    for (auto& lv : data.source.levels)
        for (auto& v : lv) v *= s;
    for (auto& v : data.terminal.data) v *= s;
}

}  // namespace

TEST_CASE("reports on zero data") {
    const auto tree = build_tree(5, 1.0, false);
    const auto disc = make_discretization(7);
    const auto coeffs = zero_coefficients(tree, disc);
    const auto data = zero_data(tree, disc);
    const auto sol = solve_linear(tree, disc, coeffs, data);
    for (const auto& rep :
         {energy_report(tree, disc, sol, data, coeffs),
          lp_report(tree, disc, sol, data, coeffs, 4.0),
          linf_report(tree, disc, sol, data, coeffs)}) {
        REQUIRE(rep.lhs == 0.0);
        REQUIRE(rep.rhs == 0.0);
        REQUIRE(rep.implied_constant == 0.0);
        REQUIRE(rep.passed);
    }
}

TEST_CASE("homogeneity: implied constants are scale invariant") {
    std::mt19937_64 rng(404);
    const auto tree = build_tree(7, 1.0, false);
    const auto disc = make_discretization(12);
    const auto rp = random_problem(tree, disc, 1.0, 1.0, rng);
    const auto sol = solve_linear(tree, disc, rp.coeffs, rp.data);
    const auto base_energy = energy_report(tree, disc, sol, rp.data, rp.coeffs);
    const auto base_lp = lp_report(tree, disc, sol, rp.data, rp.coeffs, 4.0);
    const auto base_linf = linf_report(tree, disc, sol, rp.data, rp.coeffs);
    for (double lambda : {0.1, 10.0}) {
        ProblemData scaled = rp.data;
        scale_data(scaled, lambda);
        const auto sol2 = solve_linear(tree, disc, rp.coeffs, scaled);
        const auto e2 = energy_report(tree, disc, sol2, scaled, rp.coeffs);
        const auto l2 = lp_report(tree, disc, sol2, scaled, rp.coeffs, 4.0);
        const auto i2 = linf_report(tree, disc, sol2, scaled, rp.coeffs);
        REQUIRE(e2.implied_constant ==
                Catch::Approx(base_energy.implied_constant).epsilon(1e-9));
        REQUIRE(l2.implied_constant ==
                Catch::Approx(base_lp.implied_constant).epsilon(1e-9));
        REQUIRE(i2.implied_constant ==
                Catch::Approx(base_linf.implied_constant).epsilon(1e-9));
    }
}

TEST_CASE("p = 2 L^p report coincides with the energy report") {
    std::mt19937_64 rng(808);
    const auto tree = build_tree(8, 1.0, false);
    const auto disc = make_discretization(10);
    const auto rp = random_problem(tree, disc, 0.9, 1.0, rng);
    const auto sol = solve_linear(tree, disc, rp.coeffs, rp.data);
    const auto energy = energy_report(tree, disc, sol, rp.data, rp.coeffs);
    const auto lp = lp_report(tree, disc, sol, rp.data, rp.coeffs, 2.0);
    REQUIRE(lp.term("sup_y_lp") ==
            Catch::Approx(energy.term("sup_y_l2_sq")).epsilon(1e-10));
    REQUIRE(lp.term("y_quad_pow") ==
            Catch::Approx(energy.term("y_process")).epsilon(1e-10));
    REQUIRE(lp.term("gradient_weighted") ==
            Catch::Approx(energy.term("gradient")).epsilon(1e-10));
    REQUIRE(lp.term("cross_weighted") ==
            Catch::Approx(energy.term("y_process")).epsilon(1e-10));
    REQUIRE(lp.rhs == Catch::Approx(energy.rhs).epsilon(1e-10));
    REQUIRE(lp.lhs == Catch::Approx(energy.lhs - energy.term("gradient")).epsilon(1e-10));
}

TEST_CASE("uniform bound with the explicit exponential rate") {
    SECTION("deterministic heat obeys the discrete maximum principle") {
        const auto tree = build_tree(8, 1.0, false);
        const auto disc = make_discretization(16);
        const auto coeffs = zero_coefficients(tree, disc);
        ProblemData data = zero_data(tree, disc);
        data.terminal = fill_level(tree, disc, tree.levels,
                                   [](double, double x, double) { return std::sin(kPi * x); });
        const auto sol = solve_linear(tree, disc, coeffs, data);
        REQUIRE(sol.y.sup_abs() <= sup_abs(data.terminal) + 1e-15);
        const auto rep = linf_report(tree, disc, sol, data, coeffs);
        REQUIRE(rep.passed);
        REQUIRE(rep.term("rate_K") == 0.0);
    }
    SECTION("random coefficient battery at unit amplitudes") {
        std::mt19937_64 rng(11);
        const auto tree = build_tree(10, 1.0, false);
        const auto disc = make_discretization(16);
        for (int seed = 0; seed < 5; ++seed) {
            auto rp = random_problem(tree, disc, 1.0, 1.0, rng);
            const auto sol = solve_linear(tree, disc, rp.coeffs, rp.data);
            const auto rep = linf_report(tree, disc, sol, rp.data, rp.coeffs);
            REQUIRE(rep.passed);
            REQUIRE(rep.term("rate_K") <= 2.0);
            REQUIRE(rep.lhs <= std::exp(2.0 + 1.0) * rep.rhs);
        }
    }
}

TEST_CASE("battery constants stay within the recorded margins") {
    std::mt19937_64 rng(2211);
    const auto tree = build_tree(8, 1.0, false);
    const auto disc = make_discretization(16);
    for (int seed = 0; seed < 5; ++seed) {
        const auto rp = random_problem(tree, disc, 1.0, 1.0, rng);
        const auto sol = solve_linear(tree, disc, rp.coeffs, rp.data);
        const auto e = energy_report(tree, disc, sol, rp.data, rp.coeffs);
        REQUIRE(e.passed);
        for (double p : {2.0, 4.0, 8.0}) {
            const auto l = lp_report(tree, disc, sol, rp.data, rp.coeffs, p);
            REQUIRE(l.passed);
        }
    }
}

TEST_CASE("report bookkeeping") {
    EstimateReport rep;
    rep.lhs = 1.0;
    rep.rhs = 0.0;
    rep.finish(1.5);
    REQUIRE_FALSE(rep.passed);
    REQUIRE(std::isinf(rep.implied_constant));
    REQUIRE_THROWS_AS(rep.term("nope"), usage_error);
}

TEST_CASE("lp report rejects p below 2") {
    const auto tree = build_tree(3, 1.0, true);
    const auto disc = make_discretization(4);
    const auto sol = solve_linear(tree, disc, zero_coefficients(tree, disc),
                                  zero_data(tree, disc));
    REQUIRE_THROWS_AS(lp_report(tree, disc, sol, zero_data(tree, disc),
                                zero_coefficients(tree, disc), 1.5),
                      usage_error);
}
