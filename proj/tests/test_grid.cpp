#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "bsheat/grid.hpp"

using namespace bsheat;

namespace {

SpatialVector random_vec(const Discretization& d, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    SpatialVector v(static_cast<std::size_t>(d.interior_points));
    for (auto& x : v) x = u(rng);
    return v;
}

}  // namespace

TEST_CASE("discrete Laplacian") {
    SECTION("zero in, zero out") {
        const auto d = make_discretization(8);
        const auto out = apply_laplacian(d, SpatialVector(8, 0.0));
        for (double v : out) REQUIRE(v == 0.0);
    }
    SECTION("discrete sine mode is an exact eigenvector") {
        const auto d = make_discretization(16);
        const auto v = d.sine_mode(1);
        const auto lv = apply_laplacian(d, v);
        const double lambda = d.dirichlet_eigenvalue(1);
        for (int j = 0; j < 16; ++j)
            REQUIRE(lv[static_cast<std::size_t>(j)] ==
                    Catch::Approx(-lambda * v[static_cast<std::size_t>(j)]).margin(1e-12));
    }
    SECTION("hand stencil, M = 3") {
        const auto d = make_discretization(3);
        REQUIRE(d.h == 0.25);
        const auto out = apply_laplacian(d, SpatialVector{1.0, 0.0, 0.0});
        REQUIRE(out[0] == -32.0);
        REQUIRE(out[1] == 16.0);
        REQUIRE(out[2] == 0.0);
    }
    SECTION("length mismatch is a usage error") {
        const auto d = make_discretization(4);
        REQUIRE_THROWS_AS(apply_laplacian(d, SpatialVector(3, 1.0)), usage_error);
    }
    SECTION("linear, symmetric, and summation by parts") {
        std::mt19937_64 rng(3);
        const auto d = make_discretization(12);
        const auto u = random_vec(d, rng);
        const auto v = random_vec(d, rng);
        const auto lu = apply_laplacian(d, u);
        const auto lv = apply_laplacian(d, v);
        REQUIRE(inner_product(d, lu, v) ==
                Catch::Approx(inner_product(d, u, lv)).margin(1e-12));
        REQUIRE(-inner_product(d, lu, u) ==
                Catch::Approx(h1_seminorm_sq(d, u)).epsilon(1e-13));
    }
}

TEST_CASE("grid norms") {
    SECTION("zero vector") {
        const auto d = make_discretization(5);
        REQUIRE(lp_norm(SpatialVector(5, 0.0), 3.0, d) == 0.0);
        REQUIRE(h1_seminorm(d, SpatialVector(5, 0.0)) == 0.0);
    }
    SECTION("constant function, p = 2") {
        const auto d = make_discretization(9);
        REQUIRE(lp_norm(SpatialVector(9, 1.0), 2.0, d) ==
                Catch::Approx(std::sqrt(9 * d.h)).epsilon(1e-14));
    }
    SECTION("sup norm of the coordinate function, M = 4") {
        const auto d = make_discretization(4);
        SpatialVector v(4);
        for (int j = 0; j < 4; ++j) v[static_cast<std::size_t>(j)] = d.x(j);
        REQUIRE(lp_norm(v, INFINITY, d) == Catch::Approx(0.8).margin(1e-15));
    }
    SECTION("p below one is rejected") {
        const auto d = make_discretization(4);
        REQUIRE_THROWS_AS(lp_norm(SpatialVector(4, 1.0), 0.5, d), usage_error);
    }
    SECTION("sine-mode seminorm identity") {
        const auto d = make_discretization(20);
        const auto v = d.sine_mode(1);
        const double lambda = d.dirichlet_eigenvalue(1);
        REQUIRE(h1_seminorm(d, v) ==
                Catch::Approx(std::sqrt(lambda) * lp_norm(v, 2.0, d)).margin(1e-10));
    }
    SECTION("interior spike") {
        const auto d = make_discretization(3);
        REQUIRE(h1_seminorm(d, SpatialVector{0.0, 1.0, 0.0}) ==
                Catch::Approx(std::sqrt(2.0 / d.h)).epsilon(1e-14));
    }
    SECTION("normalized p-norms increase towards the sup norm") {
        std::mt19937_64 rng(7);
        const auto d = make_discretization(15);
        const auto v = random_vec(d, rng);
        const double measure = 15 * d.h;
        double prev = 0.0;
        for (double p : {1.0, 2.0, 4.0, 8.0, 16.0, 64.0, 256.0}) {
            const double norm = lp_norm(v, p, d) / std::pow(measure, 1.0 / p);
            REQUIRE(norm >= prev - 1e-12);
            prev = norm;
        }
        REQUIRE(prev == Catch::Approx(lp_norm(v, INFINITY, d)).epsilon(0.05));
    }
}

TEST_CASE("control mask") {
    SECTION("default interval (0.3, 0.6) on M = 16") {
        const auto d = make_discretization(16);
        std::int64_t count = 0;
        for (int j = 0; j < 16; ++j)
            if (d.control_mask[static_cast<std::size_t>(j)]) {
                ++count;
                REQUIRE(d.x(j) > 0.3);
                REQUIRE(d.x(j) < 0.6);
            }
        REQUIRE(count == d.mask_size());
        REQUIRE(count == 5);
    }
    SECTION("mask nonempty whenever b - a > h") {
        for (int m : {2, 5, 9, 33}) {
            const double h = 1.0 / (m + 1);
            const auto d = make_discretization(m, 1.0, 0.3, 0.3 + 2.0 * h);
            REQUIRE(d.mask_size() >= 1);
        }
    }
    SECTION("bad interval is a usage error") {
        REQUIRE_THROWS_AS(make_discretization(4, 1.0, 0.7, 0.4), usage_error);
        REQUIRE_THROWS_AS(make_discretization(4, 1.0, -0.1, 0.4), usage_error);
    }
}

TEST_CASE("step system solve") {
    std::mt19937_64 rng(11);
    const auto d = make_discretization(24);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int rep = 0; rep < 10; ++rep) {
        SpatialVector c(24), rhs(24);
        for (auto& x : c) x = u(rng);
        for (auto& x : rhs) x = u(rng);
        const double dt = 0.05;
        const auto x = solve_step_system(d, dt, c, rhs);
        REQUIRE(step_system_residual(d, dt, c, x, rhs) <= 1e-12);
    }
}
