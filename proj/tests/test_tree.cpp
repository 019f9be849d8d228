#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "bsheat/tree.hpp"

using namespace bsheat;

namespace {

AdaptedRV random_rv(const ScenarioTree& tree, int level, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    AdaptedRV x = AdaptedRV::zeros(tree, level);
    for (auto& v : x.values) v = u(rng);
    return x;
}

}  // namespace

TEST_CASE("build_tree basics") {
    SECTION("single coin flip") {
        const auto t = build_tree(1, 1.0, true);
        REQUIRE(t.node_count(1) == 2);
        REQUIRE(t.probability(1, 0) == 0.5);
        REQUIRE(t.probability(1, 1) == 0.5);
        REQUIRE(t.brownian_value(1, 0) == -1.0);
        REQUIRE(t.brownian_value(1, 1) == 1.0);
        REQUIRE(t.brownian_value(0, 0) == 0.0);
    }
    SECTION("binomial weights at level 2") {
        const auto t = build_tree(2, 1.0, true);
        REQUIRE(t.probability(2, 0) == 0.25);
        REQUIRE(t.probability(2, 1) == 0.5);
        REQUIRE(t.probability(2, 2) == 0.25);
    }
    SECTION("full tree leaves enumerate sign sequences") {
        const auto t = build_tree(3, 0.75, false);
        REQUIRE(t.node_count(3) == 8);
        REQUIRE(std::sqrt(t.dt) == 0.5);
        double psum = 0.0;
        for (std::int64_t v = 0; v < 8; ++v) {
            REQUIRE(t.probability(3, v) == 0.125);
            const double w = t.brownian_value(3, v);
            // 0.5 * (±1 ± 1 ± 1) lands on {±1.5, ±0.5}
            REQUIRE((std::abs(w) == 1.5 || std::abs(w) == 0.5));
            psum += t.probability(3, v);
        }
        REQUIRE(psum == 1.0);
        REQUIRE(t.brownian_value(3, 0) == 1.5);   // all up
        REQUIRE(t.brownian_value(3, 7) == -1.5);  // all down
    }
    SECTION("probabilities sum to one at every level") {
        for (bool rec : {true, false}) {
            const auto t = build_tree(9, 2.0, rec);
            for (int l = 0; l <= 9; ++l) {
                NeumaierSum s;
                for (std::int64_t v = 0; v < t.node_count(l); ++v) s.add(t.probability(l, v));
                REQUIRE(s.value() == Catch::Approx(1.0).epsilon(1e-15));
            }
        }
    }
    SECTION("full-tree cap produces a resource error naming the cap") {
        REQUIRE_THROWS_MATCHES(build_tree(17, 1.0, false), config_error,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("cap is 16")));
        REQUIRE_NOTHROW(build_tree(17, 1.0, false, 18));
        REQUIRE_THROWS_AS(build_tree(0, 1.0, true), usage_error);
        REQUIRE_THROWS_AS(build_tree(4, -1.0, true), usage_error);
    }
}

TEST_CASE("conditional expectation") {
    SECTION("martingale property of W") {
        for (bool rec : {true, false}) {
            const auto t = build_tree(8, 2.0, rec);
            const auto w = brownian_rv(t, 8);
            REQUIRE(expectation(w, t) == 0.0);
        }
    }
    SECTION("identity on constants") {
        const auto t = build_tree(6, 1.0, true);
        AdaptedRV c = AdaptedRV::zeros(t, 5);
        for (auto& v : c.values) v = 3.25;
        const auto down = condexp(c, 2, t);
        for (double v : down.values) REQUIRE(v == 3.25);
    }
    SECTION("averages children on the full tree in (++,+-,-+,--) order") {
        const auto t = build_tree(2, 1.0, false);
        AdaptedRV x = AdaptedRV::zeros(t, 2);
        x.values = {4.0, 0.0, 2.0, -2.0};
        const auto e1 = condexp(x, 1, t);
        REQUIRE(e1.values == std::vector<double>{2.0, 0.0});
    }
    SECTION("target above level is a usage error") {
        const auto t = build_tree(3, 1.0, true);
        const auto w = brownian_rv(t, 1);
        REQUIRE_THROWS_AS(condexp(w, 2, t), usage_error);
    }
    SECTION("tower property is exact on random inputs") {
        std::mt19937_64 rng(17);
        for (bool rec : {true, false}) {
            const auto t = build_tree(9, 1.5, rec);
            const auto x = random_rv(t, 9, rng);
            for (int k : {7, 4, 2}) {
                const auto two_step = condexp(condexp(x, k, t), 1, t);
                const auto direct = condexp(x, 1, t);
                for (std::size_t v = 0; v < direct.values.size(); ++v)
                    REQUIRE(two_step.values[v] == direct.values[v]);
            }
        }
    }
    SECTION("recombining and full trees agree bitwise on path-independent data") {
        const auto tr = build_tree(7, 1.25, true);
        const auto tf = build_tree(7, 1.25, false);
        // value = W^2 - t at the top level, a path-independent function
        auto g = [&](const ScenarioTree& t) {
            AdaptedRV x = AdaptedRV::zeros(t, 7);
            for (std::int64_t v = 0; v < t.node_count(7); ++v) {
                const double w = t.brownian_value(7, v);
                x.values[static_cast<std::size_t>(v)] = w * w - t.time_at(7);
            }
            return x;
        };
        for (int target = 6; target >= 0; --target) {
            const auto er = condexp(g(tr), target, tr);
            const auto ef = condexp(g(tf), target, tf);
            for (std::int64_t v = 0; v < tf.node_count(target); ++v) {
                // locate the recombining node (up-move count) for the full node
                std::int64_t ups = 0;
                for (int i = 0; i < target; ++i)
                    if (((v >> i) & 1) == 0) ++ups;
                REQUIRE(ef.values[static_cast<std::size_t>(v)] ==
                        er.values[static_cast<std::size_t>(ups)]);
            }
        }
    }
}

TEST_CASE("discrete stochastic integral") {
    const auto t = build_tree(6, 1.5, false);

    SECTION("zero integrand") {
        std::vector<AdaptedRV> z;
        for (int n = 0; n < 6; ++n) z.push_back(AdaptedRV::zeros(t, n));
        const auto integral = ito_integral(z, t);
        for (double v : integral.values) REQUIRE(v == 0.0);
    }
    SECTION("integral of 1 is W(T)") {
        std::vector<AdaptedRV> z;
        for (int n = 0; n < 6; ++n) {
            auto s = AdaptedRV::zeros(t, n);
            for (auto& v : s.values) v = 1.0;
            z.push_back(s);
        }
        const auto integral = ito_integral(z, t);
        const auto w = brownian_rv(t, 6);
        for (std::size_t v = 0; v < w.values.size(); ++v)
            REQUIRE(integral.values[v] == Catch::Approx(w.values[v]).margin(1e-15));
    }
    SECTION("two-step enumeration: Z_0 = 0, Z_1 = W(t_1)") {
        const auto t2 = build_tree(2, 1.0, false);
        std::vector<AdaptedRV> z{AdaptedRV::zeros(t2, 0), brownian_rv(t2, 1)};
        const auto integral = ito_integral(z, t2);
        const auto w1 = brownian_rv(t2, 1);
        const auto w2 = brownian_rv(t2, 2);
        for (std::int64_t leaf = 0; leaf < 4; ++leaf) {
            const std::int64_t parent = leaf / 2;
            const double expect = w1.values[static_cast<std::size_t>(parent)] *
                                  (w2.values[static_cast<std::size_t>(leaf)] -
                                   w1.values[static_cast<std::size_t>(parent)]);
            REQUIRE(integral.values[static_cast<std::size_t>(leaf)] ==
                    Catch::Approx(expect).margin(1e-15));
        }
        REQUIRE(expectation(integral, t2) == Catch::Approx(0.0).margin(1e-16));
        AdaptedRV sq = integral;
        for (auto& v : sq.values) v *= v;
        REQUIRE(expectation(sq, t2) ==
                Catch::Approx(t2.dt * t2.dt).epsilon(1e-13));
    }
    SECTION("vanishing expectation and isometry for random adapted integrands") {
        std::mt19937_64 rng(23);
        for (int rep = 0; rep < 5; ++rep) {
            std::vector<AdaptedRV> z;
            for (int n = 0; n < 6; ++n) z.push_back(random_rv(t, n, rng));
            const auto integral = ito_integral(z, t);
            REQUIRE(expectation(integral, t) == Catch::Approx(0.0).margin(1e-14));

            AdaptedRV sq = integral;
            for (auto& v : sq.values) v *= v;
            NeumaierSum iso;
            for (int n = 0; n < 6; ++n) {
                AdaptedRV zn_sq = z[static_cast<std::size_t>(n)];
                for (auto& v : zn_sq.values) v *= v;
                iso.add(expectation(zn_sq, t) * t.dt);
            }
            REQUIRE(expectation(sq, t) == Catch::Approx(iso.value()).epsilon(1e-12));
        }
    }
    SECTION("recombining trees are rejected") {
        const auto tr = build_tree(3, 1.0, true);
        std::vector<AdaptedRV> z;
        for (int n = 0; n < 3; ++n) z.push_back(AdaptedRV::zeros(tr, n));
        REQUIRE_THROWS_AS(ito_integral(z, tr), usage_error);
    }
    SECTION("level mismatch is a usage error") {
        std::vector<AdaptedRV> z;
        for (int n = 0; n < 6; ++n) z.push_back(AdaptedRV::zeros(t, 0));
        REQUIRE_THROWS_AS(ito_integral(z, t), usage_error);
    }
}

TEST_CASE("martingale deviation check") {
    SECTION("Brownian motion is a martingale") {
        const auto t = build_tree(10, 1.0, true);
        std::vector<AdaptedRV> w;
        for (int n = 0; n <= 10; ++n) w.push_back(brownian_rv(t, n));
        REQUIRE(check_martingale(w, t) <= 1e-15);
    }
    SECTION("deterministic drift breaks the martingale property by dt") {
        const auto t = build_tree(5, 1.0, true);
        std::vector<AdaptedRV> x;
        for (int n = 0; n <= 5; ++n) {
            auto s = AdaptedRV::zeros(t, n);
            for (auto& v : s.values) v = n * t.dt;
            x.push_back(s);
        }
        REQUIRE(check_martingale(x, t) == Catch::Approx(t.dt).epsilon(1e-14));
    }
    SECTION("partial sums of a stochastic integral are a martingale") {
        const auto t = build_tree(8, 1.0, false);
        std::mt19937_64 rng(5);
        std::vector<AdaptedRV> z;
        for (int n = 0; n < 8; ++n) z.push_back(random_rv(t, n, rng));
        // independent partial-sum construction
        std::vector<AdaptedRV> sums;
        sums.push_back(AdaptedRV::zeros(t, 0));
        const double sq = std::sqrt(t.dt);
        for (int n = 0; n < 8; ++n) {
            AdaptedRV next = AdaptedRV::zeros(t, n + 1);
            for (std::int64_t v = 0; v < t.node_count(n); ++v) {
                const double s = sums.back().values[static_cast<std::size_t>(v)];
                const double zz = z[static_cast<std::size_t>(n)].values[static_cast<std::size_t>(v)];
                next.values[static_cast<std::size_t>(t.child(n, v, true))] = s + sq * zz;
                next.values[static_cast<std::size_t>(t.child(n, v, false))] = s - sq * zz;
            }
            sums.push_back(next);
        }
        REQUIRE(check_martingale(sums, t) <= 1e-12);
    }
}

TEST_CASE("path enumeration agrees with nested averaging") {
    std::mt19937_64 rng(99);
    for (bool rec : {true, false}) {
        const auto t = build_tree(8, 0.5, rec);
        const auto x = random_rv(t, 8, rng);
        NeumaierSum s;
        for_each_path(t, [&](const std::vector<std::int64_t>& nodes, double prob) {
            s.add(prob * x.values[static_cast<std::size_t>(nodes[8])]);
        });
        REQUIRE(s.value() == Catch::Approx(expectation(x, t)).margin(1e-14));
    }
    SECTION("conditional sums match a per-path reference") {
        const auto t = build_tree(6, 1.0, true);
        std::vector<std::vector<double>> terms(7);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int l = 0; l <= 6; ++l) {
            terms[static_cast<std::size_t>(l)].resize(
                static_cast<std::size_t>(t.node_count(l)));
            for (auto& v : terms[static_cast<std::size_t>(l)]) v = u(rng);
        }
        const auto cond = conditional_sum(t, terms, 0);
        NeumaierSum ref;
        for_each_path(t, [&](const std::vector<std::int64_t>& nodes, double prob) {
            double s = 0.0;
            for (int l = 0; l <= 6; ++l)
                s += terms[static_cast<std::size_t>(l)]
                          [static_cast<std::size_t>(nodes[static_cast<std::size_t>(l)])];
            ref.add(prob * s);
        });
        REQUIRE(cond[0] == Catch::Approx(ref.value()).margin(1e-13));
    }
}
