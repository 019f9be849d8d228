#pragma once

// Exhaustive binomial scenario space for a one-dimensional Brownian driver.
// Every expectation, conditional expectation and stochastic integral is a
// finite sum over tree nodes, so martingale identities hold to roundoff.
//
// Node conventions
//   recombining: node k at level n counts up-moves, W = sqrt(dt)*(2k - n),
//                P(n,k) = C(n,k) / 2^n, children (up,down) = (k+1, k).
//   full:        node b at level n encodes the move sequence MSB-first with
//                bit 0 = up, so b = 0 is the all-up path and level-2 order
//                is (++, +-, -+, --); children (up,down) = (2b, 2b+1),
//                P = 2^-n uniform.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "common.hpp"

namespace bsheat {

struct ScenarioTree {
    int levels = 1;            // number of time steps N >= 1
    double horizon = 1.0;      // T > 0
    double dt = 1.0;           // horizon / levels
    bool recombining = true;
    int full_cap = 16;         // cap on N for full (2^N node) storage

    std::int64_t node_count(int level) const {
        require(level >= 0 && level <= levels, "node_count: level out of range");
        return recombining ? static_cast<std::int64_t>(level) + 1
                           : std::int64_t{1} << level;
    }

    std::int64_t child(int level, std::int64_t node, bool up) const {
        require(level >= 0 && level < levels, "child: level out of range");
        require(node >= 0 && node < node_count(level), "child: node out of range");
        if (recombining) return up ? node + 1 : node;
        return 2 * node + (up ? 0 : 1);
    }

    // Exact dyadic probability of visiting (level, node).
    double probability(int level, std::int64_t node) const {
        require(node >= 0 && node < node_count(level), "probability: node out of range");
        const double scale = std::ldexp(1.0, -level);   // 2^-level, exact
        if (!recombining) return scale;
        // C(level, node) is exact in double up to level 56.
        double binom = 1.0;
        const std::int64_t k = std::min(node, level - node);
        for (std::int64_t i = 0; i < k; ++i)
            binom = binom * static_cast<double>(level - i) / static_cast<double>(i + 1);
        return binom * scale;
    }

    // Brownian value at a node: sqrt(dt) times the signed sum of increments.
    double brownian_value(int level, std::int64_t node) const {
        require(node >= 0 && node < node_count(level), "brownian_value: node out of range");
        if (level == 0) return 0.0;
        std::int64_t ups;
        if (recombining) {
            ups = node;
        } else {
            ups = 0;
            for (int i = 0; i < level; ++i)
                if (((node >> i) & 1) == 0) ++ups;
        }
        return std::sqrt(dt) * static_cast<double>(2 * ups - level);
    }

    double time_at(int level) const { return dt * level; }
};

inline ScenarioTree build_tree(int levels, double horizon, bool recombining,
                               int full_cap = 16) {
    require(levels >= 1, "build_tree: levels must be >= 1");
    require(horizon > 0.0, "build_tree: horizon must be > 0");
    if (!recombining && levels > full_cap)
        throw config_error("build_tree: full tree needs " + std::to_string(levels) +
                           " levels but the full-tree cap is " + std::to_string(full_cap) +
                           " (2^N storage); raise full_cap or use a recombining tree");
    ScenarioTree t;
    t.levels = levels;
    t.horizon = horizon;
    t.dt = horizon / levels;
    t.recombining = recombining;
    t.full_cap = full_cap;
    return t;
}

// A random variable measurable at one time level: one value per node.
struct AdaptedRV {
    int level = 0;
    std::vector<double> values;

    static AdaptedRV zeros(const ScenarioTree& tree, int level) {
        AdaptedRV x;
        x.level = level;
        x.values.assign(static_cast<std::size_t>(tree.node_count(level)), 0.0);
        return x;
    }
};

inline AdaptedRV brownian_rv(const ScenarioTree& tree, int level) {
    AdaptedRV x = AdaptedRV::zeros(tree, level);
    for (std::int64_t v = 0; v < tree.node_count(level); ++v)
        x.values[static_cast<std::size_t>(v)] = tree.brownian_value(level, v);
    return x;
}

// One averaging step E[. | F_{level-1}]. Children are combined as
// 0.5*(up + down) in that order on both tree kinds, so recombining and full
// trees produce bitwise identical results on path-independent data.
inline std::vector<double> average_children(const ScenarioTree& tree, int level,
                                            const std::vector<double>& vals) {
    const std::int64_t n = tree.node_count(level - 1);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (std::int64_t v = 0; v < n; ++v) {
        const double up = vals[static_cast<std::size_t>(tree.child(level - 1, v, true))];
        const double dn = vals[static_cast<std::size_t>(tree.child(level - 1, v, false))];
        out[static_cast<std::size_t>(v)] = 0.5 * (up + dn);
    }
    return out;
}

// Exact conditional expectation E[x | F_target]; the tower property holds by
// construction because lowering is iterated one-level averaging.
inline AdaptedRV condexp(const AdaptedRV& x, int target, const ScenarioTree& tree) {
    require(target >= 0, "condexp: target level must be >= 0");
    require(target <= x.level, "condexp: target level exceeds the variable's level");
    require(x.values.size() == static_cast<std::size_t>(tree.node_count(x.level)),
            "condexp: value count does not match the tree");
    AdaptedRV out = x;
    for (int l = x.level; l > target; --l) {
        out.values = average_children(tree, l, out.values);
        out.level = l - 1;
    }
    return out;
}

inline double expectation(const AdaptedRV& x, const ScenarioTree& tree) {
    return condexp(x, 0, tree).values[0];
}

// Discrete stochastic integral  sum_n Z_n (W_{n+1} - W_n)  as a level-N
// variable. Partial sums of an adapted integrand are path-dependent, so this
// is only representable on a full tree.
inline AdaptedRV ito_integral(const std::vector<AdaptedRV>& integrand,
                              const ScenarioTree& tree) {
    require(!tree.recombining,
            "ito_integral: partial sums are path-dependent; use a full tree");
    require(static_cast<int>(integrand.size()) == tree.levels,
            "ito_integral: need one integrand slice per step (levels 0..N-1)");
    for (int n = 0; n < tree.levels; ++n) {
        require(integrand[static_cast<std::size_t>(n)].level == n,
                "ito_integral: integrand slice " + std::to_string(n) +
                " is not at level " + std::to_string(n));
        require(integrand[static_cast<std::size_t>(n)].values.size() ==
                    static_cast<std::size_t>(tree.node_count(n)),
                "ito_integral: integrand slice size mismatch");
    }
    const double sq = std::sqrt(tree.dt);
    std::vector<double> sums(1, 0.0);
    for (int n = 0; n < tree.levels; ++n) {
        const std::int64_t cnt = tree.node_count(n);
        std::vector<double> next(static_cast<std::size_t>(tree.node_count(n + 1)));
        for (std::int64_t v = 0; v < cnt; ++v) {
            const double s = sums[static_cast<std::size_t>(v)];
            const double z = integrand[static_cast<std::size_t>(n)].values[static_cast<std::size_t>(v)];
            next[static_cast<std::size_t>(tree.child(n, v, true))] = s + sq * z;
            next[static_cast<std::size_t>(tree.child(n, v, false))] = s - sq * z;
        }
        sums = std::move(next);
    }
    AdaptedRV out;
    out.level = tree.levels;
    out.values = std::move(sums);
    return out;
}

// Max |E[X_{n+1} | F_n] - X_n| over consecutive pairs; 0 iff the process is a
// discrete martingale.
inline double check_martingale(const std::vector<AdaptedRV>& process,
                               const ScenarioTree& tree) {
    require(process.size() >= 2, "check_martingale: need at least two levels");
    double worst = 0.0;
    for (std::size_t i = 0; i + 1 < process.size(); ++i) {
        require(process[i + 1].level == process[i].level + 1,
                "check_martingale: levels must be consecutive");
        const AdaptedRV pred = condexp(process[i + 1], process[i].level, tree);
        for (std::size_t v = 0; v < pred.values.size(); ++v)
            worst = std::max(worst, std::abs(pred.values[v] - process[i].values[v]));
    }
    return worst;
}

// E[ sum_{n=t}^{N-1} g_n + g_N | F_t ] per node at level t, by backward
// induction. terms[l] holds the per-node addends at level l (levels t..N;
// shorter inputs are treated as zero from the missing level on). Linear
// functionals of this shape never need path enumeration.
inline std::vector<double> conditional_sum(const ScenarioTree& tree,
                                           const std::vector<std::vector<double>>& terms,
                                           int t) {
    require(t >= 0 && t <= tree.levels, "conditional_sum: level out of range");
    const int top = std::min<int>(tree.levels, static_cast<int>(terms.size()) - 1);
    if (top < t)
        return std::vector<double>(static_cast<std::size_t>(tree.node_count(t)), 0.0);
    std::vector<double> acc = terms[static_cast<std::size_t>(top)];
    if (acc.empty()) acc.assign(static_cast<std::size_t>(tree.node_count(top)), 0.0);
    for (int l = top; l > t; --l) {
        acc = average_children(tree, l, acc);
        if (static_cast<std::size_t>(l - 1) < terms.size() &&
            !terms[static_cast<std::size_t>(l - 1)].empty()) {
            const auto& g = terms[static_cast<std::size_t>(l - 1)];
            for (std::size_t v = 0; v < acc.size(); ++v) acc[v] += g[v];
        }
    }
    return acc;
}

// Enumerates all 2^N sign paths; f(nodes, probability) receives the node
// index per level (size N+1). Exponential in N, hence the cap.
template <class F>
void for_each_path(const ScenarioTree& tree, F&& f) {
    constexpr int kPathCap = 20;
    if (tree.levels > kPathCap)
        throw config_error("for_each_path: 2^" + std::to_string(tree.levels) +
                           " paths exceed the enumeration cap (N <= " +
                           std::to_string(kPathCap) + ")");
    const std::int64_t npaths = std::int64_t{1} << tree.levels;
    const double prob = std::ldexp(1.0, -tree.levels);
    std::vector<std::int64_t> nodes(static_cast<std::size_t>(tree.levels) + 1);
    for (std::int64_t path = 0; path < npaths; ++path) {
        nodes[0] = 0;
        for (int n = 0; n < tree.levels; ++n) {
            const bool up = ((path >> (tree.levels - 1 - n)) & 1) == 0;
            nodes[static_cast<std::size_t>(n) + 1] = tree.child(n, nodes[static_cast<std::size_t>(n)], up);
        }
        f(nodes, prob);
    }
}

}  // namespace bsheat
