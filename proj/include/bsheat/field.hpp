#pragma once

// Space-valued adapted processes on the tree x grid product. Storage is
// indexed by (level, node, grid point), so adaptedness holds by construction.
// Dirichlet boundary values are implicit zeros.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "grid.hpp"
#include "tree.hpp"

namespace bsheat {

// Values for every node of a single level (node-major, M doubles per node).
struct LevelField {
    int level = 0;
    int points = 0;
    std::vector<double> data;

    static LevelField zeros(const ScenarioTree& tree, const Discretization& disc,
                            int level) {
        LevelField f;
        f.level = level;
        f.points = disc.interior_points;
        f.data.assign(static_cast<std::size_t>(tree.node_count(level)) *
                          static_cast<std::size_t>(f.points),
                      0.0);
        return f;
    }

    std::span<double> at(std::int64_t node) {
        return {data.data() + static_cast<std::size_t>(node) * static_cast<std::size_t>(points),
                static_cast<std::size_t>(points)};
    }
    std::span<const double> at(std::int64_t node) const {
        return {data.data() + static_cast<std::size_t>(node) * static_cast<std::size_t>(points),
                static_cast<std::size_t>(points)};
    }
    std::int64_t node_count() const {
        return points == 0 ? 0 : static_cast<std::int64_t>(data.size()) / points;
    }
};

// An adapted process over levels 0..L-1 (L = stored_levels()).
struct AdaptedField {
    int points = 0;
    std::vector<std::vector<double>> levels;  // levels[l]: node-major values

    static AdaptedField zeros(const ScenarioTree& tree, const Discretization& disc,
                              int stored_levels) {
        AdaptedField f;
        f.points = disc.interior_points;
        f.levels.resize(static_cast<std::size_t>(stored_levels));
        for (int l = 0; l < stored_levels; ++l)
            f.levels[static_cast<std::size_t>(l)].assign(
                static_cast<std::size_t>(tree.node_count(l)) *
                    static_cast<std::size_t>(f.points),
                0.0);
        return f;
    }

    int stored_levels() const { return static_cast<int>(levels.size()); }

    std::span<double> at(int level, std::int64_t node) {
        auto& lv = levels[static_cast<std::size_t>(level)];
        return {lv.data() + static_cast<std::size_t>(node) * static_cast<std::size_t>(points),
                static_cast<std::size_t>(points)};
    }
    std::span<const double> at(int level, std::int64_t node) const {
        const auto& lv = levels[static_cast<std::size_t>(level)];
        return {lv.data() + static_cast<std::size_t>(node) * static_cast<std::size_t>(points),
                static_cast<std::size_t>(points)};
    }

    bool finite() const {
        for (const auto& lv : levels)
            for (double v : lv)
                if (!std::isfinite(v)) return false;
        return true;
    }

    // Discrete ess-sup: max |value| over all stored (level, node, point).
    double sup_abs() const {
        double m = 0.0;
        for (const auto& lv : levels)
            for (double v : lv) m = std::max(m, std::abs(v));
        return m;
    }
};

// Fills levels 0..stored_levels-1 from f(t, x, w) evaluated per node.
inline AdaptedField fill_field(const ScenarioTree& tree, const Discretization& disc,
                               int stored_levels,
                               const std::function<double(double, double, double)>& f) {
    AdaptedField out = AdaptedField::zeros(tree, disc, stored_levels);
    for (int l = 0; l < stored_levels; ++l) {
        const double t = tree.time_at(l);
        for (std::int64_t v = 0; v < tree.node_count(l); ++v) {
            const double w = tree.brownian_value(l, v);
            auto row = out.at(l, v);
            for (int j = 0; j < disc.interior_points; ++j)
                row[static_cast<std::size_t>(j)] = f(t, disc.x(j), w);
        }
    }
    return out;
}

inline LevelField fill_level(const ScenarioTree& tree, const Discretization& disc,
                             int level,
                             const std::function<double(double, double, double)>& f) {
    LevelField out = LevelField::zeros(tree, disc, level);
    const double t = tree.time_at(level);
    for (std::int64_t v = 0; v < tree.node_count(level); ++v) {
        const double w = tree.brownian_value(level, v);
        auto row = out.at(v);
        for (int j = 0; j < disc.interior_points; ++j)
            row[static_cast<std::size_t>(j)] = f(t, disc.x(j), w);
    }
    return out;
}

inline double sup_abs(const LevelField& f) {
    double m = 0.0;
    for (double v : f.data) m = std::max(m, std::abs(v));
    return m;
}

// Bounded multiplicative coefficients of the equation, assumption (H).
struct CoefficientSet {
    AdaptedField alpha;
    AdaptedField beta;

    double alpha_sup() const { return alpha.sup_abs(); }
    double beta_sup() const { return beta.sup_abs(); }
    // Gronwall rate K = ||alpha||_inf + ||beta||_inf^2.
    double rate() const {
        const double b = beta_sup();
        return alpha_sup() + b * b;
    }
};

struct ProblemData {
    LevelField terminal;   // y(T), one slice at level N
    AdaptedField source;   // F on levels 0..N-1
};

inline CoefficientSet zero_coefficients(const ScenarioTree& tree,
                                        const Discretization& disc) {
    return {AdaptedField::zeros(tree, disc, tree.levels),
            AdaptedField::zeros(tree, disc, tree.levels)};
}

inline ProblemData zero_data(const ScenarioTree& tree, const Discretization& disc) {
    return {LevelField::zeros(tree, disc, tree.levels),
            AdaptedField::zeros(tree, disc, tree.levels)};
}

}  // namespace bsheat
