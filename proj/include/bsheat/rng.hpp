#pragma once

// Counter-based deterministic random fields: a value is a pure function of
// (seed, level, node, point), so generation order, storage layout and thread
// count cannot change results. Clamped uniform values keep the discrete
// ess-sup at or below the requested amplitude.

#include <cstdint>
#include <string>

#include "field.hpp"

namespace bsheat {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_counter(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                                  std::uint64_t c) {
    std::uint64_t x = splitmix64(seed ^ 0x2545f4914f6cdd1dULL);
    x = splitmix64(x ^ a);
    x = splitmix64(x ^ (b + 0x9e3779b97f4a7c15ULL));
    x = splitmix64(x ^ (c + 0xd1b54a32d192ed03ULL));
    return x;
}

// Uniform in [-1, 1], 53-bit resolution.
inline double uniform_pm1(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
    const std::uint64_t bits = hash_counter(seed, a, b, c) >> 11;
    return 2.0 * (static_cast<double>(bits) * 0x1.0p-53) - 1.0;
}

enum class FieldKind { coefficient, terminal, source };

// Domain-separated streams per kind so coefficient/terminal/source draws
// never collide under one seed.
inline std::uint64_t kind_tag(FieldKind kind) {
    switch (kind) {
        case FieldKind::coefficient: return 0x636f6566ULL;
        case FieldKind::terminal: return 0x7465726dULL;
        default: return 0x73726365ULL;
    }
}

inline AdaptedField generate_random_field(std::uint64_t seed, double amplitude,
                                          const ScenarioTree& tree,
                                          const Discretization& disc, FieldKind kind) {
    require(amplitude >= 0.0, "generate_random_field: amplitude must be >= 0");
    const std::uint64_t tagged = seed ^ kind_tag(kind);
    const int levels = (kind == FieldKind::terminal) ? tree.levels + 1 : tree.levels;
    AdaptedField f = AdaptedField::zeros(tree, disc, levels);
    for (int l = 0; l < levels; ++l)
        for (std::int64_t v = 0; v < tree.node_count(l); ++v) {
            auto row = f.at(l, v);
            for (int j = 0; j < disc.interior_points; ++j) {
                double val = amplitude * uniform_pm1(tagged, static_cast<std::uint64_t>(l),
                                                     static_cast<std::uint64_t>(v),
                                                     static_cast<std::uint64_t>(j));
                if (val > amplitude) val = amplitude;
                if (val < -amplitude) val = -amplitude;
                row[static_cast<std::size_t>(j)] = val;
            }
        }
    return f;
}

inline LevelField generate_random_terminal(std::uint64_t seed, double amplitude,
                                           const ScenarioTree& tree,
                                           const Discretization& disc) {
    require(amplitude >= 0.0, "generate_random_terminal: amplitude must be >= 0");
    const std::uint64_t tagged = seed ^ kind_tag(FieldKind::terminal);
    LevelField f = LevelField::zeros(tree, disc, tree.levels);
    const auto l = static_cast<std::uint64_t>(tree.levels);
    for (std::int64_t v = 0; v < tree.node_count(tree.levels); ++v) {
        auto row = f.at(v);
        for (int j = 0; j < disc.interior_points; ++j) {
            double val = amplitude * uniform_pm1(tagged, l, static_cast<std::uint64_t>(v),
                                                 static_cast<std::uint64_t>(j));
            if (val > amplitude) val = amplitude;
            if (val < -amplitude) val = -amplitude;
            row[static_cast<std::size_t>(j)] = val;
        }
    }
    return f;
}

}  // namespace bsheat
