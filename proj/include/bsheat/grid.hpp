#pragma once

// 1D Dirichlet grid on (0, length): second-difference Laplacian, uniform
// quadrature weight h on interior points, discrete norms, and the control
// region mask. The summation-by-parts identity
//   <-Lap_h v, v>_h = |v|_{H1,h}^2
// holds exactly with forward differences down to the zero boundary, which is
// what the discrete energy identity rests on.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "common.hpp"

namespace bsheat {

using SpatialVector = std::vector<double>;

struct Discretization {
    int interior_points = 2;     // M
    double length = 1.0;         // l
    double h = 1.0 / 3.0;        // l / (M + 1)
    double control_lo = 0.3;
    double control_hi = 0.6;
    std::vector<std::uint8_t> control_mask;  // x_j in (control_lo, control_hi)

    double x(int j) const { return h * (j + 1); }  // j = 0..M-1 maps to x_1..x_M

    std::int64_t mask_size() const {
        std::int64_t c = 0;
        for (auto m : control_mask) c += m ? 1 : 0;
        return c;
    }

    // Eigenvalue of -Lap_h for mode k = 1..M (positive, increasing).
    double dirichlet_eigenvalue(int k) const {
        const double s = std::sin(k * std::numbers::pi * h / (2.0 * length));
        return 4.0 / (h * h) * s * s;
    }

    SpatialVector sine_mode(int k) const {
        SpatialVector v(static_cast<std::size_t>(interior_points));
        for (int j = 0; j < interior_points; ++j)
            v[static_cast<std::size_t>(j)] = std::sin(k * std::numbers::pi * x(j) / length);
        return v;
    }
};

inline Discretization make_discretization(int interior_points, double length = 1.0,
                                          double control_lo = 0.3,
                                          double control_hi = 0.6) {
    require(interior_points >= 2, "make_discretization: need at least 2 interior points");
    require(length > 0.0, "make_discretization: length must be > 0");
    require(0.0 <= control_lo && control_lo < control_hi && control_hi <= length,
            "make_discretization: control interval must satisfy 0 <= a < b <= length");
    Discretization d;
    d.interior_points = interior_points;
    d.length = length;
    d.h = length / (interior_points + 1);
    d.control_lo = control_lo;
    d.control_hi = control_hi;
    d.control_mask.assign(static_cast<std::size_t>(interior_points), 0);
    for (int j = 0; j < interior_points; ++j)
        d.control_mask[static_cast<std::size_t>(j)] =
            (d.x(j) > control_lo && d.x(j) < control_hi) ? 1 : 0;
    return d;
}

inline void check_length(const Discretization& d, const SpatialVector& v,
                         const char* who) {
    require(static_cast<int>(v.size()) == d.interior_points,
            std::string(who) + ": vector length does not match the grid");
}

// (v_{j-1} - 2 v_j + v_{j+1}) / h^2 with zero boundary values.
inline SpatialVector apply_laplacian(const Discretization& d, const SpatialVector& v) {
    check_length(d, v, "apply_laplacian");
    const int m = d.interior_points;
    const double ih2 = 1.0 / (d.h * d.h);
    SpatialVector out(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        const double left = (j > 0) ? v[static_cast<std::size_t>(j - 1)] : 0.0;
        const double right = (j + 1 < m) ? v[static_cast<std::size_t>(j + 1)] : 0.0;
        out[static_cast<std::size_t>(j)] = (left - 2.0 * v[static_cast<std::size_t>(j)] + right) * ih2;
    }
    return out;
}

inline double inner_product(const Discretization& d, const SpatialVector& u,
                            const SpatialVector& v) {
    check_length(d, u, "inner_product");
    check_length(d, v, "inner_product");
    NeumaierSum s;
    for (std::size_t j = 0; j < u.size(); ++j) s.add(u[j] * v[j]);
    return d.h * s.value();
}

// (sum_j h |v_j|^p)^{1/p}; max_j |v_j| for p = infinity.
inline double lp_norm(const SpatialVector& v, double p, const Discretization& d) {
    check_length(d, v, "lp_norm");
    require(p >= 1.0, "lp_norm: p must be >= 1 (or infinity)");
    if (std::isinf(p)) {
        double m = 0.0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    }
    NeumaierSum s;
    for (double x : v) s.add(std::pow(std::abs(x), p));
    return std::pow(d.h * s.value(), 1.0 / p);
}

inline double l2_norm_sq(const Discretization& d, const SpatialVector& v) {
    return inner_product(d, v, v);
}

// sum over edges (including both boundary edges) of (v_{j+1} - v_j)^2 / h.
inline double h1_seminorm_sq(const Discretization& d, const SpatialVector& v) {
    check_length(d, v, "h1_seminorm");
    const int m = d.interior_points;
    NeumaierSum s;
    double prev = 0.0;
    for (int j = 0; j < m; ++j) {
        const double cur = v[static_cast<std::size_t>(j)];
        s.add((cur - prev) * (cur - prev));
        prev = cur;
    }
    s.add(prev * prev);
    return s.value() / d.h;
}

inline double h1_seminorm(const Discretization& d, const SpatialVector& v) {
    return std::sqrt(h1_seminorm_sq(d, v));
}

// Thomas solve of the step system (I - dt*(Lap_h + diag(c))) x = rhs.
// Diagonal dominance needs dt*max(c) < 1, enforced by the callers.
inline SpatialVector solve_step_system(const Discretization& d, double dt,
                                       const SpatialVector& c, const SpatialVector& rhs) {
    check_length(d, c, "solve_step_system");
    check_length(d, rhs, "solve_step_system");
    const int m = d.interior_points;
    const double off = -dt / (d.h * d.h);
    std::vector<double> diag(static_cast<std::size_t>(m)), cp(static_cast<std::size_t>(m)),
        dp(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j)
        diag[static_cast<std::size_t>(j)] = 1.0 + 2.0 * dt / (d.h * d.h) - dt * c[static_cast<std::size_t>(j)];
    cp[0] = off / diag[0];
    dp[0] = rhs[0] / diag[0];
    for (int j = 1; j < m; ++j) {
        const double denom = diag[static_cast<std::size_t>(j)] - off * cp[static_cast<std::size_t>(j - 1)];
        cp[static_cast<std::size_t>(j)] = off / denom;
        dp[static_cast<std::size_t>(j)] =
            (rhs[static_cast<std::size_t>(j)] - off * dp[static_cast<std::size_t>(j - 1)]) / denom;
    }
    SpatialVector x(static_cast<std::size_t>(m));
    x[static_cast<std::size_t>(m - 1)] = dp[static_cast<std::size_t>(m - 1)];
    for (int j = m - 2; j >= 0; --j)
        x[static_cast<std::size_t>(j)] =
            dp[static_cast<std::size_t>(j)] - cp[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j + 1)];
    return x;
}

// Residual ||(I - dt*(Lap_h + diag(c))) x - rhs||_inf of a step solve.
inline double step_system_residual(const Discretization& d, double dt,
                                   const SpatialVector& c, const SpatialVector& x,
                                   const SpatialVector& rhs) {
    const SpatialVector lap = apply_laplacian(d, x);
    double worst = 0.0;
    for (int j = 0; j < d.interior_points; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const double lhs = x[ju] - dt * (lap[ju] + c[ju] * x[ju]);
        worst = std::max(worst, std::abs(lhs - rhs[ju]));
    }
    return worst;
}

}  // namespace bsheat
