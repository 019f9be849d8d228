#pragma once

// Executable form of the analytic toolkit: the C^2 truncation family phi_n
// of |r|^p, the second-order Taylor remainder G of a scalar nonlinearity,
// a backward Gronwall checker, and the L^p -> L^inf extrapolation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace bsheat {

// ---------------------------------------------------------------------------
// Truncation family: phi_n(r) = |r|^p inside |r| < n, quadratically extended
// outside so that value, first and second derivatives match at |r| = n.

struct TruncationFamily {
    double n = 1.0;  // truncation level > 0
    double p = 2.0;  // exponent >= 2

    // Constant in |phi| <= M r^2, |phi'| <= M |r|, |phi''| <= M.
    double quad_bound() const { return p * (p - 1.0) * std::pow(n, p - 2.0); }
    // Constant in |phi| <= N |r|^p, |phi'| <= N |r|^{p-1}, |phi''| <= N |r|^{p-2}.
    double growth_bound() const { return p * p; }
};

inline TruncationFamily make_truncation(double n, double p) {
    require(n > 0.0, "make_truncation: truncation level must be > 0");
    require(p >= 2.0, "make_truncation: p must be >= 2");
    return {n, p};
}

// phi, phi' or phi''. The inner branch deliberately uses the same
// expressions as the p-power family so that the truncated and untruncated
// Ito residual machinery agree bitwise once n exceeds the solution range.
inline double phi(const TruncationFamily& fam, double r, int derivative_order) {
    require(derivative_order >= 0 && derivative_order <= 2,
            "phi: derivative order must be 0, 1 or 2");
    const double a = std::abs(r);
    const double p = fam.p;
    const double n = fam.n;
    if (a < n) {
        switch (derivative_order) {
            case 0: return std::pow(a, p);
            case 1: return p * std::pow(a, p - 2.0) * r;
            default: return p * (p - 1.0) * std::pow(a, p - 2.0);
        }
    }
    const double np2 = std::pow(n, p - 2.0);
    const double e = a - n;
    switch (derivative_order) {
        case 0: return np2 * (p * (p - 1.0) / 2.0) * e * e + p * np2 * n * e + np2 * n * n;
        case 1: return std::copysign(np2 * p * (p - 1.0) * e + p * np2 * n, r);
        default: return np2 * p * (p - 1.0);
    }
}

// The p-power family |r|^p, p|r|^{p-2}r, p(p-1)|r|^{p-2}, i.e. the pointwise
// n -> infinity limit of phi. Shares the inner-branch expressions above.
inline double power_family(double p, double r, int derivative_order) {
    const double a = std::abs(r);
    switch (derivative_order) {
        case 0: return std::pow(a, p);
        case 1: return p * std::pow(a, p - 2.0) * r;
        default: return p * (p - 1.0) * std::pow(a, p - 2.0);
    }
}

struct PhiPropertyReport {
    bool passed = true;
    double worst_margin = 0.0;  // max over sample of (lhs - rhs); <= 0 when all hold
    std::string first_failure;  // names the inequality and the offending r

    void record(const std::string& name, double r, double lhs, double rhs) {
        const double slack = 1e-12 * (1.0 + std::abs(lhs) + std::abs(rhs));
        worst_margin = std::max(worst_margin, lhs - rhs);
        if (lhs > rhs + slack && passed) {
            passed = false;
            first_failure = name + " fails at r = " + std::to_string(r);
        }
    }
};

// Verifies the pointwise inequalities of the truncation family on a sample:
//   |r phi'| <= p phi,  (phi')^2 <= 4p phi'' phi,
//   (phi'')^{p/(p-2)} <= [p(p-1)]^{p/(p-2)} phi   (p > 2 only),
//   phi'' >= 0, and the quadratic / p-growth envelopes.
inline PhiPropertyReport check_phi_properties(const TruncationFamily& fam,
                                              const std::vector<double>& sample) {
    require(!sample.empty(), "check_phi_properties: empty sample");
    PhiPropertyReport rep;
    const double p = fam.p;
    const double m = fam.quad_bound();
    const double ngrow = fam.growth_bound();
    for (double r : sample) {
        const double f0 = phi(fam, r, 0);
        const double f1 = phi(fam, r, 1);
        const double f2 = phi(fam, r, 2);
        rep.record("|r phi'| <= p phi", r, std::abs(r * f1), p * f0);
        rep.record("(phi')^2 <= 4p phi'' phi", r, f1 * f1, 4.0 * p * f2 * f0);
        if (p > 2.0) {
            // checked in log scale; the exponent p/(p-2) blows up as p -> 2
            // and the direct powers overflow long before the inequality fails
            const double q = p / (p - 2.0);
            if (f2 > 0.0 && f0 > 0.0) {
                const double shift = 1e-9 * (1.0 + std::abs(std::log(f0)));
                rep.record("(phi'')^{p/(p-2)} <= [p(p-1)]^{p/(p-2)} phi", r,
                           q * (std::log(f2) - std::log(p * (p - 1.0))) - shift,
                           std::log(f0));
            } else {
                rep.record("(phi'')^{p/(p-2)} <= [p(p-1)]^{p/(p-2)} phi", r, 0.0, f0);
            }
        }
        rep.record("phi'' >= 0", r, 0.0, f2);
        rep.record("|phi| <= M r^2", r, std::abs(f0), m * r * r);
        rep.record("|phi'| <= M |r|", r, std::abs(f1), m * std::abs(r));
        rep.record("|phi''| <= M", r, std::abs(f2), m);
        rep.record("|phi| <= N |r|^p", r, std::abs(f0),
                   ngrow * std::pow(std::abs(r), p));
        rep.record("|phi'| <= N |r|^{p-1}", r, std::abs(f1),
                   ngrow * std::pow(std::abs(r), p - 1.0));
        rep.record("|phi''| <= N |r|^{p-2}", r, std::abs(f2),
                   ngrow * std::pow(std::abs(r), p - 2.0));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Scalar nonlinearity with f(0) = 0 on a bounded interval containing 0.
// Derivatives fall back to central differences when not supplied.

struct NonlinearitySpec {
    std::function<double(double)> f;
    std::optional<std::function<double(double)>> f_prime;
    std::optional<std::function<double(double)>> f_second;
    double lo = -2.0;
    double hi = 2.0;

    static constexpr double kFdStep = 1e-5;

    double d1(double s) const {
        if (f_prime) return (*f_prime)(s);
        return (f(s + kFdStep) - f(s - kFdStep)) / (2.0 * kFdStep);
    }
    double d2(double s) const {
        if (f_second) return (*f_second)(s);
        return (f(s + kFdStep) - 2.0 * f(s) + f(s - kFdStep)) / (kFdStep * kFdStep);
    }

    // Realized maxima of |f''| and |f'| over the interval, on a dense scan.
    double max_second() const { return scan([this](double s) { return std::abs(d2(s)); }); }
    double max_first() const { return scan([this](double s) { return std::abs(d1(s)); }); }

private:
    template <class G>
    double scan(G&& g) const {
        constexpr int kScan = 4096;
        double m = 0.0;
        for (int i = 0; i <= kScan; ++i) {
            const double s = lo + (hi - lo) * i / kScan;
            m = std::max(m, g(s));
        }
        return m;
    }
};

inline NonlinearitySpec make_nonlinearity(std::function<double(double)> f, double lo,
                                          double hi) {
    require(lo < 0.0 || lo == 0.0, "make_nonlinearity: interval must contain 0");
    require(hi > 0.0 || hi == 0.0, "make_nonlinearity: interval must contain 0");
    require(lo < hi, "make_nonlinearity: empty interval");
    NonlinearitySpec spec;
    spec.f = std::move(f);
    spec.lo = lo;
    spec.hi = hi;
    if (std::abs(spec.f(0.0)) > 1e-12)
        throw data_error("make_nonlinearity: f(0) must vanish, got " +
                         std::to_string(spec.f(0.0)));
    return spec;
}

// G(s) = integral_0^1 (1 - sigma) f''(sigma s) d sigma by composite 3-point
// Gauss-Legendre (degree-5 exactness per panel, so polynomial f up to
// degree 5 integrate exactly), giving f(s) = f'(0) s + s^2 G(s) to
// quadrature accuracy for smooth f.
inline double nonlinearity_G(const NonlinearitySpec& spec, double s, int panels = 64) {
    require(panels >= 8, "nonlinearity_G: need at least 8 panels");
    const double w = 1.0 / panels;
    const double off = w * 0.5 * std::sqrt(0.6);
    constexpr double w_mid = 8.0 / 18.0;
    constexpr double w_off = 5.0 / 18.0;
    NeumaierSum acc;
    for (int i = 0; i < panels; ++i) {
        const double mid = (i + 0.5) * w;
        acc.add(w_mid * (1.0 - mid) * spec.d2(mid * s));
        acc.add(w_off * (1.0 - (mid - off)) * spec.d2((mid - off) * s));
        acc.add(w_off * (1.0 - (mid + off)) * spec.d2((mid + off) * s));
    }
    return acc.value() * w;
}

struct GBoundsReport {
    bool passed = true;
    double realized_M = 0.0;   // max |f''| over the interval
    double realized_M1 = 0.0;  // max |f'| over the interval
    double worst_margin = 0.0;
    std::string first_failure;
};

// Checks |G(s)| <= M on the samples and the two-point estimate
//   |s1^2 G(s1) - s2^2 G(s2)| <= M |s1-s2| (|s1|+|s2|) + M1 |s2|^2 |s1-s2|
// over all sample pairs, with the realized maxima as constants.
inline GBoundsReport check_G_bounds(const NonlinearitySpec& spec,
                                    const std::vector<double>& samples,
                                    int panels = 64) {
    require(!samples.empty(), "check_G_bounds: empty sample");
    GBoundsReport rep;
    rep.realized_M = spec.max_second();
    rep.realized_M1 = spec.max_first();
    std::vector<double> g(samples.size());
    const double slack = 1e-9 * (1.0 + rep.realized_M + rep.realized_M1);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        require(samples[i] >= spec.lo && samples[i] <= spec.hi,
                "check_G_bounds: sample outside the interval");
        g[i] = nonlinearity_G(spec, samples[i], panels);
        const double margin = std::abs(g[i]) - rep.realized_M;
        rep.worst_margin = std::max(rep.worst_margin, margin);
        if (margin > slack && rep.passed) {
            rep.passed = false;
            rep.first_failure = "|G| <= M fails at s = " + std::to_string(samples[i]);
        }
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t k = 0; k < samples.size(); ++k) {
            const double s1 = samples[i], s2 = samples[k];
            const double lhs = std::abs(s1 * s1 * g[i] - s2 * s2 * g[k]);
            const double rhs = rep.realized_M * std::abs(s1 - s2) *
                                   (std::abs(s1) + std::abs(s2)) +
                               rep.realized_M1 * s2 * s2 * std::abs(s1 - s2);
            rep.worst_margin = std::max(rep.worst_margin, lhs - rhs);
            if (lhs > rhs + slack && rep.passed) {
                rep.passed = false;
                rep.first_failure = "two-point bound fails at (s1, s2) = (" +
                                    std::to_string(s1) + ", " + std::to_string(s2) + ")";
            }
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Backward Gronwall checker on a uniform grid over [0, T].

struct GronwallResult {
    bool hypothesis_satisfied = true;
    bool bounded = true;                 // g <= bound pointwise (set when hypothesis holds)
    std::vector<double> bound;           // exponential-form bound (exact for constant data)
    std::vector<double> discrete_bound;  // product-form bound; exact fixed point of the
                                         // discrete hypothesis
    double worst_hypothesis_margin = 0.0;
    int first_violation = -1;
};

// Hypothesis g(t) <= a(t) + b(t) * int_t^T c g, the time integral taken by the
// right-endpoint rule. `bound` evaluates the lemma's formula
//   a(t) + b(t) int_t^T a c exp(int_t^u b c) du
// with exact per-subinterval exponential integration of piecewise-constant
// data, so the constant case returns alpha * e^{beta (T - t)} to roundoff.
// `discrete_bound` unrolls the discrete recursion; it satisfies the discrete
// hypothesis with equality and dominates g whenever the hypothesis holds.
inline GronwallResult backward_gronwall(const std::vector<double>& g,
                                        const std::vector<double>& a,
                                        const std::vector<double>& b,
                                        const std::vector<double>& c, double T) {
    const std::size_t n = g.size();
    require(n >= 2, "backward_gronwall: need at least two grid points");
    require(a.size() == n && b.size() == n && c.size() == n,
            "backward_gronwall: sequences must share one grid");
    require(T > 0.0, "backward_gronwall: horizon must be > 0");
    for (std::size_t i = 0; i < n; ++i)
        require(b[i] >= 0.0 && c[i] >= 0.0, "backward_gronwall: b and c must be >= 0");
    const double dt = T / static_cast<double>(n - 1);

    GronwallResult res;
    res.bound.assign(n, 0.0);
    res.discrete_bound.assign(n, 0.0);

    // Hypothesis check, right-endpoint quadrature of int_t^T c g:
    // cg_tail[i] = dt * sum_{j > i} c_j g_j.
    std::vector<double> cg_tail(n, 0.0);
    double tail = 0.0;
    for (std::size_t ii = n; ii-- > 0;) {
        cg_tail[ii] = tail;
        tail += dt * c[ii] * g[ii];
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double q = cg_tail[i];
        const double rhs = a[i] + b[i] * q;
        const double margin = g[i] - rhs;
        const double slack = 1e-9 * (std::abs(g[i]) + std::abs(rhs) + 1.0);
        res.worst_hypothesis_margin = std::max(res.worst_hypothesis_margin, margin);
        if (margin > slack && res.hypothesis_satisfied) {
            res.hypothesis_satisfied = false;
            res.first_violation = static_cast<int>(i);
        }
    }

    // Product-form bound: S_i = sum_{j>i} dt c_j a_j prod_{i<k<j} (1 + dt b_k c_k),
    // built by the recursion S_i = (1 + dt b_{i+1} c_{i+1}) S_{i+1} + dt c_{i+1} a_{i+1}.
    double s = 0.0;
    res.discrete_bound[n - 1] = a[n - 1];
    for (std::size_t ii = n - 1; ii-- > 0;) {
        s = (1.0 + dt * b[ii + 1] * c[ii + 1]) * s + dt * c[ii + 1] * a[ii + 1];
        res.discrete_bound[ii] = a[ii] + b[ii] * s;
    }

    // Exponential-form bound with per-subinterval closed-form integration.
    for (std::size_t i = 0; i < n; ++i) {
        double expo = 0.0;  // int_{t_i}^{t_{j-1}} b c, accumulated right-endpoint
        NeumaierSum integral;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double bc = b[j] * c[j];
            const double piece = (bc * dt > 1e-12)
                                     ? std::exp(expo) * (std::expm1(bc * dt)) / bc
                                     : std::exp(expo) * dt;
            integral.add(a[j] * c[j] * piece);
            expo += bc * dt;
        }
        res.bound[i] = a[i] + b[i] * integral.value();
    }

    if (res.hypothesis_satisfied) {
        for (std::size_t i = 0; i < n; ++i) {
            const double slack =
                1e-9 * (std::abs(g[i]) + std::abs(res.discrete_bound[i]) + 1.0);
            if (g[i] > res.discrete_bound[i] + slack || g[i] > res.bound[i] + slack) {
                res.bounded = false;
                break;
            }
        }
    } else {
        res.bounded = false;
    }
    return res;
}

// ---------------------------------------------------------------------------
// L^p -> L^inf extrapolation on a weighted finite sample.

struct LpLimitReport {
    std::vector<double> norms;  // one per requested p
    double max_abs = 0.0;
    double total_measure = 0.0;
    bool converged = true;  // final norm within tolerance of the max
};

// Norms are computed as max * (sum w (|v|/max)^p)^{1/p} to avoid overflow at
// large p. When the total measure is <= 1 the sequence increases towards
// max|v| and the report asserts the final entry lands within tolerance.
inline LpLimitReport lp_to_linf(const std::vector<double>& values,
                                const std::vector<double>& weights,
                                const std::vector<double>& p_list,
                                double tolerance = 0.02) {
    require(!values.empty(), "lp_to_linf: empty sample");
    require(values.size() == weights.size(), "lp_to_linf: values/weights mismatch");
    require(!p_list.empty(), "lp_to_linf: empty p list");
    for (std::size_t i = 1; i < p_list.size(); ++i)
        require(p_list[i] > p_list[i - 1], "lp_to_linf: p list must increase");
    require(p_list.back() >= 64.0, "lp_to_linf: largest p must be >= 64");

    LpLimitReport rep;
    NeumaierSum meas;
    for (double w : weights) {
        require(w >= 0.0, "lp_to_linf: negative weight");
        meas.add(w);
    }
    rep.total_measure = meas.value();
    require(rep.total_measure > 0.0, "lp_to_linf: total measure must be positive");

    for (double v : values) rep.max_abs = std::max(rep.max_abs, std::abs(v));
    for (double p : p_list) {
        if (rep.max_abs == 0.0) {
            rep.norms.push_back(0.0);
            continue;
        }
        NeumaierSum s;
        for (std::size_t i = 0; i < values.size(); ++i)
            s.add(weights[i] * std::pow(std::abs(values[i]) / rep.max_abs, p));
        rep.norms.push_back(rep.max_abs * std::pow(s.value(), 1.0 / p));
    }
    if (rep.total_measure <= 1.0 && rep.max_abs > 0.0) {
        for (std::size_t i = 1; i < rep.norms.size(); ++i)
            if (rep.norms[i] + 1e-12 * rep.max_abs < rep.norms[i - 1]) rep.converged = false;
        if (std::abs(rep.norms.back() - rep.max_abs) > tolerance * rep.max_abs)
            rep.converged = false;
    }
    return rep;
}

}  // namespace bsheat
