#pragma once

// Experiment harness: a JSON config fully determines a run; outputs are a
// config echo, a summary.json with a machine-readable verdict, and CSV data
// files. Identical config + seed gives bitwise identical artifacts, so no
// timings or environment data land in the summary.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "expr.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace bsheat {

struct FieldSpec {
    enum class Kind { constant, formula, random };
    Kind kind = Kind::constant;
    double constant = 0.0;
    std::string formula;
    double amplitude = 0.0;
    std::uint64_t seed_offset = 0;
};

struct ExperimentConfig {
    std::string kind;
    // tree
    int levels = 8;
    double horizon = 1.0;
    bool recombining = false;
    int full_cap = 16;
    // grid
    int interior_points = 16;
    double length = 1.0;
    double control_lo = 0.3;
    double control_hi = 0.6;
    // data
    FieldSpec alpha, beta, terminal, source;
    std::vector<double> p_list{2.0};
    std::uint64_t seed = 1;
    int jobs = 1;
    // tolerances / thresholds
    double tol_y0 = 1e-6;
    double tol_martingale = 1e-11;
    double min_order = 0.9;
    double picard_tol = 1e-8;
    int max_iterations = 20000;
    // kind-specific
    std::vector<int> levels_list;
    std::vector<double> horizons;
    std::vector<double> amplitudes;
    std::string nonlinearity;
    int battery = 0;
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& field, const std::string& what) {
    throw config_error("config field " + field + ": " + what);
}

inline double json_number(const ordered_json& j, const std::string& field) {
    if (!j.is_number()) config_fail(field, "expected a number");
    return j.get<double>();
}

inline FieldSpec parse_field_spec(const ordered_json& j, const std::string& field) {
    FieldSpec spec;
    if (j.is_number()) {
        spec.kind = FieldSpec::Kind::constant;
        spec.constant = j.get<double>();
        return spec;
    }
    if (j.is_string()) {
        spec.kind = FieldSpec::Kind::formula;
        spec.formula = j.get<std::string>();
        Expr::parse(spec.formula, {"x", "t", "w"});  // parse now, fail early
        return spec;
    }
    if (j.is_object() && j.contains("random")) {
        const auto& r = j.at("random");
        spec.kind = FieldSpec::Kind::random;
        spec.amplitude = json_number(r.at("amplitude"), field + ".random.amplitude");
        if (spec.amplitude < 0.0) config_fail(field, "amplitude must be >= 0");
        if (r.contains("seed_offset"))
            spec.seed_offset = r.at("seed_offset").get<std::uint64_t>();
        return spec;
    }
    config_fail(field, "expected a number, a formula string, or {\"random\": {...}}");
}

inline double parse_p(const ordered_json& j, const std::string& field) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return INFINITY;
        config_fail(field, "only the string \"inf\" is accepted");
    }
    const double p = json_number(j, field);
    if (p < 2.0) config_fail(field, "p must be >= 2 (or \"inf\")");
    return p;
}

}  // namespace detail

inline ExperimentConfig parse_config(const ordered_json& j) {
    ExperimentConfig cfg;
    if (!j.contains("kind") || !j.at("kind").is_string())
        detail::config_fail("kind", "required string");
    cfg.kind = j.at("kind").get<std::string>();
    static const std::vector<std::string> kinds = {
        "solve", "ito-check", "estimates", "control", "semilinear", "convergence",
        "toolkit-props"};
    bool known = false;
    for (const auto& k : kinds) known = known || (k == cfg.kind);
    if (!known) detail::config_fail("kind", "unknown experiment kind '" + cfg.kind + "'");

    if (j.contains("tree")) {
        const auto& t = j.at("tree");
        if (t.contains("levels")) cfg.levels = t.at("levels").get<int>();
        if (t.contains("horizon"))
            cfg.horizon = detail::json_number(t.at("horizon"), "tree.horizon");
        if (t.contains("recombining")) cfg.recombining = t.at("recombining").get<bool>();
        if (t.contains("full_cap")) cfg.full_cap = t.at("full_cap").get<int>();
        if (cfg.levels < 1) detail::config_fail("tree.levels", "must be >= 1");
        if (cfg.horizon <= 0.0) detail::config_fail("tree.horizon", "must be > 0");
    }
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        if (g.contains("interior_points"))
            cfg.interior_points = g.at("interior_points").get<int>();
        if (g.contains("length"))
            cfg.length = detail::json_number(g.at("length"), "grid.length");
        if (g.contains("control_interval")) {
            const auto& ci = g.at("control_interval");
            if (!ci.is_array() || ci.size() != 2)
                detail::config_fail("grid.control_interval", "expected [a, b]");
            cfg.control_lo = detail::json_number(ci.at(0), "grid.control_interval[0]");
            cfg.control_hi = detail::json_number(ci.at(1), "grid.control_interval[1]");
        }
        if (cfg.interior_points < 2)
            detail::config_fail("grid.interior_points", "must be >= 2");
    }
    if (j.contains("coefficients")) {
        const auto& c = j.at("coefficients");
        if (c.contains("alpha"))
            cfg.alpha = detail::parse_field_spec(c.at("alpha"), "coefficients.alpha");
        if (c.contains("beta"))
            cfg.beta = detail::parse_field_spec(c.at("beta"), "coefficients.beta");
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        if (d.contains("terminal"))
            cfg.terminal = detail::parse_field_spec(d.at("terminal"), "data.terminal");
        if (d.contains("source"))
            cfg.source = detail::parse_field_spec(d.at("source"), "data.source");
    }
    if (j.contains("p")) cfg.p_list = {detail::parse_p(j.at("p"), "p")};
    if (j.contains("p_list")) {
        cfg.p_list.clear();
        for (std::size_t i = 0; i < j.at("p_list").size(); ++i)
            cfg.p_list.push_back(
                detail::parse_p(j.at("p_list").at(i), "p_list[" + std::to_string(i) + "]"));
        if (cfg.p_list.empty()) detail::config_fail("p_list", "must not be empty");
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("jobs")) cfg.jobs = j.at("jobs").get<int>();
    if (j.contains("tolerances")) {
        const auto& t = j.at("tolerances");
        if (t.contains("y0")) cfg.tol_y0 = detail::json_number(t.at("y0"), "tolerances.y0");
        if (t.contains("martingale"))
            cfg.tol_martingale =
                detail::json_number(t.at("martingale"), "tolerances.martingale");
        if (t.contains("min_order"))
            cfg.min_order = detail::json_number(t.at("min_order"), "tolerances.min_order");
        if (t.contains("picard"))
            cfg.picard_tol = detail::json_number(t.at("picard"), "tolerances.picard");
        if (t.contains("max_iterations"))
            cfg.max_iterations = t.at("max_iterations").get<int>();
    }
    if (j.contains("levels_list"))
        for (const auto& v : j.at("levels_list")) cfg.levels_list.push_back(v.get<int>());
    if (j.contains("horizons"))
        for (const auto& v : j.at("horizons"))
            cfg.horizons.push_back(detail::json_number(v, "horizons[]"));
    if (j.contains("amplitudes"))
        for (const auto& v : j.at("amplitudes"))
            cfg.amplitudes.push_back(detail::json_number(v, "amplitudes[]"));
    if (j.contains("nonlinearity")) {
        cfg.nonlinearity = j.at("nonlinearity").get<std::string>();
        Expr::parse(cfg.nonlinearity, {"y"});
    }
    if (j.contains("battery")) cfg.battery = j.at("battery").get<int>();
    return cfg;
}

namespace detail {

inline AdaptedField make_field(const FieldSpec& spec, const ScenarioTree& tree,
                               const Discretization& disc, int levels,
                               std::uint64_t seed, FieldKind role) {
    switch (spec.kind) {
        case FieldSpec::Kind::constant: {
            AdaptedField f = AdaptedField::zeros(tree, disc, levels);
            for (auto& lv : f.levels)
                for (auto& v : lv) v = spec.constant;
            return f;
        }
        case FieldSpec::Kind::formula: {
            const Expr e = Expr::parse(spec.formula, {"x", "t", "w"});
            return fill_field(tree, disc, levels, [&e](double t, double x, double w) {
                const double vars[3] = {x, t, w};
                return e.eval(vars);
            });
        }
        default:
            return generate_random_field(seed + spec.seed_offset, spec.amplitude, tree,
                                         disc, role);
    }
}

inline LevelField make_terminal(const FieldSpec& spec, const ScenarioTree& tree,
                                const Discretization& disc, std::uint64_t seed) {
    switch (spec.kind) {
        case FieldSpec::Kind::constant: {
            LevelField f = LevelField::zeros(tree, disc, tree.levels);
            for (auto& v : f.data) v = spec.constant;
            return f;
        }
        case FieldSpec::Kind::formula: {
            const Expr e = Expr::parse(spec.formula, {"x", "t", "w"});
            return fill_level(tree, disc, tree.levels, [&e](double t, double x, double w) {
                const double vars[3] = {x, t, w};
                return e.eval(vars);
            });
        }
        default:
            return generate_random_terminal(seed + spec.seed_offset, spec.amplitude, tree,
                                            disc);
    }
}

struct BuiltProblem {
    ScenarioTree tree;
    Discretization disc;
    CoefficientSet coeffs;
    ProblemData data;
};

inline BuiltProblem build_problem(const ExperimentConfig& cfg, std::uint64_t seed,
                                  int levels_override = 0, double horizon_override = 0.0) {
    BuiltProblem bp;
    const int levels = levels_override > 0 ? levels_override : cfg.levels;
    const double horizon = horizon_override > 0.0 ? horizon_override : cfg.horizon;
    bp.tree = build_tree(levels, horizon, cfg.recombining, cfg.full_cap);
    bp.disc = make_discretization(cfg.interior_points, cfg.length, cfg.control_lo,
                                  cfg.control_hi);
    bp.coeffs.alpha =
        make_field(cfg.alpha, bp.tree, bp.disc, levels, seed, FieldKind::coefficient);
    bp.coeffs.beta = make_field(cfg.beta, bp.tree, bp.disc, levels, seed * 2 + 1,
                                FieldKind::coefficient);
    bp.data.terminal = make_terminal(cfg.terminal, bp.tree, bp.disc, seed);
    bp.data.source = make_field(cfg.source, bp.tree, bp.disc, levels, seed,
                                FieldKind::source);
    return bp;
}

inline double fit_order(const std::vector<double>& dts, const std::vector<double>& err) {
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const auto n = static_cast<double>(dts.size());
    for (std::size_t i = 0; i < dts.size(); ++i) {
        const double x = std::log(dts[i]);
        const double y = std::log(std::max(err[i], 1e-300));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace detail

struct RunOutcome {
    bool passed = false;
    ordered_json summary;
};

inline RunOutcome run_experiment(const ordered_json& raw_config,
                                 const std::string& out_dir,
                                 std::uint64_t seed_override = 0, int jobs_override = 0);

namespace detail {

inline ordered_json run_solve(const ExperimentConfig& cfg, const std::string& out_dir,
                              bool& passed) {
    ordered_json j;
    const auto bp = build_problem(cfg, cfg.seed);
    SolveOptions opts;
    opts.jobs = cfg.jobs;
    const auto sol = solve_linear(bp.tree, bp.disc, bp.coeffs, bp.data, opts);
    write_text_file(out_dir + "/solution.csv", solution_csv(bp.tree, bp.disc, sol));
    j["max_step_residual"] = sol.max_step_residual;
    j["sup_abs_y"] = sol.y.sup_abs();
    NeumaierSum l2;
    const auto y0 = sol.y.at(0, 0);
    for (double v : y0) l2.add(v * v);
    j["y0_l2"] = std::sqrt(bp.disc.h * l2.value());
    passed = sol.y.finite() && sol.Y.finite() && sol.max_step_residual <= 1e-11;
    return j;
}

inline ordered_json run_ito_check(const ExperimentConfig& cfg, const std::string& out_dir,
                                  bool& passed) {
    ordered_json j;
    passed = true;
    if (cfg.battery > 0) {
        // martingale-law battery: E[ ito integral of p |y|^{p-2} y Y ] over
        // seeded full-tree runs, exact to roundoff
        require(!cfg.recombining, "ito-check battery needs a full tree");
        double worst = 0.0;
        ordered_json runs = ordered_json::array();
        for (int s = 0; s < cfg.battery; ++s) {
            const auto bp = build_problem(cfg, cfg.seed + static_cast<std::uint64_t>(s));
            SolveOptions opts;
            opts.jobs = cfg.jobs;
            const auto sol = solve_linear(bp.tree, bp.disc, bp.coeffs, bp.data, opts);
            for (double p : cfg.p_list) {
                std::vector<AdaptedRV> z;
                for (int n = 0; n < bp.tree.levels; ++n) {
                    AdaptedRV zn = AdaptedRV::zeros(bp.tree, n);
                    for (std::int64_t v = 0; v < bp.tree.node_count(n); ++v) {
                        const auto y = sol.y.at(n, v);
                        const auto Y = sol.Y.at(n, v);
                        NeumaierSum acc;
                        for (int k = 0; k < bp.disc.interior_points; ++k) {
                            const auto ku = static_cast<std::size_t>(k);
                            acc.add(power_family(p, y[ku], 1) * Y[ku]);
                        }
                        zn.values[static_cast<std::size_t>(v)] = bp.disc.h * acc.value();
                    }
                    z.push_back(zn);
                }
                const double e = expectation(ito_integral(z, bp.tree), bp.tree);
                worst = std::max(worst, std::abs(e));
                ordered_json rec;
                rec["seed"] = cfg.seed + static_cast<std::uint64_t>(s);
                rec["p"] = p;
                rec["stochastic_expectation"] = e;
                runs.push_back(rec);
            }
        }
        j["runs"] = runs;
        j["worst_abs_expectation"] = worst;
        passed = worst <= cfg.tol_martingale;
        return j;
    }

    std::vector<int> levels = cfg.levels_list;
    if (levels.empty()) levels = {8, 16, 32};
    std::string csv = "levels,p,residual_expectation\n";
    ordered_json fits = ordered_json::array();
    for (double p : cfg.p_list) {
        std::vector<double> dts, errs;
        for (int N : levels) {
            const auto bp = build_problem(cfg, cfg.seed, N);
            SolveOptions opts;
            opts.jobs = cfg.jobs;
            const auto sol = solve_linear(bp.tree, bp.disc, bp.coeffs, bp.data, opts);
            const auto rep = ito_residual(bp.tree, bp.disc, sol, bp.coeffs, bp.data, p, 0);
            dts.push_back(bp.tree.dt);
            errs.push_back(std::abs(rep.expectation));
            passed = passed && rep.stochastic_expectation == 0.0;
            csv += std::to_string(N) + "," + format_double(p) + "," +
                   format_double(rep.expectation) + "\n";
        }
        const double order = fit_order(dts, errs);
        ordered_json f;
        f["p"] = p;
        f["fitted_order"] = order;
        fits.push_back(f);
        passed = passed && order >= cfg.min_order;
    }
    write_text_file(out_dir + "/residuals.csv", csv);
    j["fits"] = fits;
    j["min_order_required"] = cfg.min_order;
    return j;
}

inline ordered_json run_estimates(const ExperimentConfig& cfg, const std::string& out_dir,
                                  bool& passed) {
    ordered_json j;
    passed = true;
    const int runs = std::max(1, cfg.battery);
    ordered_json battery = ordered_json::array();
    double worst_energy = 0.0, worst_lp = 0.0, worst_linf_ratio = 0.0;
    for (int s = 0; s < runs; ++s) {
        const auto bp = build_problem(cfg, cfg.seed + static_cast<std::uint64_t>(s));
        SolveOptions opts;
        opts.jobs = cfg.jobs;
        const auto sol = solve_linear(bp.tree, bp.disc, bp.coeffs, bp.data, opts);
        ordered_json rec;
        rec["seed"] = cfg.seed + static_cast<std::uint64_t>(s);
        const auto energy = energy_report(bp.tree, bp.disc, sol, bp.data, bp.coeffs);
        rec["energy"] = report_json(energy);
        passed = passed && energy.passed;
        worst_energy = std::max(worst_energy, energy.implied_constant);
        ordered_json lps = ordered_json::array();
        for (double p : cfg.p_list) {
            if (std::isinf(p)) continue;
            const auto lp = lp_report(bp.tree, bp.disc, sol, bp.data, bp.coeffs, p);
            lps.push_back(report_json(lp));
            passed = passed && lp.passed;
            worst_lp = std::max(worst_lp, lp.implied_constant);
        }
        rec["lp"] = lps;
        const auto linf = linf_report(bp.tree, bp.disc, sol, bp.data, bp.coeffs);
        rec["linf"] = report_json(linf);
        passed = passed && linf.passed;
        worst_linf_ratio = std::max(worst_linf_ratio, linf.implied_constant);
        battery.push_back(rec);
        if (s == 0)
            write_text_file(out_dir + "/solution.csv", solution_csv(bp.tree, bp.disc, sol));
    }
    j["battery"] = battery;
    j["worst_energy_constant"] = worst_energy;
    j["worst_lp_constant"] = worst_lp;
    j["worst_linf_ratio"] = worst_linf_ratio;
    return j;
}

inline ordered_json run_control(const ExperimentConfig& cfg, const std::string& out_dir,
                                bool& passed) {
    ordered_json j;
    const double p = cfg.p_list.front();
    if (!cfg.horizons.empty()) {
        if (cfg.alpha.kind == FieldSpec::Kind::random ||
            cfg.terminal.kind == FieldSpec::Kind::random)
            config_fail("horizons", "the cost study needs formula or constant data");
        const auto disc = make_discretization(cfg.interior_points, cfg.length,
                                              cfg.control_lo, cfg.control_hi);
        auto field_fn = [](const FieldSpec& spec) {
            if (spec.kind == FieldSpec::Kind::constant) {
                const double c = spec.constant;
                return std::function<double(double, double, double)>(
                    [c](double, double, double) { return c; });
            }
            const Expr e = Expr::parse(spec.formula, {"x", "t", "w"});
            return std::function<double(double, double, double)>(
                [e](double t, double x, double w) {
                    const double vars[3] = {x, t, w};
                    return e.eval(vars);
                });
        };
        SynthesisOptions opts;
        opts.y0_tol = cfg.tol_y0;
        opts.max_iterations = cfg.max_iterations;
        opts.jobs = cfg.jobs;
        const auto study =
            cost_blowup_study(disc, cfg.levels, cfg.recombining, p, field_fn(cfg.alpha),
                              field_fn(cfg.terminal), cfg.horizons, opts);
        ordered_json s;
        s["horizons"] = study.horizons;
        s["costs"] = study.costs;
        s["all_converged"] = study.all_converged;
        s["strictly_decreasing_in_T"] = study.strictly_decreasing_in_T;
        s["degenerate"] = study.degenerate;
        s["fitted_slope"] = study.fitted_slope;
        j["cost_study"] = s;
        std::string csv = "horizon,cost\n";
        for (std::size_t i = 0; i < study.horizons.size(); ++i)
            csv += format_double(study.horizons[i]) + "," +
                   format_double(study.costs[i]) + "\n";
        write_text_file(out_dir + "/cost_study.csv", csv);
        passed = study.all_converged && !study.degenerate &&
                 study.strictly_decreasing_in_T && study.fitted_slope > 0.0;
        return j;
    }
    const auto bp = build_problem(cfg, cfg.seed);
    const auto cp = make_control_problem(bp.tree, bp.disc, bp.coeffs, bp.data.terminal, p);
    SynthesisOptions opts;
    opts.y0_tol = cfg.tol_y0;
    opts.max_iterations = cfg.max_iterations;
    opts.jobs = cfg.jobs;
    const auto result = synthesize_control(bp.tree, bp.disc, cp, opts);
    const auto ver = verify_control(bp.tree, bp.disc, cp, result, 10,
                                    static_cast<unsigned>(cfg.seed));
    write_text_file(out_dir + "/control.csv", control_csv(bp.tree, bp.disc, result.h));
    j = control_json(result, ver);
    passed = result.converged && ver.support_clean && ver.y0_residual <= cfg.tol_y0 &&
             ver.product_identity_defect <= 1e-10;
    return j;
}

inline ordered_json run_semilinear(const ExperimentConfig& cfg, const std::string& out_dir,
                                   bool& passed) {
    ordered_json j;
    if (cfg.nonlinearity.empty()) config_fail("nonlinearity", "required for semilinear");
    const Expr fe = Expr::parse(cfg.nonlinearity, {"y"});
    const auto f = make_nonlinearity(
        [fe](double s) {
            const double vars[1] = {s};
            return fe.eval(vars);
        },
        -4.0, 4.0);
    const auto bp = build_problem(cfg, cfg.seed);
    PicardOptions opts;
    opts.tol = cfg.picard_tol;
    opts.max_iterations = std::min(cfg.max_iterations, 500);
    opts.jobs = cfg.jobs;
    const double p = cfg.p_list.front();
    if (!cfg.amplitudes.empty()) {
        const auto probe = smallness_probe(bp.tree, bp.disc, bp.coeffs, f,
                                           bp.data.terminal, cfg.amplitudes, p, opts);
        ordered_json records = ordered_json::array();
        bool monotone = true;
        double prev_ratio = 0.0;
        for (const auto& rec : probe.records) {
            ordered_json r;
            r["amplitude"] = rec.amplitude;
            r["converged"] = rec.converged;
            r["diverged"] = rec.diverged;
            r["worst_ratio"] = rec.worst_ratio;
            r["iterations"] = rec.iterations;
            records.push_back(r);
            if (rec.converged) {
                if (rec.worst_ratio < prev_ratio - 1e-12) monotone = false;
                prev_ratio = rec.worst_ratio;
            }
        }
        j["ladder"] = records;
        j["largest_contracting"] = probe.largest_contracting;
        j["no_failure_in_ladder"] = probe.no_failure_in_ladder;
        j["smallest_diverging"] = probe.smallest_diverging;
        j["ratios_monotone"] = monotone;
        passed = !probe.records.empty() && probe.records.front().converged && monotone;
        return j;
    }
    const auto res = picard_solve(bp.tree, bp.disc, bp.coeffs, f, bp.data.terminal, p, opts);
    write_text_file(out_dir + "/history.csv", picard_history_csv(res.history));
    write_text_file(out_dir + "/solution.csv", solution_csv(bp.tree, bp.disc, res.solution));
    j = picard_json(res);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<SpatialVector> tvs;
    for (int k = 0; k < 5; ++k) {
        SpatialVector tv(static_cast<std::size_t>(cfg.interior_points));
        for (auto& v : tv) v = u(rng);
        tvs.push_back(tv);
    }
    const double resid = verify_semilinear(bp.tree, bp.disc, res.solution, f, bp.coeffs,
                                           bp.data.terminal, tvs);
    j["weak_residual"] = resid;
    passed = res.converged && !res.diverged;
    return j;
}

inline ordered_json run_convergence(const ExperimentConfig& cfg, const std::string& out_dir,
                                    bool& passed) {
    // manufactured-solution exactness: the scheme reproduces pairs affine in
    // W with a time-constant profile, so errors sit at roundoff for every N
    ordered_json j;
    passed = true;
    std::vector<int> levels = cfg.levels_list;
    if (levels.empty()) levels = {cfg.levels};
    std::string csv = "levels,max_error_y,max_error_Y\n";
    ordered_json rows = ordered_json::array();
    for (int N : levels) {
        const auto tree = build_tree(N, cfg.horizon, cfg.recombining, cfg.full_cap);
        const auto disc = make_discretization(cfg.interior_points, cfg.length,
                                              cfg.control_lo, cfg.control_hi);
        CoefficientSet coeffs;
        coeffs.alpha =
            make_field(cfg.alpha, tree, disc, N, cfg.seed, FieldKind::coefficient);
        coeffs.beta =
            make_field(cfg.beta, tree, disc, N, cfg.seed * 2 + 1, FieldKind::coefficient);
        const double a = 2.0 * uniform_pm1(cfg.seed, 101, 0, 0);
        const double b = 2.0 * uniform_pm1(cfg.seed, 102, 0, 0);
        const SpatialVector profile = disc.sine_mode(1);
        const SpatialVector lap_profile = apply_laplacian(disc, profile);
        AdaptedField y_exact = AdaptedField::zeros(tree, disc, N + 1);
        ProblemData data = zero_data(tree, disc);
        for (int n = 0; n <= N; ++n)
            for (std::int64_t v = 0; v < tree.node_count(n); ++v) {
                const double w = tree.brownian_value(n, v);
                auto y = y_exact.at(n, v);
                for (int k = 0; k < disc.interior_points; ++k)
                    y[static_cast<std::size_t>(k)] =
                        (a + b * w) * profile[static_cast<std::size_t>(k)];
                if (n == N) continue;
                auto F = data.source.at(n, v);
                const auto al = coeffs.alpha.at(n, v);
                const auto be = coeffs.beta.at(n, v);
                for (int k = 0; k < disc.interior_points; ++k) {
                    const auto ku = static_cast<std::size_t>(k);
                    F[ku] = -(a + b * w) * lap_profile[ku] - al[ku] * y[ku] -
                            be[ku] * (b * profile[ku]);
                }
            }
        data.terminal.data = y_exact.levels[static_cast<std::size_t>(N)];
        SolveOptions opts;
        opts.jobs = cfg.jobs;
        const auto sol = solve_linear(tree, disc, coeffs, data, opts);
        double ey = 0.0, eY = 0.0;
        for (int n = 0; n <= N; ++n)
            for (std::int64_t v = 0; v < tree.node_count(n); ++v) {
                const auto got = sol.y.at(n, v);
                const auto want = y_exact.at(n, v);
                for (int k = 0; k < disc.interior_points; ++k)
                    ey = std::max(ey, std::abs(got[static_cast<std::size_t>(k)] -
                                               want[static_cast<std::size_t>(k)]));
                if (n == N) continue;
                const auto gY = sol.Y.at(n, v);
                for (int k = 0; k < disc.interior_points; ++k)
                    eY = std::max(eY, std::abs(gY[static_cast<std::size_t>(k)] -
                                               b * profile[static_cast<std::size_t>(k)]));
            }
        csv += std::to_string(N) + "," + format_double(ey) + "," + format_double(eY) + "\n";
        ordered_json row;
        row["levels"] = N;
        row["max_error_y"] = ey;
        row["max_error_Y"] = eY;
        rows.push_back(row);
        passed = passed && ey <= 1e-10 && eY <= 1e-10;
    }
    write_text_file(out_dir + "/errors.csv", csv);
    j["rows"] = rows;
    return j;
}

inline ordered_json run_toolkit_props(const ExperimentConfig& cfg,
                                      const std::string& /*out_dir*/, bool& passed) {
    ordered_json j;
    passed = true;
    std::mt19937_64 rng(cfg.seed);

    // truncation family inequalities on random (r, n, p) triples
    {
        std::uniform_real_distribution<double> un(0.25, 10.0), up(2.0, 8.0),
            ur(-30.0, 30.0);
        double worst = -INFINITY;
        bool ok = true;
        for (int i = 0; i < 10000; ++i) {
            const auto fam = make_truncation(un(rng), up(rng));
            const auto rep = check_phi_properties(fam, {ur(rng)});
            ok = ok && rep.passed;
            worst = std::max(worst, rep.worst_margin);
        }
        j["phi_inequalities_passed"] = ok;
        j["phi_worst_margin"] = worst;
        passed = passed && ok;
    }
    // C^2 matching by central differences
    {
        std::uniform_real_distribution<double> un(0.5, 5.0), up(2.0, 6.0), ur(-8.0, 8.0);
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const auto fam = make_truncation(un(rng), up(rng));
            const double r = ur(rng);
            if (std::abs(std::abs(r) - fam.n) < 1e-3) continue;
            const double e = 1e-6 * std::max(1.0, std::abs(r));
            const double d1 = (phi(fam, r + e, 0) - phi(fam, r - e, 0)) / (2 * e);
            worst = std::max(worst, std::abs(d1 - phi(fam, r, 1)) /
                                        std::max(1.0, std::abs(phi(fam, r, 1))));
        }
        j["phi_c2_worst_relative"] = worst;
        passed = passed && worst <= 1e-6;
    }
    // pointwise limits once n > |r|
    {
        bool exact = true;
        for (double n : {8.0, 16.0, 32.0}) {
            const auto fam = make_truncation(n, 3.0);
            exact = exact && phi(fam, 7.0, 0) == power_family(3.0, 7.0, 0) &&
                    phi(fam, 7.0, 1) == power_family(3.0, 7.0, 1) &&
                    phi(fam, 7.0, 2) == power_family(3.0, 7.0, 2);
        }
        j["phi_limits_exact"] = exact;
        passed = passed && exact;
    }
    // Taylor identity across the f family (analytic derivatives: the 1e-8
    // bound is the quadrature error; finite differences sit near 1e-6 and
    // are checked separately at their own accuracy)
    {
        struct Member {
            std::function<double(double)> f, f1, f2;
        };
        std::vector<Member> family = {
            {[](double s) { return s * s - 2.0 * s; },
             [](double s) { return 2.0 * s - 2.0; }, [](double) { return 2.0; }},
            {[](double s) { return s * s * s + 0.5 * s * s; },
             [](double s) { return 3.0 * s * s + s; },
             [](double s) { return 6.0 * s + 1.0; }},
            {[](double s) { return std::pow(s, 5) + std::pow(s, 3); },
             [](double s) { return 5.0 * std::pow(s, 4) + 3.0 * s * s; },
             [](double s) { return 20.0 * std::pow(s, 3) + 6.0 * s; }},
            {[](double s) { return std::sin(s); },
             [](double s) { return std::cos(s); },
             [](double s) { return -std::sin(s); }},
            {[](double s) { return std::exp(s) - 1.0; },
             [](double s) { return std::exp(s); },
             [](double s) { return std::exp(s); }}};
        std::uniform_real_distribution<double> us(-1.5, 1.5);
        double worst = 0.0, worst_fd = 0.0;
        for (const auto& m : family) {
            auto spec = make_nonlinearity(m.f, -2.0, 2.0);
            auto fd_spec = spec;
            spec.f_prime = m.f1;
            spec.f_second = m.f2;
            const double fp0 = spec.d1(0.0);
            const double fd_fp0 = fd_spec.d1(0.0);
            for (int i = 0; i < 40; ++i) {
                const double s = us(rng);
                worst = std::max(worst, std::abs(m.f(s) - fp0 * s -
                                                 s * s * nonlinearity_G(spec, s)));
                worst_fd = std::max(worst_fd,
                                    std::abs(m.f(s) - fd_fp0 * s -
                                             s * s * nonlinearity_G(fd_spec, s)));
            }
        }
        j["taylor_identity_worst"] = worst;
        j["taylor_identity_fd_worst"] = worst_fd;
        passed = passed && worst <= 1e-8 && worst_fd <= 1e-5;
    }
    // backward Gronwall, constant case + fixed point of the product bound
    {
        const int n = 200;
        const double T = 1.0, alpha = 0.8, beta = 1.3;
        std::vector<double> g(n, alpha), a(n, alpha), bb(n, beta), c(n, 1.0);
        const auto res = backward_gronwall(g, a, bb, c, T);
        double worst = 0.0;
        for (int i = 0; i < n; ++i) {
            const double t = T * i / (n - 1);
            const double want = alpha * std::exp(beta * (T - t));
            worst = std::max(worst,
                             std::abs(res.bound[static_cast<std::size_t>(i)] - want) / want);
        }
        const auto refed = backward_gronwall(res.discrete_bound, a, bb, c, T);
        j["gronwall_constant_case_rel_error"] = worst;
        j["gronwall_fixed_point"] = refed.hypothesis_satisfied && refed.bounded;
        passed = passed && res.hypothesis_satisfied && res.bounded && worst <= 1e-6 &&
                 refed.hypothesis_satisfied;
    }
    // L^p -> L^inf on the two-atom example
    {
        const auto rep = lp_to_linf({1.0, 2.0}, {0.5, 0.5}, {2.0, 8.0, 64.0});
        j["lp_to_linf_p64"] = rep.norms.back();
        j["lp_to_linf_converged"] = rep.converged;
        passed = passed && rep.converged && std::abs(rep.norms.back() - 2.0) <= 0.011 * 2.0;
    }
    return j;
}

}  // namespace detail

inline RunOutcome run_experiment(const ordered_json& raw_config, const std::string& out_dir,
                                 std::uint64_t seed_override, int jobs_override) {
    ExperimentConfig cfg = parse_config(raw_config);
    if (seed_override != 0) cfg.seed = seed_override;
    if (jobs_override > 0) cfg.jobs = jobs_override;

    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir + "/config.json", raw_config.dump(2) + "\n");

    RunOutcome outcome;
    ordered_json& j = outcome.summary;
    j["kind"] = cfg.kind;
    j["seed"] = cfg.seed;
    bool passed = false;
    ordered_json body;
    if (cfg.kind == "solve") body = detail::run_solve(cfg, out_dir, passed);
    else if (cfg.kind == "ito-check") body = detail::run_ito_check(cfg, out_dir, passed);
    else if (cfg.kind == "estimates") body = detail::run_estimates(cfg, out_dir, passed);
    else if (cfg.kind == "control") body = detail::run_control(cfg, out_dir, passed);
    else if (cfg.kind == "semilinear") body = detail::run_semilinear(cfg, out_dir, passed);
    else if (cfg.kind == "convergence") body = detail::run_convergence(cfg, out_dir, passed);
    else body = detail::run_toolkit_props(cfg, out_dir, passed);
    j["result"] = body;
    j["verdict"] = passed ? "pass" : "fail";
    outcome.passed = passed;
    write_text_file(out_dir + "/summary.json", j.dump(2) + "\n");
    return outcome;
}

}  // namespace bsheat
