#pragma once

// Serialization: columnar CSV (comma separated, '.' decimal, LF endings,
// header row) and JSON summaries with stable key order. Doubles go through
// std::to_chars, the shortest round-trip form, independent of locale.

#include <charconv>
#include <fstream>
#include <string>
#include <system_error>

#include <json.hpp>

#include "control.hpp"
#include "reports.hpp"
#include "semilinear.hpp"

namespace bsheat {

using ordered_json = nlohmann::ordered_json;

inline std::string format_double(double v) {
    char buf[40];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, ptr);
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open " + path + " for writing");
    out << content;
    if (!out) throw config_error("failed writing " + path);
}

// (level, node, grid_index, y, Y); Y is empty on the terminal level, where
// the scheme defines no value.
inline std::string solution_csv(const ScenarioTree& tree, const Discretization& disc,
                                const BSPDESolution& sol) {
    std::string out = "level,node,grid_index,y,Y\n";
    for (int n = 0; n <= tree.levels; ++n)
        for (std::int64_t v = 0; v < tree.node_count(n); ++v) {
            const auto y = sol.y.at(n, v);
            for (int j = 0; j < disc.interior_points; ++j) {
                out += std::to_string(n);
                out += ',';
                out += std::to_string(v);
                out += ',';
                out += std::to_string(j);
                out += ',';
                out += format_double(y[static_cast<std::size_t>(j)]);
                out += ',';
                if (n < tree.levels)
                    out += format_double(sol.Y.at(n, v)[static_cast<std::size_t>(j)]);
                out += '\n';
            }
        }
    return out;
}

inline std::string control_csv(const ScenarioTree& tree, const Discretization& disc,
                               const AdaptedField& h) {
    std::string out = "level,node,grid_index,h\n";
    for (int n = 0; n < tree.levels; ++n)
        for (std::int64_t v = 0; v < tree.node_count(n); ++v) {
            const auto row = h.at(n, v);
            for (int j = 0; j < disc.interior_points; ++j) {
                out += std::to_string(n);
                out += ',';
                out += std::to_string(v);
                out += ',';
                out += std::to_string(j);
                out += ',';
                out += format_double(row[static_cast<std::size_t>(j)]);
                out += '\n';
            }
        }
    return out;
}

inline std::string picard_history_csv(const std::vector<PicardStep>& history) {
    std::string out = "k,diff_sup,diff_yp,ratio,sup_norm,yp_norm\n";
    for (const auto& s : history) {
        out += std::to_string(s.k);
        out += ',';
        out += format_double(s.diff_sup);
        out += ',';
        out += format_double(s.diff_yp);
        out += ',';
        out += format_double(s.ratio);
        out += ',';
        out += format_double(s.sup_norm);
        out += ',';
        out += format_double(s.yp_norm);
        out += '\n';
    }
    return out;
}

inline ordered_json report_json(const EstimateReport& rep) {
    ordered_json j;
    j["name"] = rep.name;
    j["lhs"] = rep.lhs;
    j["rhs"] = rep.rhs;
    j["implied_constant"] = rep.implied_constant;
    j["margin"] = rep.margin;
    j["passed"] = rep.passed;
    ordered_json terms;
    for (const auto& [k, v] : rep.terms) terms[k] = v;
    j["terms"] = terms;
    return j;
}

inline ordered_json control_json(const ControlResult& res,
                                 const ControlVerification& ver) {
    ordered_json j;
    j["method"] = res.method;
    j["converged"] = res.converged;
    j["iterations"] = res.iterations;
    j["cost_p"] = res.cost_p;
    j["y0_residual"] = res.y0_residual;
    j["duality_gap"] = res.duality_gap;
    j["verify"] = {{"y0_residual", ver.y0_residual},
                   {"product_identity_defect", ver.product_identity_defect},
                   {"duality_gap", ver.duality_gap},
                   {"support_clean", ver.support_clean}};
    return j;
}

inline ordered_json picard_json(const PicardResult& res) {
    ordered_json j;
    j["converged"] = res.converged;
    j["diverged"] = res.diverged;
    j["iterations"] = res.iterations;
    if (!res.history.empty()) {
        j["final_diff_sup"] = res.history.back().diff_sup;
        j["final_sup_norm"] = res.history.back().sup_norm;
        j["final_yp_norm"] = res.history.back().yp_norm;
        double worst = 0.0;
        for (const auto& s : res.history)
            if (s.k >= 3) worst = std::max(worst, s.ratio);
        j["worst_ratio"] = worst;
    }
    return j;
}

}  // namespace bsheat
