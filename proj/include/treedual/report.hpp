#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "treedual/oracles.hpp"
#include "treedual/scenario_io.hpp"
#include "treedual/solver.hpp"

namespace treedual {

/// 17 significant digits: enough to identify a double exactly, so the CSV and
/// JSON round-trip losslessly and repeated runs are byte-identical.
inline std::string format_float(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct RunConfig {
    std::vector<double> xs;
    SolverOptions options;
    std::string out_dir;
    bool write_consumption_paths = true;
};

struct RunOutcome {
    std::vector<Solution> solutions;
    bool all_certified = true;
    std::vector<std::string> files_written;
};

namespace report_detail {

inline void write_text(const std::string& path, const std::string& body,
                       std::vector<std::string>& written) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write output file: " + path);
    out << body;
    written.push_back(path);
}

} // namespace report_detail

/// Solves one x after another, writing summary.csv, per-run consumption-path
/// CSVs and a versioned results.json. Output is deterministic: fixed float
/// formatting, fixed row ordering, LF line endings.
inline RunOutcome run(const MarketScenario& s, UtilityFieldPtr field, const RunConfig& cfg) {
    namespace fs = std::filesystem;
    RunOutcome out;
    if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
    auto path_of = [&](const std::string& name) {
        return cfg.out_dir.empty() ? name : cfg.out_dir + "/" + name;
    };

    std::string summary = "x,y,primal,dual,gap,budget_slack,vi_worst\n";
    nlohmann::json results = nlohmann::json::array();

    for (std::size_t i = 0; i < cfg.xs.size(); ++i) {
        const double x = cfg.xs[i];
        Solution sol = solve(s, field, x, cfg.options);
        out.all_certified = out.all_certified && sol.certificates_ok;

        summary += format_float(x) + "," + format_float(sol.y) + "," + format_float(sol.primal) +
                   "," + format_float(sol.dual) + "," + format_float(sol.gap_abs) + "," +
                   format_float(sol.budget_slack) + "," + format_float(sol.vi_worst) + "\n";

        if (cfg.write_consumption_paths) {
            std::string body = "node,time,c_hat,density,wealth\n";
            for (NodeId n = 0; n < NodeId(s.tree.size()); ++n) {
                body += std::to_string(n) + "," + format_float(s.tree.time_of(n)) + "," +
                        format_float(sol.consumption_rate[std::size_t(n)]) + "," +
                        format_float(sol.density[std::size_t(n)]) + "," +
                        format_float(sol.wealth[std::size_t(n)]) + "\n";
            }
            report_detail::write_text(path_of("run_" + std::to_string(i) + ".csv"), body,
                                      out.files_written);
        }

        nlohmann::json rec;
        rec["format"] = "treedual/1";
        rec["x"] = format_float(x);
        rec["y"] = format_float(sol.y);
        rec["primal"] = format_float(sol.primal);
        rec["dual"] = format_float(sol.dual);
        rec["gap"] = format_float(sol.gap_abs);
        rec["budget_slack"] = format_float(sol.budget_slack);
        rec["vi_worst"] = format_float(sol.vi_worst);
        rec["endow_value"] = format_float(sol.endow_value);
        rec["fw_gap"] = format_float(sol.fw_gap);
        rec["dual_iterations"] = sol.dual_iterations;
        rec["y_evaluations"] = sol.y_evaluations;
        rec["certified"] = sol.certificates_ok;
        nlohmann::json q = nlohmann::json::array();
        for (double v : sol.q_hat) q.push_back(format_float(v));
        rec["q_hat"] = q;
        results.push_back(rec);

        out.solutions.push_back(std::move(sol));
    }

    report_detail::write_text(path_of("summary.csv"), summary, out.files_written);
    report_detail::write_text(path_of("results.json"), results.dump(2) + "\n", out.files_written);
    return out;
}

struct SweepConfig {
    std::vector<double> xs;      // may be empty
    std::vector<double> ys;      // may be empty
    SolverOptions options;
    std::string out_dir;
    double fd_step_rel = 1e-4;   // h = rel * max(1, |x|), central differences
};

struct SweepOutcome {
    bool u_concave = true;
    bool u_increasing = true;
    bool v_convex = true;
    bool v_decreasing = true;
    bool v_prime_nondecreasing = true;
    bool v_prime_matches_fd = true;
    std::vector<std::string> files_written;
};

/// Value-function tables for plotting: (x, U, U' by finite differences) and
/// (y, V, V' formula, V' finite differences), plus shape flags.
inline SweepOutcome sweep(const MarketScenario& s, UtilityFieldPtr field, const SweepConfig& cfg) {
    namespace fs = std::filesystem;
    if (cfg.xs.size() < 3 && cfg.ys.size() < 3)
        throw std::invalid_argument("sweep: need at least 3 grid points");
    SweepOutcome out;
    if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
    auto path_of = [&](const std::string& name) {
        return cfg.out_dir.empty() ? name : cfg.out_dir + "/" + name;
    };

    DualProblem prob(s, field);

    if (cfg.xs.size() >= 3) {
        std::string body = "x,primal,primal_slope_fd\n";
        std::vector<double> us, slopes;
        for (double x : cfg.xs) {
            Solution sol = solve(s, field, x, cfg.options);
            us.push_back(sol.primal);
            const double h = cfg.fd_step_rel * std::max(1.0, std::fabs(x));
            const double up = solve(s, field, x + h, cfg.options).primal;
            const double dn = solve(s, field, x - h, cfg.options).primal;
            slopes.push_back((up - dn) / (2.0 * h));
            body += format_float(x) + "," + format_float(sol.primal) + "," +
                    format_float(slopes.back()) + "\n";
        }
        for (std::size_t i = 0; i + 1 < cfg.xs.size(); ++i) {
            if (us[i + 1] <= us[i]) out.u_increasing = false;
            if (slopes[i + 1] >= slopes[i]) out.u_concave = false;
        }
        report_detail::write_text(path_of("sweep_x.csv"), body, out.files_written);
    }

    if (cfg.ys.size() >= 3) {
        std::string body = "y,dual,dual_slope_formula,dual_slope_fd\n";
        std::vector<double> vs, formulas;
        Vector warm = prob.interior_point();
        for (double y : cfg.ys) {
            auto r = solve_dual(prob, y, cfg.options, &warm);
            warm = r.q;
            const double formula = dual_derivative(prob, y, r.q);
            const double h = cfg.fd_step_rel * std::max(1.0, std::fabs(y));
            auto up = solve_dual(prob, y + h, cfg.options, &warm);
            auto dn = solve_dual(prob, y - h, cfg.options, &warm);
            const double fd = (up.value - dn.value) / (2.0 * h);
            vs.push_back(r.value);
            formulas.push_back(formula);
            if (std::fabs(fd - formula) > 1e-4 * std::max(1.0, std::fabs(formula)))
                out.v_prime_matches_fd = false;
            body += format_float(y) + "," + format_float(r.value) + "," + format_float(formula) +
                    "," + format_float(fd) + "\n";
        }
        for (std::size_t i = 0; i + 1 < cfg.ys.size(); ++i) {
            if (vs[i + 1] >= vs[i]) out.v_decreasing = false;
            if (formulas[i + 1] < formulas[i] - 1e-10) out.v_prime_nondecreasing = false;
        }
        for (std::size_t i = 0; i + 2 < cfg.ys.size(); ++i) {
            // midpoint convexity on consecutive triples of the grid
            const double lam = (cfg.ys[i + 2] - cfg.ys[i + 1]) / (cfg.ys[i + 2] - cfg.ys[i]);
            const double interp = lam * vs[i] + (1.0 - lam) * vs[i + 2];
            if (vs[i + 1] > interp + 1e-10 * (1.0 + std::fabs(interp))) out.v_convex = false;
        }
        report_detail::write_text(path_of("sweep_y.csv"), body, out.files_written);
    }

    nlohmann::json flags;
    flags["u_concave"] = out.u_concave;
    flags["u_increasing"] = out.u_increasing;
    flags["v_convex"] = out.v_convex;
    flags["v_decreasing"] = out.v_decreasing;
    flags["v_prime_nondecreasing"] = out.v_prime_nondecreasing;
    flags["v_prime_matches_fd"] = out.v_prime_matches_fd;
    report_detail::write_text(path_of("sweep_flags.json"), flags.dump(2) + "\n", out.files_written);
    return out;
}

} // namespace treedual
