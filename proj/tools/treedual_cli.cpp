// Command-line front end: solve / sweep / check / oracle / elasticity over
// scenario files or built-in scenario builders.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "treedual/oracles.hpp"
#include "treedual/report.hpp"
#include "treedual/scenario_io.hpp"
#include "treedual/scenarios.hpp"
#include "treedual/solver.hpp"
#include "treedual/utility_analysis.hpp"

namespace {

using namespace treedual;

// exit codes: 1 usage (CLI11), 2 scenario parse, 3 validation, 4 arbitrage,
// 5 dual solve, 6 y-match, 7 recovery, 8 certificates, 9 internal
constexpr int kExitParse = 2;
constexpr int kExitCertificates = 8;

struct ScenarioArgs {
    std::string scenario_path;
    std::string builder;
    std::string utility = "log";
    double u = 2.0, d = 0.5, p = 0.5, s0 = 1.0, rate = 1.0;
    int periods = 1;
    unsigned long long seed = 1;
};

void add_scenario_options(CLI::App* cmd, ScenarioArgs& args) {
    cmd->add_option("--scenario", args.scenario_path, "scenario file (JSON document, .scn)");
    cmd->add_option("--builder", args.builder,
                    "built-in scenario: complete_binomial | no_short_sale | lakner_slud | random");
    cmd->add_option("--utility", args.utility,
                    "utility for built scenarios: log | power:<alpha> | discounted:<beta>:<log|power:a>");
    cmd->add_option("--u", args.u, "binomial up factor");
    cmd->add_option("--d", args.d, "binomial down factor");
    cmd->add_option("--p", args.p, "up probability / first-branch probability");
    cmd->add_option("--s0", args.s0, "initial price");
    cmd->add_option("--rate", args.rate, "endowment rate (lakner_slud)");
    cmd->add_option("--periods", args.periods, "number of periods");
    cmd->add_option("--seed", args.seed, "seed for the random builder");
}

UtilityFieldPtr parse_utility_tag(const std::string& tag, const std::vector<double>& grid) {
    std::stringstream ss(tag);
    std::string head;
    std::getline(ss, head, ':');
    if (head == "log") return std::make_shared<TimeInvariantField>(std::make_shared<LogUtility>());
    if (head == "power") {
        std::string a;
        std::getline(ss, a, ':');
        return std::make_shared<TimeInvariantField>(
            std::make_shared<PowerUtility>(a.empty() ? 0.5 : std::stod(a)));
    }
    if (head == "discounted") {
        std::string b, inner, ia;
        std::getline(ss, b, ':');
        std::getline(ss, inner, ':');
        std::getline(ss, ia, ':');
        std::shared_ptr<ScalarUtility> base;
        if (inner.empty() || inner == "log") base = std::make_shared<LogUtility>();
        else base = std::make_shared<PowerUtility>(ia.empty() ? 0.5 : std::stod(ia));
        return std::make_shared<DiscountedField>(
            DiscountedField::exponential(std::move(base), b.empty() ? 0.1 : std::stod(b), grid));
    }
    throw ScenarioParseError("unknown utility tag: " + tag);
}

LoadedScenario resolve_scenario(const ScenarioArgs& args) {
    if (!args.scenario_path.empty()) return load_scenario(args.scenario_path);
    if (args.builder.empty())
        throw ScenarioParseError("either --scenario or --builder is required");

    LoadedScenario out;
    if (args.builder == "complete_binomial") {
        out.scenario = build_complete_binomial(args.u, args.d, args.p, args.periods, args.s0);
    } else if (args.builder == "no_short_sale") {
        out.scenario = build_no_short_sale(args.u, args.d, args.p, args.periods, args.s0);
    } else if (args.builder == "lakner_slud") {
        out.scenario = build_lakner_slud_constant(args.rate, args.p, std::max(args.periods, 2));
    } else if (args.builder == "random") {
        RandomStream rs(args.seed);
        out.scenario = build_random_scenario(rs);
    } else {
        throw ScenarioParseError("unknown builder: " + args.builder);
    }
    out.field = parse_utility_tag(args.utility, out.scenario.tree.time_grid());
    out.utility_spec = args.utility;
    return out;
}

std::vector<double> parse_grid(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stod(item));
    return out;
}

int exit_code_for(const SolverError& e) { return int(e.stage()); }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"scenario-tree consumption/investment duality solver"};
    app.require_subcommand(1);

    ScenarioArgs sargs;
    std::string out_dir = ".";
    double x = 1.0;
    std::string x_list, x_grid, y_grid;
    double tol = 0.0;
    std::string plan_path;
    double x_max = 1e6;
    std::string gamma_list;

    auto* c_solve = app.add_subcommand("solve", "solve for one or more initial wealths");
    add_scenario_options(c_solve, sargs);
    c_solve->add_option("--x", x_list, "initial wealth(s), comma separated");
    c_solve->add_option("--tol", tol, "optimization tolerance override");
    c_solve->add_option("--out", out_dir, "output directory");

    auto* c_sweep = app.add_subcommand("sweep", "value-function tables over x and/or y grids");
    add_scenario_options(c_sweep, sargs);
    c_sweep->add_option("--x-grid", x_grid, "x grid, comma separated (>= 3 points)");
    c_sweep->add_option("--y-grid", y_grid, "y grid, comma separated (>= 3 points)");
    c_sweep->add_option("--tol", tol, "optimization tolerance override");
    c_sweep->add_option("--out", out_dir, "output directory");

    auto* c_check = app.add_subcommand("check", "certify a provided consumption plan");
    add_scenario_options(c_check, sargs);
    c_check->add_option("--plan", plan_path, "plan file: JSON with \"rate\" or \"cumulative\" array")
        ->required();
    c_check->add_option("--x", x, "initial wealth financing the plan");

    auto* c_oracle = app.add_subcommand("oracle", "brute-force primal referee value");
    add_scenario_options(c_oracle, sargs);
    c_oracle->add_option("--x", x, "initial wealth");

    auto* c_elast = app.add_subcommand("elasticity", "asymptotic-elasticity report");
    add_scenario_options(c_elast, sargs);
    c_elast->add_option("--x-max", x_max, "grid upper end");
    c_elast->add_option("--gamma", gamma_list, "candidate gammas, comma separated");
    c_elast->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        LoadedScenario loaded = resolve_scenario(sargs);
        SolverOptions opts;
        if (tol > 0.0) {
            opts.tol_opt = tol;
            opts.y_match_tol = tol;
        }

        if (c_solve->parsed()) {
            RunConfig cfg;
            cfg.xs = x_list.empty() ? std::vector<double>{1.0} : parse_grid(x_list);
            cfg.options = opts;
            cfg.out_dir = out_dir;
            auto outcome = run(loaded.scenario, loaded.field, cfg);
            for (std::size_t i = 0; i < outcome.solutions.size(); ++i) {
                const auto& s = outcome.solutions[i];
                std::printf("x=%s  y=%s  primal=%s  dual=%s  gap=%.3e  certified=%s\n",
                            format_float(cfg.xs[i]).c_str(), format_float(s.y).c_str(),
                            format_float(s.primal).c_str(), format_float(s.dual).c_str(), s.gap_abs,
                            s.certificates_ok ? "yes" : "no");
            }
            std::printf("wrote %zu file(s) under %s\n", outcome.files_written.size(), out_dir.c_str());
            return outcome.all_certified ? 0 : kExitCertificates;
        }

        if (c_sweep->parsed()) {
            SweepConfig cfg;
            cfg.xs = parse_grid(x_grid);
            cfg.ys = parse_grid(y_grid);
            cfg.options = opts;
            cfg.out_dir = out_dir;
            auto outcome = sweep(loaded.scenario, loaded.field, cfg);
            std::printf("u_concave=%d u_increasing=%d v_convex=%d v_decreasing=%d "
                        "v_prime_nondecreasing=%d v_prime_matches_fd=%d\n",
                        outcome.u_concave, outcome.u_increasing, outcome.v_convex,
                        outcome.v_decreasing, outcome.v_prime_nondecreasing,
                        outcome.v_prime_matches_fd);
            const bool ok = outcome.u_concave && outcome.u_increasing && outcome.v_convex &&
                            outcome.v_decreasing && outcome.v_prime_nondecreasing &&
                            outcome.v_prime_matches_fd;
            return ok ? 0 : kExitCertificates;
        }

        if (c_check->parsed()) {
            std::ifstream in(plan_path);
            if (!in) throw ScenarioParseError("cannot open plan file: " + plan_path);
            nlohmann::json doc = nlohmann::json::parse(in);
            Vector cum;
            if (doc.contains("cumulative")) {
                cum = doc.at("cumulative").get<std::vector<double>>();
            } else if (doc.contains("rate")) {
                Vector rate = doc.at("rate").get<std::vector<double>>();
                if (rate.size() != loaded.scenario.tree.size())
                    throw ScenarioParseError("plan.rate: one value per node required");
                cum = cumulative_from_rate(loaded.scenario, rate);
            } else {
                throw ScenarioParseError("plan file needs a \"rate\" or \"cumulative\" array");
            }
            auto poly = supermartingale_constraints(loaded.scenario);
            auto bc = budget_check(loaded.scenario, poly, cum, x);
            std::printf("budget slack over the dual domain: %s\n", format_float(bc.max_slack).c_str());
            auto pr = recover_portfolio(loaded.scenario, cum, x);
            double worst = 0.0;
            for (NodeId t : loaded.scenario.tree.terminals())
                worst = std::min(worst, pr.wealth[std::size_t(t)]);
            std::printf("financing portfolio found; worst terminal wealth: %s\n",
                        format_float(worst).c_str());
            return 0;
        }

        if (c_oracle->parsed()) {
            auto res = brute_force_primal(loaded.scenario, *loaded.field, x);
            std::printf("oracle primal value: %s  (upper bound %s, %zu breakpoints)\n",
                        format_float(res.value).c_str(), format_float(res.upper_bound).c_str(),
                        res.breakpoints);
            return 0;
        }

        if (c_elast->parsed()) {
            std::vector<double> gammas = parse_grid(gamma_list);
            auto rep =
                asymptotic_elasticity(*loaded.field, loaded.scenario.tree, x_max, 60, gammas);
            std::printf("sup ratio: %s\ntail estimate: %s\nreasonably elastic: %s\n",
                        format_float(rep.sup_ratio).c_str(), format_float(rep.tail_estimate).c_str(),
                        rep.reasonably_elastic ? "yes" : "no");
            for (const auto& gc : rep.gamma_checks)
                std::printf("gamma=%g: G1=%d G2=%d G3=%d G4=%d x0=%g y0=%g\n", gc.gamma, gc.gamma1,
                            gc.gamma2, gc.gamma3, gc.gamma4, gc.x0, gc.y0);
            nlohmann::json j;
            j["sup_ratio"] = format_float(rep.sup_ratio);
            j["tail_estimate"] = format_float(rep.tail_estimate);
            j["reasonably_elastic"] = rep.reasonably_elastic;
            j["envelope_ratio"] = format_float(rep.envelope_ratio);
            std::ofstream outf(out_dir + "/elasticity.json", std::ios::binary);
            outf << j.dump(2) << "\n";
            return rep.reasonably_elastic ? 0 : kExitCertificates;
        }
    } catch (const ScenarioValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.arbitrage_only() ? 4 : 3;
    } catch (const ScenarioParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitParse;
    } catch (const SolverError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitParse;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 9;
    }
    return 0;
}
