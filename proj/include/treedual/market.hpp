#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "treedual/event_tree.hpp"
#include "treedual/simplex.hpp"

namespace treedual {

/// Probability measure on the time grid charging consumption dates.
/// One weight per grid point; weight at the final point is the bulk
/// ("terminal wealth") atom.
struct ConsumptionMeasure {
    Vector weights;

    double total() const {
        double s = 0.0;
        for (double w : weights) s += w;
        return s;
    }

    bool charges(int time_index) const { return weights[std::size_t(time_index)] > 0.0; }

    /// Indices carrying positive weight.
    std::vector<int> support() const {
        std::vector<int> s;
        for (std::size_t i = 0; i < weights.size(); ++i)
            if (weights[i] > 0.0) s.push_back(static_cast<int>(i));
        return s;
    }

    std::vector<std::string> validate() const {
        std::vector<std::string> bad;
        const int n_last = static_cast<int>(weights.size()) - 1;
        for (double w : weights)
            if (w < 0.0) { bad.push_back("negative consumption weight"); break; }
        if (std::fabs(total() - 1.0) > 1e-12 * weights.size() + 1e-12)
            bad.push_back("consumption weights do not sum to 1");
        // mass must not be exhausted while a whole trading period (plus the
        // terminal date) still lies ahead; with a single period any plan
        // concentrated at t0 is rejected outright
        double prefix = 0.0;
        for (int i = 0; i < n_last; ++i) {
            prefix += weights[std::size_t(i)];
            if ((i < n_last - 1 || n_last == 1) && prefix >= 1.0 - 1e-12) {
                bad.push_back("mu([0,t])<1 violated at t<T (index " + std::to_string(i) + ")");
                break;
            }
        }
        return bad;
    }
};

/// Closed convex cone of admissible holdings, generated by finitely many
/// vectors. The unconstrained market uses the 2d generators +-e_k.
struct ConstraintCone {
    int dim = 1;
    std::vector<Vector> generators;

    static ConstraintCone unconstrained(int d) {
        ConstraintCone c;
        c.dim = d;
        for (int k = 0; k < d; ++k) {
            Vector plus(d, 0.0), minus(d, 0.0);
            plus[std::size_t(k)] = 1.0;
            minus[std::size_t(k)] = -1.0;
            c.generators.push_back(plus);
            c.generators.push_back(minus);
        }
        return c;
    }

    static ConstraintCone half_line(double direction) {
        ConstraintCone c;
        c.dim = 1;
        c.generators.push_back(Vector{direction});
        return c;
    }

    /// L1 distance from h to the conic hull, via a small feasibility LP:
    /// min |r|_1 over lambda >= 0 with sum lambda_i g_i + r = h.
    double distance(const Vector& h) const {
        const std::size_t m = generators.size();
        const std::size_t d = std::size_t(dim);
        // variables: lambda (m), r+ (d), r- (d)
        LinearProgram lp;
        lp.objective.assign(m + 2 * d, 0.0);
        for (std::size_t j = 0; j < 2 * d; ++j) lp.objective[m + j] = 1.0;
        for (std::size_t k = 0; k < d; ++k) {
            Vector row(m + 2 * d, 0.0);
            for (std::size_t j = 0; j < m; ++j) row[j] = generators[j][k];
            row[m + k] = 1.0;
            row[m + d + k] = -1.0;
            lp.add_row(std::move(row), LpRelation::eq, h[k]);
        }
        LpResult res = solve_lp(lp);
        if (res.status != LpStatus::optimal)
            throw std::runtime_error("ConstraintCone::distance: LP failed");
        return res.value;
    }

    bool contains(const Vector& h, double tol = 1e-9) const {
        double scale = 1.0;
        for (double v : h) scale = std::max(scale, std::fabs(v));
        return distance(h) <= tol * scale;
    }
};

/// Investment-consumption strategy on a tree: holdings over the next step at
/// every non-terminal node (predictable by construction) and a cumulative
/// consumption value at every node.
struct Strategy {
    std::vector<Vector> holdings;  // indexed by node id; unused at terminals
    Vector consumption;            // cumulative C per node
};

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

/// Event tree plus the market data living on it: discounted prices S, the
/// cumulative endowment, the consumption measure and the portfolio cone.
struct MarketScenario {
    EventTree tree;
    std::vector<Vector> prices;  // per node, dimension d
    Vector endowment;            // cumulative, per node
    ConsumptionMeasure mu;
    ConstraintCone cone;
    int d = 1;

    double price_change(NodeId child, int asset) const {
        return prices[std::size_t(child)][std::size_t(asset)] -
               prices[std::size_t(tree.node(child).parent)][std::size_t(asset)];
    }

    /// Endowment increment arriving at this node.
    double endowment_increment(NodeId n) const {
        NodeId p = tree.node(n).parent;
        return p == kNoNode ? endowment[std::size_t(n)]
                            : endowment[std::size_t(n)] - endowment[std::size_t(p)];
    }

    /// Node ids whose date is charged by mu.
    std::vector<NodeId> charged_nodes() const {
        std::vector<NodeId> out;
        for (NodeId i = 0; i < NodeId(tree.size()); ++i)
            if (mu.charges(tree.time_index(i))) out.push_back(i);
        return out;
    }
};

/// One inequality row of the dual polytope, in terminal-weight coordinates.
struct DriftConstraintRow {
    Vector coeffs;   // over terminal weights q, row . q <= 0
    NodeId node;     // non-terminal node the condition lives at
    int generator;   // index into cone.generators
};

/// The drift conditions g . E_Q[S_{t+1} - S_t | n] <= 0, one per
/// (non-terminal node, cone generator), linearized in the terminal weights:
/// sum_w q_w * g.(S_child(n,w) - S_n) <= 0. Together with the simplex
/// constraints these cut out the closure of the supermartingale measures.
inline std::vector<DriftConstraintRow> supermartingale_rows(const MarketScenario& s) {
    std::vector<DriftConstraintRow> rows;
    const std::size_t npaths = s.tree.terminals().size();
    for (NodeId u = 0; u < NodeId(s.tree.size()); ++u) {
        if (s.tree.is_terminal(u)) continue;
        for (std::size_t g = 0; g < s.cone.generators.size(); ++g) {
            DriftConstraintRow row;
            row.node = u;
            row.generator = static_cast<int>(g);
            row.coeffs.assign(npaths, 0.0);
            bool nonzero = false;
            for (NodeId c : s.tree.node(u).children) {
                double gd = 0.0;
                for (int k = 0; k < s.d; ++k)
                    gd += s.cone.generators[g][std::size_t(k)] * s.price_change(c, k);
                if (gd == 0.0) continue;
                for (int w : s.tree.terminal_ordinals_below(c)) {
                    row.coeffs[std::size_t(w)] = gd;
                    nonzero = true;
                }
            }
            if (nonzero) rows.push_back(std::move(row));
        }
    }
    return rows;
}

namespace detail {

/// Solves max tau s.t. q >= tau, sum q = 1, drift rows <= 0 and reports
/// whether the optimum is strictly positive (a full-support dual measure).
/// Returns the maximizer through `q_out` when requested.
inline bool has_strictly_positive_dual_measure(const MarketScenario& s, Vector* q_out = nullptr) {
    const auto rows = supermartingale_rows(s);
    const std::size_t m = s.tree.terminals().size();
    // variables: q (m), tau
    LinearProgram lp;
    lp.objective.assign(m + 1, 0.0);
    lp.objective[m] = -1.0; // maximize tau
    {
        Vector row(m + 1, 0.0);
        for (std::size_t i = 0; i < m; ++i) row[i] = 1.0;
        lp.add_row(std::move(row), LpRelation::eq, 1.0);
    }
    for (std::size_t i = 0; i < m; ++i) {
        Vector row(m + 1, 0.0);
        row[i] = 1.0;
        row[m] = -1.0;
        lp.add_row(std::move(row), LpRelation::ge, 0.0);
    }
    for (const auto& r : rows) {
        Vector row(m + 1, 0.0);
        for (std::size_t i = 0; i < m; ++i) row[i] = r.coeffs[i];
        lp.add_row(std::move(row), LpRelation::le, 0.0);
    }
    LpResult res = solve_lp(lp);
    if (res.status != LpStatus::optimal) return false;
    if (q_out) q_out->assign(res.x.begin(), res.x.begin() + long(m));
    return res.x[m] > 1e-12;
}

} // namespace detail

/// Checks every standing hypothesis: tree structure, adaptedness of the data,
/// endowment monotonicity, admissibility of mu and the no-arbitrage postulate
/// (existence of a dual measure with full support).
inline ValidationReport validate_scenario(const MarketScenario& s) {
    ValidationReport rep;
    rep.violations = s.tree.validate();

    const std::size_t n = s.tree.size();
    if (s.prices.size() != n) rep.violations.push_back("prices: one vector per node required");
    if (s.endowment.size() != n) rep.violations.push_back("endowment: one value per node required");
    if (s.mu.weights.size() != std::size_t(s.tree.horizon()) + 1)
        rep.violations.push_back("mu: one weight per time-grid point required");
    if (s.cone.dim != s.d || s.cone.generators.empty())
        rep.violations.push_back("cone: dimension mismatch or no generators");
    for (const auto& g : s.cone.generators)
        if (g.size() != std::size_t(s.d)) {
            rep.violations.push_back("cone: generator dimension mismatch");
            break;
        }
    if (!rep.violations.empty()) return rep;

    for (std::size_t i = 0; i < n; ++i)
        if (s.prices[i].size() != std::size_t(s.d)) {
            rep.violations.push_back("prices: dimension mismatch at node " + std::to_string(i));
            return rep;
        }

    if (std::fabs(s.endowment[std::size_t(s.tree.root())]) > 1e-14)
        rep.violations.push_back("endowment not zero at the root");
    for (NodeId i = 0; i < NodeId(n); ++i) {
        NodeId p = s.tree.node(i).parent;
        if (p != kNoNode && s.endowment[std::size_t(i)] < s.endowment[std::size_t(p)] - 1e-12)
            rep.violations.push_back("endowment decreasing into node " + std::to_string(i));
    }

    for (const auto& v : s.mu.validate()) rep.violations.push_back(v);

    if (rep.violations.empty() && !detail::has_strictly_positive_dual_measure(s))
        rep.violations.push_back("no equivalent supermartingale measure (arbitrage)");
    return rep;
}

/// Wealth along the tree: W(n) = x + E(n) + sum_path H.dS - C(n).
inline Vector wealth_process(const MarketScenario& s, double x, const Strategy& strat) {
    const std::size_t n = s.tree.size();
    if (strat.consumption.size() != n)
        throw std::invalid_argument("wealth_process: consumption size mismatch");
    Vector gains(n, 0.0);
    for (NodeId u : s.tree.top_down()) {
        if (s.tree.is_terminal(u)) continue;
        const Vector& h = strat.holdings[std::size_t(u)];
        if (h.size() != std::size_t(s.d))
            throw std::invalid_argument("wealth_process: holding dimension mismatch at node " + std::to_string(u));
        for (NodeId c : s.tree.node(u).children) {
            double step = 0.0;
            for (int k = 0; k < s.d; ++k) step += h[std::size_t(k)] * s.price_change(c, k);
            gains[std::size_t(c)] = gains[std::size_t(u)] + step;
        }
    }
    Vector w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = x + s.endowment[i] + gains[i] - strat.consumption[i];
    return w;
}

struct AdmissibilityResult {
    bool admissible = true;
    std::optional<NodeId> violating_node;
    std::string reason;
};

/// H in the cone at every node and terminal wealth >= -tol.
inline AdmissibilityResult check_admissible_strategy(const MarketScenario& s, double x,
                                                     const Strategy& strat,
                                                     double tol_cone = 1e-9,
                                                     double tol_admiss = 1e-9) {
    AdmissibilityResult res;
    for (NodeId u = 0; u < NodeId(s.tree.size()); ++u) {
        if (s.tree.is_terminal(u)) continue;
        if (!s.cone.contains(strat.holdings[std::size_t(u)], tol_cone)) {
            res.admissible = false;
            res.violating_node = u;
            res.reason = "H not in cone";
            return res;
        }
    }
    Vector w = wealth_process(s, x, strat);
    for (NodeId t : s.tree.terminals()) {
        if (w[std::size_t(t)] < -tol_admiss) {
            res.admissible = false;
            res.violating_node = t;
            res.reason = "terminal wealth negative";
            return res;
        }
    }
    return res;
}

inline bool is_admissible_strategy(const MarketScenario& s, double x, const Strategy& strat) {
    return check_admissible_strategy(s, x, strat).admissible;
}

/// Cumulative consumption from a rate given on charged nodes:
/// C(n) = sum over charged path times of c(node) * w(t).
/// `rate` is indexed by node id; values at uncharged nodes are ignored.
inline Vector cumulative_from_rate(const MarketScenario& s, const Vector& rate) {
    const std::size_t n = s.tree.size();
    Vector cum(n, 0.0);
    for (NodeId u : s.tree.top_down()) {
        const double w = s.mu.weights[std::size_t(s.tree.time_index(u))];
        double inc = 0.0;
        if (w > 0.0) {
            const double c = rate[std::size_t(u)];
            if (c < 0.0)
                throw std::invalid_argument("cumulative_from_rate: negative rate at node " + std::to_string(u));
            inc = c * w;
        }
        NodeId p = s.tree.node(u).parent;
        cum[std::size_t(u)] = (p == kNoNode ? 0.0 : cum[std::size_t(p)]) + inc;
    }
    return cum;
}

} // namespace treedual
