#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "treedual/dual_domain.hpp"
#include "treedual/root_finding.hpp"
#include "treedual/solver.hpp"

namespace treedual {

// ---------------------------------------------------------------------------
// Brute-force primal referee
// ---------------------------------------------------------------------------

struct BruteForceOptions {
    int initial_points = 24;          // breakpoints per charged node to start
    int max_rounds = 14;              // sandwich refinement rounds
    double tol = 1e-6;                // target upper-lower bracket width
    std::size_t max_breakpoints = 96; // per node
    std::size_t max_charged = 8;
    std::size_t max_vertices = 400;
};

struct BruteForceResult {
    double value = -kInf;       // best certified-feasible value (lower bound)
    double upper_bound = kInf;  // tangent-relaxation value (upper bound)
    Vector rate;                // per node id
    std::size_t breakpoints = 0;
};

/// Independent primal referee. The feasible set is written out explicitly
/// through the vertex budget rows sum_i beta[v][i] c_i <= x + <Q_v, E_T>; the
/// separable concave objective is bracketed between two piecewise-linear
/// models on per-node grids: secants give a feasible lower bound, tangents an
/// upper bound, and breakpoints are refined around the incumbents until the
/// sandwich closes. No dual machinery is involved.
inline BruteForceResult brute_force_primal(const MarketScenario& s, const UtilityField& field,
                                           double x, const BruteForceOptions& opts = {}) {
    const auto charged = s.charged_nodes();
    const std::size_t k = charged.size();
    if (k == 0 || k > opts.max_charged)
        throw std::invalid_argument("brute_force_primal: charged-node count outside the guard");

    const auto poly = supermartingale_constraints(s);
    const auto verts = polytope_vertices(poly, opts.max_vertices);
    const std::size_t nv = verts.size();

    // per-vertex budget rows: sum_i beta[v][i] * c_i <= rhs[v]
    std::vector<Vector> beta(nv, Vector(k, 0.0));
    Vector rhs(nv, 0.0);
    Vector endow_T;
    for (NodeId t : s.tree.terminals()) endow_T.push_back(s.endowment[std::size_t(t)]);
    for (std::size_t v = 0; v < nv; ++v) {
        Vector dens = density_process(s, verts[v]).y;
        for (std::size_t i = 0; i < k; ++i) {
            const NodeId n = charged[i];
            beta[v][i] = s.tree.path_prob(n) * s.mu.weights[std::size_t(s.tree.time_index(n))] *
                         dens[std::size_t(n)];
        }
        rhs[v] = x + dot(verts[v].q, endow_T);
    }

    Vector p_w(k), cmax(k), cmin(k);
    for (std::size_t i = 0; i < k; ++i) {
        const NodeId n = charged[i];
        p_w[i] = s.tree.path_prob(n) * s.mu.weights[std::size_t(s.tree.time_index(n))];
        double cap = 1e6;
        for (std::size_t v = 0; v < nv; ++v)
            if (beta[v][i] > 1e-15) cap = std::min(cap, rhs[v] / beta[v][i]);
        cmax[i] = std::max(cap, 1e-9);
        cmin[i] = field.unbounded_below() ? 1e-7 * cmax[i] : 0.0;
    }

    auto node_value = [&](std::size_t i, double c) {
        return field.value(s.tree.time_index(charged[i]), charged[i], c);
    };
    auto node_marginal = [&](std::size_t i, double c) {
        return field.marginal(s.tree.time_index(charged[i]), charged[i], c);
    };

    // initial breakpoints: a linear grid plus a geometric tail toward cmin
    std::vector<Vector> bp(k);
    for (std::size_t i = 0; i < k; ++i) {
        const int half = opts.initial_points / 2;
        for (int g = 0; g <= half; ++g)
            bp[i].push_back(cmin[i] + (cmax[i] - cmin[i]) * g / half);
        const double geo_lo = std::max(cmin[i], 1e-6 * cmax[i]);
        for (int g = 0; g < half; ++g)
            bp[i].push_back(geo_lo * std::pow(cmax[i] / geo_lo, double(g) / half));
        std::sort(bp[i].begin(), bp[i].end());
        bp[i].erase(std::unique(bp[i].begin(), bp[i].end(),
                                [](double a, double b) { return std::fabs(a - b) <= 1e-13 * (1 + std::fabs(a)); }),
                    bp[i].end());
    }

    BruteForceResult best;
    best.rate.assign(s.tree.size(), 0.0);
    Vector best_c(k, 0.0);

    auto insert_point = [&](std::size_t i, double c) {
        if (!(c >= cmin[i] && c <= cmax[i])) return;
        if (bp[i].size() >= opts.max_breakpoints) return;
        auto it = std::lower_bound(bp[i].begin(), bp[i].end(), c);
        if (it != bp[i].end() && std::fabs(*it - c) <= 1e-12 * (1 + std::fabs(c))) return;
        if (it != bp[i].begin() && std::fabs(*(it - 1) - c) <= 1e-12 * (1 + std::fabs(c))) return;
        bp[i].insert(it, c);
    };

    for (int round = 0; round < opts.max_rounds; ++round) {
        // ---- lower bound: secant model, lambda formulation
        {
            std::vector<std::size_t> offset(k + 1, 0);
            for (std::size_t i = 0; i < k; ++i) offset[i + 1] = offset[i] + bp[i].size();
            const std::size_t nvars = offset[k];
            LinearProgram lp;
            lp.objective.assign(nvars, 0.0);
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < bp[i].size(); ++j)
                    lp.objective[offset[i] + j] = -p_w[i] * node_value(i, bp[i][j]);
            for (std::size_t i = 0; i < k; ++i) {
                Vector row(nvars, 0.0);
                for (std::size_t j = 0; j < bp[i].size(); ++j) row[offset[i] + j] = 1.0;
                lp.add_row(std::move(row), LpRelation::eq, 1.0);
            }
            for (std::size_t v = 0; v < nv; ++v) {
                Vector row(nvars, 0.0);
                for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t j = 0; j < bp[i].size(); ++j)
                        row[offset[i] + j] = beta[v][i] * bp[i][j];
                lp.add_row(std::move(row), LpRelation::le, rhs[v]);
            }
            LpResult res = solve_lp(lp);
            if (res.status != LpStatus::optimal)
                throw std::runtime_error("brute_force_primal: secant LP failed");
            Vector c(k, 0.0);
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < bp[i].size(); ++j)
                    c[i] += res.x[offset[i] + j] * bp[i][j];
            double val = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                const double u = node_value(i, c[i]);
                val += u == -kInf ? -kInf : p_w[i] * u;
            }
            val = std::max(val, -res.value); // true value dominates the secant value
            if (val > best.value) {
                best.value = val;
                best_c = c;
            }
        }

        // ---- upper bound: tangent relaxation
        Vector c_ub(k, 0.0);
        {
            // variables: c (k), t+ (k), t- (k)
            LinearProgram lp;
            lp.objective.assign(3 * k, 0.0);
            for (std::size_t i = 0; i < k; ++i) {
                lp.objective[k + i] = -p_w[i];
                lp.objective[2 * k + i] = p_w[i];
            }
            for (std::size_t i = 0; i < k; ++i)
                for (double b : bp[i]) {
                    if (b <= 0.0) continue;
                    const double du = node_marginal(i, b);
                    if (!(du > 0.0) || du > 1e13) continue;
                    Vector row(3 * k, 0.0);
                    row[k + i] = 1.0;
                    row[2 * k + i] = -1.0;
                    row[i] = -du;
                    lp.add_row(std::move(row), LpRelation::le, node_value(i, b) - du * b);
                }
            for (std::size_t v = 0; v < nv; ++v) {
                Vector row(3 * k, 0.0);
                for (std::size_t i = 0; i < k; ++i) row[i] = beta[v][i];
                lp.add_row(std::move(row), LpRelation::le, rhs[v]);
            }
            LpResult res = solve_lp(lp);
            if (res.status != LpStatus::optimal)
                throw std::runtime_error("brute_force_primal: tangent LP failed");
            best.upper_bound = -res.value;
            for (std::size_t i = 0; i < k; ++i) c_ub[i] = res.x[i];
        }

        const double width = best.upper_bound - best.value;
        if (width <= opts.tol * std::max(1.0, std::fabs(best.value))) break;

        // refine around both incumbents: the points themselves plus midpoints
        // of the bracketing intervals
        for (std::size_t i = 0; i < k; ++i) {
            for (double c : {best_c[i], c_ub[i]}) {
                insert_point(i, c);
                auto it = std::lower_bound(bp[i].begin(), bp[i].end(), c);
                if (it != bp[i].end() && it != bp[i].begin())
                    insert_point(i, 0.5 * (*(it - 1) + *it));
                if (it != bp[i].end() && (it + 1) != bp[i].end())
                    insert_point(i, 0.5 * (*it + *(it + 1)));
            }
        }
    }

    for (std::size_t i = 0; i < k; ++i) best.rate[std::size_t(charged[i])] = best_c[i];
    for (std::size_t i = 0; i < k; ++i) best.breakpoints += bp[i].size();
    return best;
}

// ---------------------------------------------------------------------------
// Minimax identity check
// ---------------------------------------------------------------------------

struct MinimaxOptions {
    double c_cap = 4.0;
    double grid_step = 1e-3;
    std::size_t max_charged = 16;
    std::size_t combo_guard = 30000000;
};

struct MinimaxResult {
    double sup_inf = 0.0;
    double inf_sup = 0.0;
    double discrepancy() const { return std::fabs(sup_inf - inf_sup); }
};

/// Both iterated optima of the capped-grid Lagrangian
///   Phi(c, Q) = E int (U(t,c) - y Y^Q c) dmu + y <Q, E_T>.
/// sup-inf: exhaustive product grid over the charged nodes, inner inf by a
/// vertex scan (Phi is linear in q). inf-sup: the inner sup separates
/// node-wise into the grid conjugate; the outer convex minimization runs on
/// the vertex hull (exact for a point or a segment, subgradient descent
/// otherwise -- the identity is certified to grid resolution, not machine
/// precision).
inline MinimaxResult minimax_check(const MarketScenario& s, const UtilityField& field, double y,
                                   const MinimaxOptions& opts = {}) {
    const auto charged = s.charged_nodes();
    const std::size_t k = charged.size();
    if (k == 0 || k > opts.max_charged)
        throw std::invalid_argument("minimax_check: charged-node count outside the guard");

    const int points = int(std::floor(opts.c_cap / opts.grid_step)) + 1;
    if (std::pow(double(points), double(k)) > double(opts.combo_guard))
        throw std::invalid_argument("minimax_check: grid size outside the guard");

    const auto poly = supermartingale_constraints(s);
    const auto verts = polytope_vertices(poly);
    const std::size_t nv = verts.size();

    Vector endow_T;
    for (NodeId t : s.tree.terminals()) endow_T.push_back(s.endowment[std::size_t(t)]);

    Vector p_w(k);
    std::vector<Vector> lin(nv, Vector(k)); // y P w Y_v(n), the -c coefficient
    Vector cons(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        Vector dens = density_process(s, verts[v]).y;
        for (std::size_t i = 0; i < k; ++i) {
            const NodeId n = charged[i];
            p_w[i] = s.tree.path_prob(n) * s.mu.weights[std::size_t(s.tree.time_index(n))];
            lin[v][i] = y * p_w[i] * dens[std::size_t(n)];
        }
        cons[v] = y * dot(verts[v].q, endow_T);
    }

    // utility table per (charged node, grid point)
    std::vector<Vector> utab(k, Vector(std::size_t(points)));
    for (std::size_t i = 0; i < k; ++i) {
        const NodeId n = charged[i];
        for (int g = 0; g < points; ++g)
            utab[i][std::size_t(g)] =
                p_w[i] * field.value(s.tree.time_index(n), n, g * opts.grid_step);
    }

    MinimaxResult out;

    // ---- sup over the c-grid of (inf over vertices)
    {
        out.sup_inf = -kInf;
        std::vector<int> idx(k, 0);
        std::vector<Vector> part(k + 1, Vector(nv, 0.0)); // accumulated linear terms per vertex
        Vector usum(k + 1, 0.0);
        std::size_t depth = 0;
        while (true) {
            if (idx[depth] >= points) {
                if (depth == 0) break;
                idx[depth] = 0;
                ++idx[--depth];
                continue;
            }
            const double ci = idx[depth] * opts.grid_step;
            for (std::size_t v = 0; v < nv; ++v)
                part[depth + 1][v] = part[depth][v] - lin[v][depth] * ci;
            usum[depth + 1] = usum[depth] + utab[depth][std::size_t(idx[depth])];
            if (depth + 1 == k) {
                if (usum[k] != -kInf) {
                    double inner = kInf;
                    for (std::size_t v = 0; v < nv; ++v)
                        inner = std::min(inner, part[k][v] + cons[v]);
                    out.sup_inf = std::max(out.sup_inf, usum[k] + inner);
                }
                ++idx[depth];
            } else {
                ++depth;
                idx[depth] = 0;
            }
        }
    }

    // ---- inf over D of (sup over the c-grid), node-separable inner sup
    {
        // grid conjugate sup_c [U(t,n,c) - z c] by ternary search (concave in c)
        auto grid_conjugate = [&](std::size_t i, double z) {
            int lo = 0, hi = points - 1;
            auto val = [&](int g) { return utab[i][std::size_t(g)] - z * p_w[i] * g * opts.grid_step; };
            while (hi - lo > 2) {
                const int m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
                if (val(m1) < val(m2)) lo = m1 + 1; else hi = m2;
            }
            double bestv = -kInf;
            for (int g = lo; g <= hi; ++g) bestv = std::max(bestv, val(g));
            return bestv;
        };
        auto h = [&](const Vector& q) {
            Vector dens = density_process(s, DualMeasure{q}).y;
            double v = y * dot(q, endow_T);
            for (std::size_t i = 0; i < k; ++i)
                v += grid_conjugate(i, y * dens[std::size_t(charged[i])]);
            return v;
        };

        if (nv == 1) {
            out.inf_sup = h(verts[0].q);
        } else if (nv == 2) {
            auto on_segment = [&](double t) {
                Vector q(verts[0].q.size());
                for (std::size_t i = 0; i < q.size(); ++i)
                    q[i] = (1.0 - t) * verts[0].q[i] + t * verts[1].q[i];
                return h(q);
            };
            const double t = golden_minimize(on_segment, 0.0, 1.0, 1e-12);
            out.inf_sup = std::min({on_segment(t), on_segment(0.0), on_segment(1.0)});
        } else {
            // projected subgradient with averaging over the vertex hull
            Vector q = verts[0].q;
            for (std::size_t v = 1; v < nv; ++v)
                for (std::size_t i = 0; i < q.size(); ++i) q[i] += verts[v].q[i];
            for (auto& x : q) x /= double(nv);
            double bestv = h(q);
            for (int it = 1; it <= 600; ++it) {
                Vector dens = density_process(s, DualMeasure{q}).y;
                // subgradient through the per-node grid argmax
                Vector cstar(k);
                for (std::size_t i = 0; i < k; ++i) {
                    const double z = y * dens[std::size_t(charged[i])];
                    int lo = 0, hi = points - 1;
                    auto val = [&](int g) {
                        return utab[i][std::size_t(g)] - z * p_w[i] * g * opts.grid_step;
                    };
                    while (hi - lo > 2) {
                        const int m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
                        if (val(m1) < val(m2)) lo = m1 + 1; else hi = m2;
                    }
                    int gb = lo;
                    for (int g = lo; g <= hi; ++g)
                        if (val(g) > val(gb)) gb = g;
                    cstar[i] = gb * opts.grid_step;
                }
                // d h / d q_w = y (E_T(w) - sum over charged path nodes of w(t) c*(n))
                Vector pathsum(s.tree.size(), 0.0);
                for (NodeId u : s.tree.top_down()) {
                    NodeId p = s.tree.node(u).parent;
                    double acc = p == kNoNode ? 0.0 : pathsum[std::size_t(p)];
                    for (std::size_t i = 0; i < k; ++i)
                        if (charged[i] == u)
                            acc += s.mu.weights[std::size_t(s.tree.time_index(u))] * cstar[i];
                    pathsum[std::size_t(u)] = acc;
                }
                Vector sub(q.size());
                for (std::size_t w = 0; w < q.size(); ++w)
                    sub[w] = y * (endow_T[w] - pathsum[std::size_t(s.tree.terminals()[w])]);
                const double step = 0.5 / (norm2(sub) + 1e-12) / std::sqrt(double(it));
                Vector target = q;
                axpy(-step, sub, target);
                q = project_to_polytope(poly, target, q);
                bestv = std::min(bestv, h(q));
            }
            out.inf_sup = bestv;
        }
    }
    return out;
}

} // namespace treedual
