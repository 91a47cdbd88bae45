#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "treedual/dual_domain.hpp"
#include "treedual/market.hpp"
#include "treedual/root_finding.hpp"
#include "treedual/utility_field.hpp"

namespace treedual {

// ---------------------------------------------------------------------------
// Errors, staged for the CLI exit-code contract
// ---------------------------------------------------------------------------

enum class SolverStage {
    validation = 3,
    no_arbitrage = 4,
    dual_solve = 5,
    y_match = 6,
    recovery = 7,
    certificates = 8,
    internal = 9,
};

class SolverError : public std::runtime_error {
public:
    SolverError(SolverStage stage, const std::string& what)
        : std::runtime_error(what), stage_(stage) {}
    SolverStage stage() const { return stage_; }

private:
    SolverStage stage_;
};

struct SolverOptions {
    double tol_opt = 1e-8;       // stationarity: FW gap <= tol_opt * (1 + |J|)
    double tol_budget = 1e-7;
    double tol_vi = 1e-7;
    double tol_gap_rel = 1e-6;   // |U - (V + xy)| <= tol * max(1, |U|)
    double y_match_tol = 1e-8;   // |V'(y) + x| <= tol * max(1, x)
    double barrier_y = 1e-12;    // density floor on charged nodes during iteration
    int max_pg_iter = 150;
    int max_newton_iter = 40;
    int max_rounds = 24;
    double y_min = 1e-8, y_max = 1e8;
    bool run_certificates = true;
};

// ---------------------------------------------------------------------------
// Dual problem view (y-independent caches)
// ---------------------------------------------------------------------------

/// J(y, Q) = sum over charged nodes of P(n) w(t(n)) V(t(n), n, y Y(n))
///         + y <Q, E_T>, in terminal-weight coordinates q.
class DualProblem {
public:
    DualProblem(const MarketScenario& scenario, UtilityFieldPtr field)
        : s_(&scenario), field_(std::move(field)), poly_(supermartingale_constraints(scenario)) {
        if (!detail::has_strictly_positive_dual_measure(scenario, &interior_))
            throw SolverError(SolverStage::no_arbitrage,
                              "dual domain has no strictly positive member (arbitrage)");
        const auto& tree = scenario.tree;
        order_ = tree.top_down();
        for (NodeId n = 0; n < NodeId(tree.size()); ++n) {
            if (scenario.mu.charges(tree.time_index(n))) charged_.push_back(n);
        }
        for (NodeId t : tree.terminals()) endow_T_.push_back(scenario.endowment[std::size_t(t)]);
        desc_.resize(tree.size());
        for (NodeId n = 0; n < NodeId(tree.size()); ++n)
            desc_[std::size_t(n)] = tree.terminal_ordinals_below(n);
    }

    const MarketScenario& scenario() const { return *s_; }
    const UtilityField& field() const { return *field_; }
    const SupermartingalePolytope& polytope() const { return poly_; }
    const Vector& interior_point() const { return interior_; }
    const std::vector<NodeId>& charged_nodes() const { return charged_; }
    const Vector& terminal_endowment() const { return endow_T_; }

    double weight(NodeId n) const {
        return s_->mu.weights[std::size_t(s_->tree.time_index(n))];
    }

    /// Y per node for terminal weights q.
    Vector density(const Vector& q) const {
        Vector mass(s_->tree.size(), 0.0);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            NodeId u = *it;
            if (s_->tree.is_terminal(u))
                mass[std::size_t(u)] = q[std::size_t(s_->tree.terminal_ordinal(u))];
            else
                for (NodeId c : s_->tree.node(u).children) mass[std::size_t(u)] += mass[std::size_t(c)];
        }
        Vector y(mass.size());
        for (std::size_t i = 0; i < mass.size(); ++i) y[i] = mass[i] / s_->tree.path_prob(NodeId(i));
        return y;
    }

    double endowment_pairing(const Vector& q) const { return dot(q, endow_T_); }

    /// Objective, +inf sentinel when a charged density hits the barrier (and
    /// V blows up there). Gradient (w.r.t. q) is filled when finite and
    /// requested.
    double evaluate(double y, const Vector& q, Vector* grad, double barrier = 0.0) const {
        const auto& tree = s_->tree;
        Vector dens = density(q);
        double value = y * endowment_pairing(q);
        for (NodeId n : charged_) {
            const double yn = dens[std::size_t(n)];
            if (yn <= barrier) {
                if (barrier > 0.0 || field_->conjugate_at_zero(tree.time_index(n), n) == kInf)
                    return kInf;
            }
        }
        for (NodeId n : charged_) {
            const double yn = dens[std::size_t(n)];
            if (yn <= 0.0) {
                value += tree.path_prob(n) * weight(n) *
                         field_->conjugate_at_zero(tree.time_index(n), n);
                continue;
            }
            value += tree.path_prob(n) * weight(n) *
                     field_->conjugate(tree.time_index(n), n, y * yn);
        }
        if (grad) {
            // dJ/dq_w = y [ sum over charged nodes on the path of w(t) V'(t,n,yY) + E_T(w) ]
            Vector pathsum(tree.size(), 0.0);
            for (NodeId u : order_) {
                NodeId p = tree.node(u).parent;
                double acc = p == kNoNode ? 0.0 : pathsum[std::size_t(p)];
                if (s_->mu.charges(tree.time_index(u))) {
                    const double yn = dens[std::size_t(u)];
                    acc += weight(u) *
                           field_->conjugate_derivative(tree.time_index(u), u, y * std::max(yn, 1e-300));
                }
                pathsum[std::size_t(u)] = acc;
            }
            grad->assign(poly_.num_paths(), 0.0);
            for (std::size_t w = 0; w < poly_.num_paths(); ++w) {
                NodeId t = tree.terminals()[w];
                (*grad)[w] = y * (pathsum[std::size_t(t)] + endow_T_[w]);
            }
        }
        return value;
    }

    /// Hessian of J in q (positive semidefinite).
    Matrix hessian(double y, const Vector& q) const {
        const std::size_t m = poly_.num_paths();
        Matrix h(m, m, 0.0);
        Vector dens = density(q);
        for (NodeId n : charged_) {
            const double yn = std::max(dens[std::size_t(n)], 1e-300);
            const double coeff = y * y * weight(n) *
                                 field_->conjugate_second(s_->tree.time_index(n), n, y * yn) /
                                 s_->tree.path_prob(n);
            const auto& ds = desc_[std::size_t(n)];
            for (int i : ds)
                for (int j : ds) h(std::size_t(i), std::size_t(j)) += coeff;
        }
        return h;
    }

private:
    const MarketScenario* s_;
    UtilityFieldPtr field_;
    SupermartingalePolytope poly_;
    Vector interior_;
    std::vector<NodeId> order_;
    std::vector<NodeId> charged_;
    Vector endow_T_;
    std::vector<std::vector<int>> desc_;
};

// ---------------------------------------------------------------------------
// Dual solver: projected gradient + face Newton, Frank-Wolfe fallback
// ---------------------------------------------------------------------------

struct DualSolveResult {
    Vector q;
    double value = 0.0;   // V(y) = J(y, q)
    double fw_gap = 0.0;  // stationarity certificate
    int iterations = 0;
    bool converged = false;
};

namespace detail {

/// Frank-Wolfe gap g.(q - v*) with v* the LP minimizer of the linearization;
/// by convexity an upper bound on J(q) - inf J.
inline double frank_wolfe_gap(const DualProblem& prob, const Vector& q, const Vector& grad,
                              Vector* vertex_out = nullptr) {
    Vector v = prob.polytope().minimize_linear(grad);
    double gap = dot(grad, q) - dot(grad, v);
    if (vertex_out) *vertex_out = std::move(v);
    return gap;
}

/// Largest step along direction d keeping q feasible, barrier included.
/// Directional derivatives are screened relative to |d| so roundoff-level
/// components of tangent directions cannot masquerade as blockers.
inline double max_feasible_step(const DualProblem& prob, const Vector& q, const Vector& d,
                                double barrier) {
    const double dnorm = norm2(d) + 1e-300;
    double alpha = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < q.size(); ++i)
        if (d[i] < -1e-12 * dnorm) alpha = std::min(alpha, std::max(q[i], 0.0) / -d[i]);
    for (const auto& r : prob.polytope().rows()) {
        const double ad = dot(r.coeffs, d);
        if (ad > 1e-12 * dnorm * (1.0 + norm2(r.coeffs)))
            alpha = std::min(alpha, std::max(-dot(r.coeffs, q), 0.0) / ad);
    }
    if (barrier > 0.0) {
        // keep charged densities above the barrier: Y is linear in q
        Vector yq = prob.density(q);
        Vector yd = prob.density(d); // homogeneous, same linear map
        for (NodeId n : prob.charged_nodes()) {
            const double dn = yd[std::size_t(n)];
            if (dn < -1e-12 * dnorm) {
                const double room = std::max(yq[std::size_t(n)] - barrier, 0.0);
                alpha = std::min(alpha, room / -dn);
            }
        }
    }
    return std::max(alpha, 0.0);
}

/// One optimization attempt from a given start; does not throw on
/// non-convergence (the caller may retry from a different start).
inline DualSolveResult solve_dual_attempt(const DualProblem& prob, double y,
                                          const SolverOptions& opts, Vector q) {
    const auto& poly = prob.polytope();
    const std::size_t m = poly.num_paths();
    const double barrier = opts.barrier_y;

    // nudge a warm start off the barrier if the previous face pinches charged mass
    if (prob.evaluate(y, q, nullptr, barrier) == kInf) q = prob.interior_point();

    DualSolveResult res;
    Vector grad;
    double fx = prob.evaluate(y, q, &grad, barrier);
    if (fx == kInf)
        throw SolverError(SolverStage::dual_solve, "solve_dual: objective infinite at the interior start");

    auto gap_scale = [&](double f) { return opts.tol_opt * (1.0 + std::fabs(f)); };
    double eta = 1.0;

    for (int round = 0; round < opts.max_rounds; ++round) {
        // ---- projected-gradient phase
        for (int it = 0; it < opts.max_pg_iter; ++it, ++res.iterations) {
            Vector target(m);
            for (std::size_t i = 0; i < m; ++i) target[i] = q[i] - eta * grad[i];
            Vector trial = project_to_polytope(poly, target, q);
            Vector step(m);
            double step_norm = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                step[i] = trial[i] - q[i];
                step_norm = std::max(step_norm, std::fabs(step[i]));
            }
            if (step_norm < 1e-14) break;
            const double slope = dot(grad, step);
            const double ftrial = prob.evaluate(y, trial, nullptr, barrier);
            if (ftrial <= fx + 1e-4 * slope) {
                q = std::move(trial);
                fx = prob.evaluate(y, q, &grad, barrier);
                eta = std::min(eta * 1.25, 1e8);
                if (res.iterations % 8 == 0 &&
                    detail::frank_wolfe_gap(prob, q, grad) <= gap_scale(fx))
                    break;
            } else {
                eta *= 0.4;
                if (eta < 1e-16) break;
            }
        }
        res.fw_gap = detail::frank_wolfe_gap(prob, q, grad);
        if (res.fw_gap <= gap_scale(fx)) { res.converged = true; break; }

        // ---- reduced Newton on the current face
        for (int it = 0; it < opts.max_newton_iter; ++it, ++res.iterations) {
            // active set at q, filtered to an independent subset (the full
            // cone contributes mirrored drift rows that would make the KKT
            // system singular)
            std::vector<Vector> tight;
            detail::WorkingSetBasis tight_basis(m);
            auto consider = [&](Vector row) {
                if (tight_basis.try_add(row)) tight.push_back(std::move(row));
            };
            for (std::size_t i = 0; i < m; ++i)
                if (q[i] <= 1e-11) {
                    Vector row(m, 0.0);
                    row[i] = 1.0;
                    consider(std::move(row));
                }
            for (const auto& r : poly.rows())
                if (std::fabs(dot(r.coeffs, q)) <= 1e-9 * (1.0 + norm2(r.coeffs)))
                    consider(r.coeffs);
            Vector ones(m, 1.0);
            tight.push_back(ones);

            const std::size_t k = tight.size();
            Matrix h = prob.hessian(y, q);
            double hscale = 0.0;
            for (std::size_t i = 0; i < m; ++i) hscale += h(i, i);
            hscale = std::max(hscale / double(m), 1e-8);
            double tau = 1e-10 * hscale;
            Vector sol;
            Vector d;
            bool solved = false;
            const double grad_scale = 1.0 + norm2(grad);
            while (tau < 1e12 * hscale && !solved) {
                Matrix kkt(m + k, m + k, 0.0);
                Vector rhs(m + k, 0.0);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < m; ++j) kkt(i, j) = h(i, j);
                    kkt(i, i) += tau;
                    rhs[i] = -grad[i];
                }
                for (std::size_t r = 0; r < k; ++r)
                    for (std::size_t j = 0; j < m; ++j) {
                        kkt(m + r, j) = tight[r][j];
                        kkt(j, m + r) = tight[r][j];
                    }
                solved = treedual::solve(kkt, rhs, sol, 1e-13);
                if (solved) {
                    d.assign(sol.begin(), sol.begin() + long(m));
                    // flat face directions produce useless, enormous steps;
                    // stiffen the regularization instead
                    if (norm_inf(d) > 1e5 * grad_scale) solved = false;
                }
                if (!solved) tau *= 1e3;
            }
            if (!solved) break;
            // enforce the tight face exactly (the KKT solve leaves roundoff
            // in the pinned coordinates, which would zero the step length)
            tight_basis.project_out(d);
            double dn = norm_inf(d);
            if (dn < 1e-14) break;

            double alpha = std::min(1.0, detail::max_feasible_step(prob, q, d, barrier));
            if (alpha <= 0.0) break;
            const double slope = dot(grad, d);
            bool accepted = false;
            for (int bt = 0; bt < 50; ++bt) {
                Vector trial = q;
                axpy(alpha, d, trial);
                const double ftrial = prob.evaluate(y, trial, nullptr, barrier);
                if (ftrial <= fx + 1e-4 * alpha * slope) {
                    q = std::move(trial);
                    fx = prob.evaluate(y, q, &grad, barrier);
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!accepted) break;
        }
        res.fw_gap = detail::frank_wolfe_gap(prob, q, grad);
        if (res.fw_gap <= gap_scale(fx)) { res.converged = true; break; }
    }

    // ---- Frank-Wolfe fallback (line search by golden section)
    if (!res.converged) {
        for (int it = 0; it < 4000; ++it, ++res.iterations) {
            Vector vertex;
            res.fw_gap = detail::frank_wolfe_gap(prob, q, grad, &vertex);
            if (res.fw_gap <= gap_scale(fx)) { res.converged = true; break; }
            Vector dir(m);
            for (std::size_t i = 0; i < m; ++i) dir[i] = vertex[i] - q[i];
            double tmax = std::min(1.0, detail::max_feasible_step(prob, q, dir, barrier));
            if (tmax <= 0.0) break;
            const double theta = golden_minimize(
                [&](double t) {
                    Vector trial = q;
                    axpy(t, dir, trial);
                    return prob.evaluate(y, trial, nullptr, barrier);
                },
                0.0, tmax, 1e-12);
            if (theta <= 0.0) break;
            axpy(theta, dir, q);
            fx = prob.evaluate(y, q, &grad, barrier);
        }
    }

    res.q = std::move(q);
    res.value = prob.evaluate(y, res.q, nullptr, 0.0); // unguarded certificate pass
    return res;
}

} // namespace detail

/// Minimizes J(y, .) over the polytope. Projected gradient with backtracking
/// identifies the optimal face, a reduced Newton step polishes on it, and a
/// plain Frank-Wolfe sweep backs both up if the quadratic model misbehaves.
/// Stationarity is certified through the Frank-Wolfe gap (equivalently, the
/// worst directional derivative toward a vertex). A failed warm-started
/// attempt is retried cold from the interior point.
inline DualSolveResult solve_dual(const DualProblem& prob, double y, const SolverOptions& opts = {},
                                  const Vector* warm_start = nullptr) {
    if (!(y > 0.0)) throw SolverError(SolverStage::dual_solve, "solve_dual: y must be positive");
    const auto& poly = prob.polytope();
    const bool warm = warm_start && warm_start->size() == poly.num_paths() &&
                      poly.contains(*warm_start, 1e-9);
    DualSolveResult res =
        detail::solve_dual_attempt(prob, y, opts, warm ? *warm_start : prob.interior_point());
    if (!res.converged && warm) {
        DualSolveResult cold = detail::solve_dual_attempt(prob, y, opts, prob.interior_point());
        cold.iterations += res.iterations;
        if (cold.converged || cold.value < res.value) res = std::move(cold);
    }
    if (!res.converged) {
        // the optimizer may hold a charged density below the barrier (tiny
        // node weight, fat conjugate tail); V blows up at zero anyway, so a
        // barrier-free pass from the stalled point is safe
        SolverOptions free_opts = opts;
        free_opts.barrier_y = 0.0;
        DualSolveResult rescue = detail::solve_dual_attempt(prob, y, free_opts, res.q);
        rescue.iterations += res.iterations;
        if (rescue.converged || rescue.value < res.value) res = std::move(rescue);
    }
    if (!res.converged) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.3e", res.fw_gap);
        throw SolverError(SolverStage::dual_solve,
                          std::string("solve_dual: stationarity residual ") + buf +
                              " above tolerance after all phases");
    }
    return res;
}

/// Convenience overloads matching the per-operation contracts.
inline double dual_value(const DualProblem& prob, double y, const Vector& q, Vector* grad = nullptr) {
    if (!(y > 0.0)) throw SolverError(SolverStage::dual_solve, "dual_value: y must be positive");
    return prob.evaluate(y, q, grad, 0.0);
}

/// V'(y) = <Q, E_T> - sum over charged nodes of P w Y I(t, n, y Y),
/// evaluated at the dual optimizer for y.
inline double dual_derivative(const DualProblem& prob, double y, const Vector& q_hat) {
    const auto& tree = prob.scenario().tree;
    Vector dens = prob.density(q_hat);
    double v = prob.endowment_pairing(q_hat);
    for (NodeId n : prob.charged_nodes()) {
        const double yn = dens[std::size_t(n)];
        if (yn <= 0.0) continue; // Y I(yY) -> 0 mass under Q
        v -= tree.path_prob(n) * prob.weight(n) * yn *
             prob.field().inverse_marginal(tree.time_index(n), n, y * yn);
    }
    return v;
}

// ---------------------------------------------------------------------------
// Matching the dual scale y to the initial wealth x
// ---------------------------------------------------------------------------

struct YMatchResult {
    double y = 1.0;
    DualSolveResult dual;
    int evaluations = 0;
};

/// Finds y with V'(y) = -x by a safeguarded bisection/secant hybrid on log y;
/// V' is nondecreasing (V convex), so a sign-changing bracket pins the root.
/// Dual solves are warm-started across evaluations.
inline YMatchResult match_y_to_x(const DualProblem& prob, double x, const SolverOptions& opts = {}) {
    if (x < 0.0) throw SolverError(SolverStage::y_match, "match_y_to_x: x must be nonnegative");
    YMatchResult out;
    Vector warm = prob.interior_point();

    auto eval = [&](double y) {
        out.dual = solve_dual(prob, y, opts, &warm);
        warm = out.dual.q;
        ++out.evaluations;
        return dual_derivative(prob, y, out.dual.q) + x;
    };
    // |V'(y) + x| is the budget residual of the recovered plan; keep it a
    // comfortable factor inside the budget certificate. The duality gap of
    // the recovered plan is y * |V'(y) + x|, so that product is held inside
    // the gap certificate as well (it bites when x is tiny and y huge).
    const double tol =
        std::min(opts.y_match_tol * std::max(1.0, x), 0.25 * opts.tol_budget);
    auto matched = [&](double y, double g) {
        if (std::fabs(g) > tol) return false;
        const double gap_budget =
            0.2 * opts.tol_gap_rel * std::max(1.0, std::fabs(out.dual.value + x * y));
        return y * std::fabs(g) <= gap_budget;
    };

    double ylo = 1.0, yhi = 1.0;
    double glo = eval(1.0), ghi = glo;
    if (matched(1.0, glo)) { out.y = 1.0; return out; }
    if (glo > 0.0) {
        // V'(y) + x decreasing as y shrinks (V' nondecreasing): expand down
        while (glo > 0.0) {
            yhi = ylo; ghi = glo;
            ylo *= 0.25;
            if (ylo < opts.y_min)
                throw SolverError(SolverStage::y_match, "match_y_to_x: bracket exhausted below");
            glo = eval(ylo);
        }
    } else {
        while (ghi < 0.0) {
            ylo = yhi; glo = ghi;
            yhi *= 4.0;
            if (yhi > opts.y_max)
                throw SolverError(SolverStage::y_match,
                                  "match_y_to_x: bracket exhausted above (V'(inf) < -x?)");
            ghi = eval(yhi);
        }
    }

    // bisection on log y with a secant candidate when it stays well inside
    double y = std::sqrt(ylo * yhi), g = eval(y);
    for (int it = 0; it < 200 && !matched(y, g); ++it) {
        if (g > 0.0) { yhi = y; ghi = g; } else { ylo = y; glo = g; }
        const double tlo = std::log(ylo), thi = std::log(yhi);
        double cand = 0.5 * (tlo + thi);
        if (ghi > glo) {
            const double secant = tlo + (thi - tlo) * (-glo) / (ghi - glo);
            if (secant > tlo + 0.1 * (thi - tlo) && secant < thi - 0.1 * (thi - tlo)) cand = secant;
        }
        y = std::exp(cand);
        g = eval(y);
        if (thi - tlo < 1e-15) break;
    }
    if (!matched(y, g))
        throw SolverError(SolverStage::y_match, "match_y_to_x: residual " + std::to_string(g) +
                                                    " above tolerance");
    out.y = y;
    return out;
}

// ---------------------------------------------------------------------------
// Recovery and certificates
// ---------------------------------------------------------------------------

/// c(n) = I(t(n), n, y Y(n)) on every charged node; zero elsewhere.
inline Vector recover_consumption(const DualProblem& prob, double y, const Vector& q_hat) {
    const auto& tree = prob.scenario().tree;
    Vector dens = prob.density(q_hat);
    Vector rate(tree.size(), 0.0);
    for (NodeId n : prob.charged_nodes()) {
        const double yn = dens[std::size_t(n)];
        if (yn <= 1e-14)
            throw SolverError(SolverStage::recovery,
                              "dual optimizer degenerate on the support of mu (node " +
                                  std::to_string(n) + ")");
        rate[std::size_t(n)] = prob.field().inverse_marginal(tree.time_index(n), n, y * yn);
    }
    return rate;
}

struct BudgetCheck {
    double max_slack = 0.0; // max over D of E[int Y dC] - <Q,E_T> - x
    Vector worst_q;
};

/// Prop-2.12-style certificate. On the tree E[int Y^Q dC] = <Q, C_T>, so the
/// sup over D of the budget gap is a single LP (vertex scan when the
/// enumeration is cheap, which is exact by linearity).
inline BudgetCheck budget_check(const MarketScenario& s, const SupermartingalePolytope& poly,
                                const Vector& consumption_cum, double x) {
    BudgetCheck out;
    Vector payoff; // C_T - E_T per terminal ordinal
    for (NodeId t : s.tree.terminals())
        payoff.push_back(consumption_cum[std::size_t(t)] - s.endowment[std::size_t(t)]);
    Vector neg(payoff.size());
    for (std::size_t i = 0; i < payoff.size(); ++i) neg[i] = -payoff[i];
    out.worst_q = poly.minimize_linear(neg);
    out.max_slack = dot(out.worst_q, payoff) - x;
    return out;
}

struct PortfolioRecovery {
    std::vector<Vector> holdings;   // per node id (unused at terminals)
    Vector superreplication;        // Z per node: sup_Q E_Q[C_T - E_T | n]
    Vector financing_wealth;        // X = x + gains
    Vector slack;                   // F = X - Z, nonnegative and nondecreasing
    Vector wealth;                  // W = X + E - C
};

/// Discrete optional decomposition. Backward pass: Z(n) is the node-wise LP
/// sup of E[Z children] over one-step measures obeying the cone drift
/// conditions. Forward pass: H(n) superhedges Z across the children (always
/// feasible by LP duality once Z_root <= x). A plan whose budget certificate
/// fails has Z_root > x and is rejected here: no portfolio financed by x can
/// dominate the superreplication cost.
inline PortfolioRecovery recover_portfolio(const MarketScenario& s, const Vector& consumption_cum,
                                           double x, double tol = 1e-9) {
    const auto& tree = s.tree;
    const std::size_t nn = tree.size();
    PortfolioRecovery out;
    out.superreplication.assign(nn, 0.0);
    out.holdings.assign(nn, Vector());
    auto order = tree.top_down();

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeId u = *it;
        if (tree.is_terminal(u)) {
            out.superreplication[std::size_t(u)] =
                consumption_cum[std::size_t(u)] - s.endowment[std::size_t(u)];
            continue;
        }
        const auto& children = tree.node(u).children;
        const std::size_t nb = children.size();
        LinearProgram lp;
        lp.objective.assign(nb, 0.0);
        for (std::size_t j = 0; j < nb; ++j)
            lp.objective[j] = -out.superreplication[std::size_t(children[j])]; // maximize
        lp.add_row(Vector(nb, 1.0), LpRelation::eq, 1.0);
        for (const auto& g : s.cone.generators) {
            Vector row(nb, 0.0);
            bool nonzero = false;
            for (std::size_t j = 0; j < nb; ++j) {
                double gd = 0.0;
                for (int k = 0; k < s.d; ++k) gd += g[std::size_t(k)] * s.price_change(children[j], k);
                row[j] = gd;
                if (gd != 0.0) nonzero = true;
            }
            if (nonzero) lp.add_row(std::move(row), LpRelation::le, 0.0);
        }
        LpResult res = solve_lp(lp);
        if (res.status != LpStatus::optimal)
            throw SolverError(SolverStage::internal,
                              "recover_portfolio: one-step measure LP failed at node " +
                                  std::to_string(u));
        out.superreplication[std::size_t(u)] = -res.value;
    }

    const double z0 = out.superreplication[std::size_t(tree.root())];
    if (z0 > x + tol)
        throw SolverError(SolverStage::recovery,
                          "recover_portfolio: plan not financeable from x (superreplication cost " +
                              std::to_string(z0) + " > x)");

    // forward superhedge: Z(n) + H . dS >= Z(child); X dominates Z throughout
    out.financing_wealth.assign(nn, 0.0);
    out.financing_wealth[std::size_t(tree.root())] = x;
    const std::size_t ng = s.cone.generators.size();
    for (NodeId u : order) {
        if (tree.is_terminal(u)) continue;
        const auto& children = tree.node(u).children;
        LinearProgram lp;
        lp.objective.assign(ng, 1.0); // smallest cone coefficients among feasible hedges
        for (NodeId c : children) {
            Vector row(ng, 0.0);
            for (std::size_t j = 0; j < ng; ++j)
                for (int k = 0; k < s.d; ++k)
                    row[j] += s.cone.generators[j][std::size_t(k)] * s.price_change(c, k);
            lp.add_row(std::move(row), LpRelation::ge,
                       out.superreplication[std::size_t(c)] - out.superreplication[std::size_t(u)]);
        }
        LpResult res = solve_lp(lp);
        if (res.status != LpStatus::optimal)
            throw SolverError(SolverStage::internal,
                              "recover_portfolio: hedge LP infeasible at node " + std::to_string(u) +
                                  " (budget characterization violated)");
        Vector h(std::size_t(s.d), 0.0);
        for (std::size_t j = 0; j < ng; ++j)
            for (int k = 0; k < s.d; ++k) h[std::size_t(k)] += res.x[j] * s.cone.generators[j][std::size_t(k)];
        out.holdings[std::size_t(u)] = h;
        for (NodeId c : children) {
            double gain = 0.0;
            for (int k = 0; k < s.d; ++k) gain += h[std::size_t(k)] * s.price_change(c, k);
            out.financing_wealth[std::size_t(c)] = out.financing_wealth[std::size_t(u)] + gain;
        }
    }

    out.slack.resize(nn);
    out.wealth.resize(nn);
    for (std::size_t i = 0; i < nn; ++i) {
        out.slack[i] = out.financing_wealth[i] - out.superreplication[i];
        out.wealth[i] = out.financing_wealth[i] + s.endowment[i] - consumption_cum[i];
    }
    return out;
}

/// Expected utility of a consumption-rate plan; -inf sentinel when the
/// field is unbounded below and the plan hits zero on a charged node.
inline double primal_value(const MarketScenario& s, const UtilityField& field, const Vector& rate) {
    double v = 0.0;
    for (NodeId n = 0; n < NodeId(s.tree.size()); ++n) {
        const int t = s.tree.time_index(n);
        const double w = s.mu.weights[std::size_t(t)];
        if (w <= 0.0) continue;
        const double u = field.value(t, n, rate[std::size_t(n)]);
        if (u == -kInf) return -kInf;
        v += s.tree.path_prob(n) * w * u;
    }
    return v;
}

/// Worst value over D of the first-order optimality form
///   E int (Y^Q - Y^Qhat) I(t, y Y^Qhat) dmu + <Qhat - Q, E_T>,
/// which is nonpositive at the dual optimizer. Linear in q, so the max is
/// attained at a vertex; evaluated through one LP (exact), with the vertex
/// scan available for reporting.
inline double variational_inequality_max(const DualProblem& prob, double y, const Vector& q_hat) {
    const auto& tree = prob.scenario().tree;
    Vector dens = prob.density(q_hat);
    // beta_w = sum over charged path nodes of w(t) I(t,n,yY) - E_T(w)
    Vector pathsum(tree.size(), 0.0);
    for (NodeId u : tree.top_down()) {
        NodeId p = tree.node(u).parent;
        double acc = p == kNoNode ? 0.0 : pathsum[std::size_t(p)];
        if (prob.scenario().mu.charges(tree.time_index(u))) {
            const double yn = dens[std::size_t(u)];
            if (yn <= 1e-14)
                throw SolverError(SolverStage::certificates,
                                  "variational inequality: degenerate density on charged node");
            acc += prob.weight(u) * prob.field().inverse_marginal(tree.time_index(u), u, y * yn);
        }
        pathsum[std::size_t(u)] = acc;
    }
    Vector beta(prob.polytope().num_paths());
    for (std::size_t w = 0; w < beta.size(); ++w)
        beta[w] = pathsum[std::size_t(tree.terminals()[w])] - prob.terminal_endowment()[w];
    const double at_qhat = dot(beta, q_hat);
    return prob.polytope().support_value(beta) - at_qhat;
}

/// Same certificate evaluated vertex by vertex (reporting flavor).
inline double variational_inequality_over_vertices(const DualProblem& prob, double y,
                                                   const Vector& q_hat,
                                                   const std::vector<DualMeasure>& verts) {
    double worst = -kInf;
    const auto& tree = prob.scenario().tree;
    Vector dens = prob.density(q_hat);
    for (const auto& v : verts) {
        Vector dv = prob.density(v.q);
        double lhs = prob.endowment_pairing(q_hat) - prob.endowment_pairing(v.q);
        for (NodeId n : prob.charged_nodes()) {
            const double yn = dens[std::size_t(n)];
            lhs += tree.path_prob(n) * prob.weight(n) * (dv[std::size_t(n)] - yn) *
                   prob.field().inverse_marginal(tree.time_index(n), n, y * yn);
        }
        worst = std::max(worst, lhs);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Full solve
// ---------------------------------------------------------------------------

struct Solution {
    double x = 0.0;
    double y = 0.0;
    Vector consumption_rate;   // per node, zero off supp mu
    Vector consumption_cum;    // C per node
    Vector q_hat;              // dual optimizer, terminal-ordinal weights
    Vector density;            // Y^Qhat per node
    std::vector<Vector> holdings;
    Vector wealth;             // W per node under the financing portfolio
    double primal = 0.0;       // U(x)
    double dual = 0.0;         // V(y)
    double gap_abs = 0.0;      // |U - (V + xy)|
    double gap_rel = 0.0;
    double endow_value = 0.0;  // <Qhat, E_T>
    double budget_slack = 0.0;
    double vi_worst = 0.0;
    double fw_gap = 0.0;
    int dual_iterations = 0;
    int y_evaluations = 0;
    bool certificates_ok = false;
};

/// match_y_to_x -> solve_dual -> recover consumption & portfolio -> certify.
inline Solution solve(const MarketScenario& s, UtilityFieldPtr field, double x,
                      const SolverOptions& opts = {}) {
    {
        auto rep = validate_scenario(s);
        if (!rep.ok()) {
            std::string msg = "invalid scenario:";
            bool arbitrage_only = true;
            for (const auto& v : rep.violations) {
                msg += " [" + v + "]";
                if (v.find("arbitrage") == std::string::npos) arbitrage_only = false;
            }
            throw SolverError(arbitrage_only ? SolverStage::no_arbitrage : SolverStage::validation,
                              msg);
        }
    }
    DualProblem prob(s, field);
    YMatchResult ym = match_y_to_x(prob, x, opts);

    // final polish: the variational-inequality and budget certificates see
    // the stationarity residual divided by y, so tighten accordingly
    SolverOptions polish = opts;
    polish.tol_opt = std::max(
        std::min(opts.tol_opt, 0.2 * opts.tol_vi * ym.y / (1.0 + std::fabs(ym.dual.value))),
        1e-14);
    DualSolveResult refined = solve_dual(prob, ym.y, polish, &ym.dual.q);

    Solution sol;
    sol.x = x;
    sol.y = ym.y;
    sol.q_hat = refined.q;
    sol.dual = refined.value;
    sol.fw_gap = refined.fw_gap;
    sol.dual_iterations = ym.dual.iterations + refined.iterations;
    sol.y_evaluations = ym.evaluations;
    sol.density = prob.density(sol.q_hat);
    sol.endow_value = prob.endowment_pairing(sol.q_hat);

    sol.consumption_rate = recover_consumption(prob, sol.y, sol.q_hat);
    sol.consumption_cum = cumulative_from_rate(s, sol.consumption_rate);
    sol.primal = primal_value(s, *field, sol.consumption_rate);

    sol.gap_abs = std::fabs(sol.primal - (sol.dual + x * sol.y));
    sol.gap_rel = sol.gap_abs / std::max(1.0, std::fabs(sol.primal));

    auto bc = budget_check(s, prob.polytope(), sol.consumption_cum, x);
    sol.budget_slack = bc.max_slack;

    // the plan carries the (certified) budget residual; financing must admit it
    const double finance_tol = std::max(opts.tol_budget, sol.budget_slack + 0.5 * opts.tol_budget);
    auto pr = recover_portfolio(s, sol.consumption_cum, x, finance_tol);
    sol.holdings = std::move(pr.holdings);
    sol.wealth = std::move(pr.wealth);

    if (opts.run_certificates) {
        sol.vi_worst = variational_inequality_max(prob, sol.y, sol.q_hat);
        sol.certificates_ok = sol.gap_rel <= opts.tol_gap_rel &&
                              sol.budget_slack <= opts.tol_budget &&
                              sol.vi_worst <= opts.tol_vi;
    } else {
        sol.certificates_ok = true;
    }
    return sol;
}

} // namespace treedual
