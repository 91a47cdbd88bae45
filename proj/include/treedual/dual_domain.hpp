#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "treedual/linalg.hpp"
#include "treedual/market.hpp"

namespace treedual {

/// A point of the dual domain: one weight per terminal node (path).
/// Boundary points of the closure (some q = 0) are first-class members.
struct DualMeasure {
    Vector q;
};

/// Density process Y^Q: Y(n) = Q(n-event) / P(n-event), one value per node.
struct DensityProcess {
    Vector y;
};

/// {q >= 0, sum q = 1, A q <= 0} in terminal-weight coordinates.
class SupermartingalePolytope {
public:
    SupermartingalePolytope() = default;

    explicit SupermartingalePolytope(std::size_t num_paths,
                                     std::vector<DriftConstraintRow> rows = {})
        : num_paths_(num_paths), rows_(std::move(rows)) {}

    std::size_t num_paths() const { return num_paths_; }
    const std::vector<DriftConstraintRow>& rows() const { return rows_; }

    bool contains(const Vector& q, double tol = 1e-9) const {
        if (q.size() != num_paths_) return false;
        double s = 0.0;
        for (double v : q) {
            if (v < -tol) return false;
            s += v;
        }
        if (std::fabs(s - 1.0) > tol) return false;
        for (const auto& r : rows_)
            if (dot(r.coeffs, q) > tol) return false;
        return true;
    }

    /// min c.q over the polytope (the linear minimization oracle).
    Vector minimize_linear(const Vector& c) const {
        LinearProgram lp;
        lp.objective = c;
        Vector ones(num_paths_, 1.0);
        lp.add_row(ones, LpRelation::eq, 1.0);
        for (const auto& r : rows_) lp.add_row(r.coeffs, LpRelation::le, 0.0);
        LpResult res = solve_lp(lp);
        if (res.status != LpStatus::optimal)
            throw std::runtime_error("SupermartingalePolytope: linear subproblem failed");
        return res.x;
    }

    double support_value(const Vector& c) const {
        Vector negc(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) negc[i] = -c[i];
        return dot(minimize_linear(negc), c);
    }

private:
    std::size_t num_paths_ = 0;
    std::vector<DriftConstraintRow> rows_;
};

inline SupermartingalePolytope supermartingale_constraints(const MarketScenario& s) {
    return SupermartingalePolytope(s.tree.terminals().size(), supermartingale_rows(s));
}

inline bool is_in_D(const SupermartingalePolytope& poly, const Vector& q, double tol = 1e-9) {
    return poly.contains(q, tol);
}

/// Y(n) = (sum of q over terminal descendants of n) / P(n). A P-martingale
/// with Y(root) = 1 for every measure in the polytope.
inline DensityProcess density_process(const MarketScenario& s, const DualMeasure& q) {
    const std::size_t n = s.tree.size();
    Vector mass(n, 0.0);
    auto order = s.tree.top_down();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeId u = *it;
        if (s.tree.is_terminal(u)) {
            mass[std::size_t(u)] = q.q[std::size_t(s.tree.terminal_ordinal(u))];
        } else {
            double m = 0.0;
            for (NodeId c : s.tree.node(u).children) m += mass[std::size_t(c)];
            mass[std::size_t(u)] = m;
        }
    }
    DensityProcess out;
    out.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.y[i] = mass[i] / s.tree.path_prob(NodeId(i));
    return out;
}

// ---------------------------------------------------------------------------
// Euclidean projection onto the polytope (primal active-set QP)
// ---------------------------------------------------------------------------

namespace detail {

/// All constraints in "a.q <= b" orientation plus the simplex equality.
/// Rows are L2-normalized so working-set Gram matrices stay well conditioned.
struct ProjectionWorkspace {
    std::vector<Vector> ineq;  // -e_i rows (q_i >= 0) then drift rows
    Vector ineq_rhs;
    std::size_t n = 0;
};

inline ProjectionWorkspace projection_workspace(const SupermartingalePolytope& poly) {
    ProjectionWorkspace w;
    w.n = poly.num_paths();
    for (std::size_t i = 0; i < w.n; ++i) {
        Vector row(w.n, 0.0);
        row[i] = -1.0;
        w.ineq.push_back(std::move(row));
        w.ineq_rhs.push_back(0.0);
    }
    for (const auto& r : poly.rows()) {
        const double nrm = norm2(r.coeffs);
        if (nrm <= 0.0) continue;
        Vector row(r.coeffs);
        for (double& v : row) v /= nrm;
        w.ineq.push_back(std::move(row));
        w.ineq_rhs.push_back(0.0);
    }
    return w;
}

/// Orthonormal basis of the span of {ones} + the working-set rows, used for
/// independence tests when rows enter the set.
class WorkingSetBasis {
public:
    explicit WorkingSetBasis(std::size_t n) : n_(n) {
        Vector ones(n, 1.0 / std::sqrt(double(n)));
        basis_.push_back(std::move(ones));
    }

    /// Residual norm of `row` against the current span.
    double residual(const Vector& row, Vector* out = nullptr) const {
        Vector r = row;
        for (const auto& b : basis_) axpy(-dot(b, r), b, r);
        // re-orthogonalize once for numerical safety
        for (const auto& b : basis_) axpy(-dot(b, r), b, r);
        const double nrm = norm2(r);
        if (out) *out = std::move(r);
        return nrm;
    }

    bool try_add(const Vector& row, double tol = 1e-8) {
        Vector r;
        const double nrm = residual(row, &r);
        if (nrm <= tol) return false;
        for (double& v : r) v /= nrm;
        basis_.push_back(std::move(r));
        return true;
    }

    void rebuild(const std::vector<Vector>& rows) {
        basis_.clear();
        Vector ones(n_, 1.0 / std::sqrt(double(n_)));
        basis_.push_back(std::move(ones));
        for (const auto& row : rows) try_add(row);
    }

    /// Removes from v every component in the span (leaves the face tangent).
    void project_out(Vector& v) const {
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis_) axpy(-dot(b, v), b, v);
    }

private:
    std::size_t n_;
    std::vector<Vector> basis_;
};

/// Equality-constrained projection of `target` onto {sum q = 1} cut with the
/// working-set rows: q = target + N' lam, N q = b. Solves the small normal
/// system N N' lam = b - N target. Returns false if N N' is singular.
inline bool project_on_working_set(const ProjectionWorkspace& w, const std::vector<std::size_t>& ws,
                                   const Vector& target, Vector& q_out, Vector& lam_out) {
    const std::size_t k = ws.size() + 1; // + simplex equality
    const std::size_t n = w.n;
    auto row_of = [&](std::size_t r) -> const Vector* {
        if (r == 0) return nullptr; // ones row
        return &w.ineq[ws[r - 1]];
    };
    auto rhs_of = [&](std::size_t r) { return r == 0 ? 1.0 : w.ineq_rhs[ws[r - 1]]; };
    auto dot_row = [&](std::size_t r, const Vector& v) {
        if (r == 0) {
            double s = 0.0;
            for (double x : v) s += x;
            return s;
        }
        return dot(*row_of(r), v);
    };
    Matrix gram(k, k);
    Vector rhs(k);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double g;
            if (i == 0 && j == 0) g = double(n);
            else if (j == 0) {
                g = 0.0;
                for (double x : *row_of(i)) g += x;
            } else g = dot(*row_of(i), *row_of(j));
            gram(i, j) = gram(j, i) = g;
        }
        rhs[i] = rhs_of(i) - dot_row(i, target);
    }
    Vector lam;
    if (!treedual::solve(gram, rhs, lam, 1e-11)) return false;
    q_out = target;
    for (std::size_t i = 0; i < k; ++i) {
        if (i == 0) {
            for (double& x : q_out) x += lam[0];
        } else {
            axpy(lam[i], *row_of(i), q_out);
        }
    }
    lam_out = lam;
    return true;
}

} // namespace detail

/// Euclidean projection of `target` onto the polytope. `start` must be a
/// feasible point (e.g. from the no-arbitrage LP); active-set iterations move
/// from it to the projection.
inline Vector project_to_polytope(const SupermartingalePolytope& poly, const Vector& target,
                                  const Vector& start) {
    const auto w = detail::projection_workspace(poly);
    const std::size_t n = w.n;
    const double feas_tol = 1e-11;

    Vector q = start;
    std::vector<std::size_t> ws;       // indices into w.ineq
    std::vector<Vector> ws_rows;       // the rows themselves
    detail::WorkingSetBasis basis(n);

    auto add_row = [&](std::size_t i) {
        if (!basis.try_add(w.ineq[i])) return false;
        ws.push_back(i);
        ws_rows.push_back(w.ineq[i]);
        return true;
    };
    auto drop_row = [&](std::size_t pos) {
        ws.erase(ws.begin() + long(pos));
        ws_rows.erase(ws_rows.begin() + long(pos));
        basis.rebuild(ws_rows);
    };

    // seed with an independent subset of the constraints active at the start
    for (std::size_t i = 0; i < w.ineq.size(); ++i)
        if (std::fabs(dot(w.ineq[i], q) - w.ineq_rhs[i]) <= feas_tol) add_row(i);

    const int max_iter = 200 + 20 * int(n + w.ineq.size());
    for (int it = 0; it < max_iter; ++it) {
        Vector qn, lam;
        while (!detail::project_on_working_set(w, ws, target, qn, lam)) {
            // Gram went singular despite the basis test: shed the newest row
            if (ws.empty()) throw std::runtime_error("project_to_polytope: degenerate working set");
            drop_row(ws.size() - 1);
        }

        Vector p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = qn[i] - q[i];
        const double pnorm = norm2(p);
        double scale = 1.0;
        for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::fabs(target[i] - q[i]));

        if (pnorm <= 1e-12 * scale) {
            // at the working-set minimizer; check multiplier signs
            // (constraint rows enter as q = target + N'lam, a.q <= b active
            //  requires multiplier mu = -lam >= 0)
            std::size_t worst = ws.size();
            double most_neg = -1e-10;
            for (std::size_t r = 0; r < ws.size(); ++r) {
                double mu = -lam[r + 1];
                if (mu < most_neg) { most_neg = mu; worst = r; }
            }
            if (worst == ws.size()) return qn;
            drop_row(worst);
            continue;
        }

        // step as far as the blocking constraints allow; directional
        // derivatives are judged relative to |p| (rows are unit-norm), and
        // rows already implied by the working set cannot block (their value
        // is constant on the face)
        double alpha = 1.0;
        std::size_t blocking = w.ineq.size();
        for (std::size_t i = 0; i < w.ineq.size(); ++i) {
            if (std::find(ws.begin(), ws.end(), i) != ws.end()) continue;
            const double ap = dot(w.ineq[i], p);
            if (ap <= 1e-10 * pnorm) continue;
            const double slack = w.ineq_rhs[i] - dot(w.ineq[i], q);
            const double a = slack / ap;
            if (a < alpha - 1e-15 && basis.residual(w.ineq[i]) > 1e-8) {
                alpha = std::max(0.0, a);
                blocking = i;
            }
        }
        axpy(alpha, p, q);
        if (blocking != w.ineq.size()) add_row(blocking);
        else if (alpha >= 1.0) q = qn; // full step: land exactly on the subproblem solution
    }
    throw std::runtime_error("project_to_polytope: iteration limit");
}

// ---------------------------------------------------------------------------
// Vertex enumeration (incremental double description over the simplex)
// ---------------------------------------------------------------------------

inline constexpr std::size_t kVertexPathGuard = 64;

/// Exact vertex list of the polytope, built by cutting the unit simplex with
/// one drift row at a time. Guarded: trees beyond kVertexPathGuard paths (or
/// enumerations past `max_vertices`) throw; callers fall back to LPs.
inline std::vector<DualMeasure> polytope_vertices(const SupermartingalePolytope& poly,
                                                  std::size_t max_vertices = 200000) {
    const std::size_t n = poly.num_paths();
    if (n > kVertexPathGuard)
        throw std::runtime_error("polytope_vertices: path count exceeds enumeration guard");

    const double tol = 1e-10;
    std::vector<Vector> verts;
    for (std::size_t i = 0; i < n; ++i) {
        Vector v(n, 0.0);
        v[i] = 1.0;
        verts.push_back(std::move(v));
    }

    // tight-set bitmask per vertex over (nonneg constraints | processed rows)
    const std::size_t nrows = poly.rows().size();
    auto tight_sets = [&](const std::vector<Vector>& vs, std::size_t rows_done) {
        std::vector<std::vector<bool>> ts(vs.size(), std::vector<bool>(n + rows_done, false));
        for (std::size_t v = 0; v < vs.size(); ++v) {
            for (std::size_t i = 0; i < n; ++i)
                if (vs[v][i] <= tol) ts[v][i] = true;
            for (std::size_t r = 0; r < rows_done; ++r)
                if (std::fabs(dot(poly.rows()[r].coeffs, vs[v])) <= tol) ts[v][n + r] = true;
        }
        return ts;
    };

    for (std::size_t r = 0; r < nrows; ++r) {
        const Vector& a = poly.rows()[r].coeffs;
        std::vector<double> val(verts.size());
        for (std::size_t v = 0; v < verts.size(); ++v) val[v] = dot(a, verts[v]);

        bool any_pos = false;
        for (double x : val)
            if (x > tol) { any_pos = true; break; }
        if (!any_pos) continue;

        auto ts = tight_sets(verts, r);
        std::vector<Vector> next;
        for (std::size_t v = 0; v < verts.size(); ++v)
            if (val[v] <= tol) next.push_back(verts[v]);

        for (std::size_t u = 0; u < verts.size(); ++u) {
            if (val[u] <= tol) continue; // u on the violating side
            for (std::size_t v = 0; v < verts.size(); ++v) {
                if (val[v] >= -tol) continue; // strictly inside needed
                // adjacency: no third vertex is tight on everything u and v share
                bool adjacent = true;
                for (std::size_t wv = 0; wv < verts.size() && adjacent; ++wv) {
                    if (wv == u || wv == v) continue;
                    bool covers = true;
                    for (std::size_t bset = 0; bset < ts[u].size() && covers; ++bset)
                        if (ts[u][bset] && ts[v][bset] && !ts[wv][bset]) covers = false;
                    if (covers) adjacent = false;
                }
                if (!adjacent) continue;
                const double theta = val[u] / (val[u] - val[v]); // a.(u + theta(v-u)) = 0
                Vector wnew(n);
                for (std::size_t i = 0; i < n; ++i)
                    wnew[i] = verts[u][i] + theta * (verts[v][i] - verts[u][i]);
                bool dup = false;
                for (const auto& e : next) {
                    double diff = 0.0;
                    for (std::size_t i = 0; i < n; ++i) diff = std::max(diff, std::fabs(e[i] - wnew[i]));
                    if (diff <= 1e-9) { dup = true; break; }
                }
                if (!dup) next.push_back(std::move(wnew));
                if (next.size() > max_vertices)
                    throw std::runtime_error("polytope_vertices: vertex count exceeds guard");
            }
        }
        verts = std::move(next);
    }

    std::vector<DualMeasure> out;
    out.reserve(verts.size());
    for (auto& v : verts) {
        // clean tiny negatives and renormalize exactly
        double s = 0.0;
        for (double& x : v) {
            if (x < 0.0 && x > -1e-12) x = 0.0;
            s += x;
        }
        for (double& x : v) x /= s;
        out.push_back(DualMeasure{std::move(v)});
    }
    return out;
}

/// Vertices of the scenario's dual polytope.
inline std::vector<DualMeasure> vertices(const MarketScenario& s) {
    return polytope_vertices(supermartingale_constraints(s));
}

/// Projection entry point: finds a feasible start via the no-arbitrage LP.
inline DualMeasure project_to_D(const MarketScenario& s, const SupermartingalePolytope& poly,
                                const Vector& q_raw) {
    Vector start;
    if (!detail::has_strictly_positive_dual_measure(s, &start)) {
        if (start.empty())
            throw std::runtime_error("project_to_D: dual domain is empty");
    }
    if (poly.contains(q_raw, 1e-12)) return DualMeasure{q_raw};
    return DualMeasure{project_to_polytope(poly, q_raw, start)};
}

} // namespace treedual
