#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "treedual/linalg.hpp"

namespace treedual {

enum class LpRelation { le, eq, ge };

enum class LpStatus { optimal, infeasible, unbounded, iteration_limit };

struct LpResult {
    LpStatus status = LpStatus::iteration_limit;
    Vector x;      // structural variables only
    double value = std::numeric_limits<double>::quiet_NaN();
};

/// min c'x  s.t.  A_i x (<=|=|>=) b_i,  x >= 0.
/// Free variables are handled by the caller (split into x+ - x-).
struct LinearProgram {
    std::vector<Vector> rows;
    std::vector<LpRelation> relations;
    Vector rhs;
    Vector objective;

    std::size_t num_vars() const { return objective.size(); }
    std::size_t num_rows() const { return rows.size(); }

    void add_row(Vector coeffs, LpRelation rel, double b) {
        if (coeffs.size() != num_vars()) throw std::invalid_argument("LinearProgram: row width mismatch");
        rows.push_back(std::move(coeffs));
        relations.push_back(rel);
        rhs.push_back(b);
    }
};

/// Dense two-phase primal simplex. Dantzig pricing with a permanent switch to
/// Bland's rule once degenerate pivots pile up, which rules out cycling. Meant
/// for the small, well-scaled programs this library produces (tens of rows).
class SimplexSolver {
public:
    explicit SimplexSolver(double feas_tol = 1e-9, int max_iter = 5000)
        : feas_tol_(feas_tol), max_iter_(max_iter) {}

    LpResult solve(const LinearProgram& lp) const {
        const std::size_t m = lp.num_rows();
        const std::size_t n = lp.num_vars();

        std::size_t n_slack = 0;
        for (auto r : lp.relations)
            if (r != LpRelation::eq) ++n_slack;

        // Column layout: [structural | slack/surplus | artificial], one
        // artificial per row (unused ones are never basic).
        const std::size_t n_art = m;
        const std::size_t ncols = n + n_slack + n_art;
        Matrix tab(m + 1, ncols + 1, 0.0);
        std::vector<std::size_t> basis(m);

        std::size_t slack_at = n;
        std::vector<bool> is_art(ncols, false);
        for (std::size_t j = n + n_slack; j < ncols; ++j) is_art[j] = true;

        for (std::size_t i = 0; i < m; ++i) {
            double sign = lp.rhs[i] < 0.0 ? -1.0 : 1.0;
            for (std::size_t j = 0; j < n; ++j) tab(i, j) = sign * lp.rows[i][j];
            tab(i, ncols) = sign * lp.rhs[i];

            LpRelation rel = lp.relations[i];
            if (sign < 0.0) {
                if (rel == LpRelation::le) rel = LpRelation::ge;
                else if (rel == LpRelation::ge) rel = LpRelation::le;
            }
            if (rel != LpRelation::eq) {
                tab(i, slack_at) = (rel == LpRelation::le) ? 1.0 : -1.0;
                ++slack_at;
            }
            // a slack with +1 coefficient can start in the basis; otherwise
            // use the row's artificial variable
            if (rel == LpRelation::le) {
                basis[i] = slack_at - 1;
            } else {
                basis[i] = n + n_slack + i;
                tab(i, basis[i]) = 1.0;
            }
        }

        // ---- phase 1: minimize the sum of artificials
        {
            Vector cost(ncols, 0.0);
            for (std::size_t j = 0; j < ncols; ++j)
                if (is_art[j]) cost[j] = 1.0;
            price_out(tab, basis, cost);
            LpStatus st = iterate(tab, basis, is_art, /*allow_art=*/true);
            if (st == LpStatus::iteration_limit) return {st, {}, 0.0};
            const double w = -tab(m, ncols);
            if (w > 1e-7 * (1.0 + rhs_scale(lp))) return {LpStatus::infeasible, {}, w};
            purge_artificials(tab, basis, is_art);
        }

        // ---- phase 2
        {
            Vector cost(ncols, 0.0);
            for (std::size_t j = 0; j < n; ++j) cost[j] = lp.objective[j];
            price_out(tab, basis, cost);
            LpStatus st = iterate(tab, basis, is_art, /*allow_art=*/false);
            if (st != LpStatus::optimal) return {st, {}, 0.0};
        }

        LpResult res;
        res.status = LpStatus::optimal;
        res.x.assign(n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            if (basis[i] < n) res.x[basis[i]] = tab(i, ncols);
        res.value = dot(res.x, lp.objective);
        return res;
    }

private:
    double feas_tol_;
    int max_iter_;

    static double rhs_scale(const LinearProgram& lp) {
        double s = 0.0;
        for (double b : lp.rhs) s = std::max(s, std::fabs(b));
        return s;
    }

    static void price_out(Matrix& tab, const std::vector<std::size_t>& basis, const Vector& cost) {
        const std::size_t m = tab.rows() - 1;
        const std::size_t w = tab.cols();
        for (std::size_t j = 0; j < w - 1; ++j) tab(m, j) = cost[j];
        tab(m, w - 1) = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double cb = cost[basis[i]];
            if (cb == 0.0) continue;
            for (std::size_t j = 0; j < w; ++j) tab(m, j) -= cb * tab(i, j);
        }
    }

    LpStatus iterate(Matrix& tab, std::vector<std::size_t>& basis,
                     const std::vector<bool>& is_art, bool allow_art) const {
        const std::size_t m = tab.rows() - 1;
        const std::size_t ncols = tab.cols() - 1;
        const double rc_tol = 1e-10;
        int degenerate = 0;
        bool bland = false;

        for (int it = 0; it < max_iter_; ++it) {
            // entering column
            std::size_t enter = ncols;
            if (!bland) {
                double best = -rc_tol;
                for (std::size_t j = 0; j < ncols; ++j) {
                    if (!allow_art && is_art[j]) continue;
                    if (tab(m, j) < best) { best = tab(m, j); enter = j; }
                }
            } else {
                for (std::size_t j = 0; j < ncols; ++j) {
                    if (!allow_art && is_art[j]) continue;
                    if (tab(m, j) < -rc_tol) { enter = j; break; }
                }
            }
            if (enter == ncols) return LpStatus::optimal;

            // ratio test
            std::size_t leave = m;
            double best_ratio = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < m; ++i) {
                const double a = tab(i, enter);
                if (a <= 1e-11) continue;
                const double ratio = tab(i, ncols) / a;
                if (ratio < best_ratio - 1e-12 ||
                    (ratio < best_ratio + 1e-12 && (leave == m || basis[i] < basis[leave]))) {
                    best_ratio = ratio;
                    leave = i;
                }
            }
            if (leave == m) return LpStatus::unbounded;
            if (best_ratio < 1e-12 && ++degenerate > 40) bland = true;

            pivot(tab, leave, enter);
            basis[leave] = enter;
        }
        return LpStatus::iteration_limit;
    }

    static void pivot(Matrix& tab, std::size_t prow, std::size_t pcol) {
        const std::size_t rows = tab.rows();
        const std::size_t cols = tab.cols();
        const double p = tab(prow, pcol);
        for (std::size_t j = 0; j < cols; ++j) tab(prow, j) /= p;
        tab(prow, pcol) = 1.0;
        for (std::size_t i = 0; i < rows; ++i) {
            if (i == prow) continue;
            const double f = tab(i, pcol);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < cols; ++j) tab(i, j) -= f * tab(prow, j);
            tab(i, pcol) = 0.0;
        }
    }

    // After phase 1, pivot artificials out of the basis (or neutralize
    // redundant rows) so they can be barred from phase 2.
    static void purge_artificials(Matrix& tab, std::vector<std::size_t>& basis,
                                  const std::vector<bool>& is_art) {
        const std::size_t m = tab.rows() - 1;
        const std::size_t ncols = tab.cols() - 1;
        for (std::size_t i = 0; i < m; ++i) {
            if (!is_art[basis[i]]) continue;
            std::size_t enter = ncols;
            for (std::size_t j = 0; j < ncols; ++j) {
                if (is_art[j]) continue;
                if (std::fabs(tab(i, j)) > 1e-9) { enter = j; break; }
            }
            if (enter == ncols) continue; // redundant row, stays at zero
            pivot(tab, i, enter);
            basis[i] = enter;
        }
    }
};

inline LpResult solve_lp(const LinearProgram& lp) { return SimplexSolver().solve(lp); }

} // namespace treedual
