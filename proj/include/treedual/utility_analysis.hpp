#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "treedual/event_tree.hpp"
#include "treedual/utility_field.hpp"

namespace treedual {

namespace detail {

/// Adaptive Simpson quadrature for the smooth envelope integrands.
inline double simpson_rec(const std::function<double(double)>& f, double a, double b,
                          double fa, double fm, double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::fabs(left + right - whole) <= 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-11) {
    if (a == b) return 0.0;
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return simpson_rec(f, a, b, fa, fm, fb, whole, tol, 40);
}

} // namespace detail

/// Deterministic utility function sandwiching the field: value and conjugate
/// are evaluated from the envelopes, anchored at the (inf or sup over nodes)
/// value of U(.,1). Marginal equals K2 left of 1 and K1 right of 1 for the
/// minorant; the other way round for the majorant.
class EnvelopeUtility {
public:
    EnvelopeUtility(const UtilityField& field, bool is_upper, double anchor)
        : field_(&field), upper_(is_upper), anchor_(anchor) {}

    double marginal(double x) const {
        const bool use_upper_env = upper_ ? (x >= 1.0) : (x < 1.0);
        return use_upper_env ? field_->envelope_upper(x) : field_->envelope_lower(x);
    }

    double value(double x) const {
        if (x <= 0.0) return -kInf;
        auto f = [this](double s) { return marginal(s); };
        return anchor_ + detail::integrate(f, 1.0, x);
    }

    /// sup_x [value(x) - x y]. The marginal switches envelope at x = 1; each
    /// branch contributes one stationary candidate (the majorant's marginal
    /// jumps upward there, so both branches must be tried).
    double conjugate(double y) const {
        if (y <= 0.0) throw std::invalid_argument("EnvelopeUtility::conjugate: y must be positive");
        const double k_left = marginal(0.999999999);
        const double k_right = marginal(1.0);
        double best = value(1.0) - y;
        if (y >= k_left) {
            const double xl = upper_ ? field_->envelope_lower_inverse(y)
                                     : field_->envelope_upper_inverse(y);
            best = std::max(best, value(std::min(xl, 1.0)) - std::min(xl, 1.0) * y);
        }
        if (y <= k_right) {
            const double xr = upper_ ? field_->envelope_upper_inverse(y)
                                     : field_->envelope_lower_inverse(y);
            best = std::max(best, value(std::max(xr, 1.0)) - std::max(xr, 1.0) * y);
        }
        return best;
    }

private:
    const UtilityField* field_;
    bool upper_;
    double anchor_;
};

struct MinorantMajorant {
    EnvelopeUtility lower;
    EnvelopeUtility upper;
};

/// Builds the deterministic sandwich u_lower <= U(t,node,.) <= u_upper and
/// verifies it (plus the Inada behavior of the envelope marginals) on a
/// log-spaced grid over every node. Throws with a witness point on failure.
inline MinorantMajorant minorant_majorant(const UtilityField& field, const EventTree& tree,
                                          int grid_points = 200, double x_min = 1e-3,
                                          double x_max = 1e3) {
    double c_low = kInf, c_up = -kInf;
    for (NodeId n = 0; n < NodeId(tree.size()); ++n) {
        const double v = field.value(tree.time_index(n), n, 1.0);
        c_low = std::min(c_low, v);
        c_up = std::max(c_up, v);
    }
    MinorantMajorant mm{EnvelopeUtility(field, false, c_low), EnvelopeUtility(field, true, c_up)};

    const double lr = std::log(x_max / x_min);
    for (int g = 0; g < grid_points; ++g) {
        const double x = x_min * std::exp(lr * g / (grid_points - 1));
        const double lo = mm.lower.value(x);
        const double hi = mm.upper.value(x);
        for (NodeId n = 0; n < NodeId(tree.size()); ++n) {
            const double u = field.value(tree.time_index(n), n, x);
            const double slack = 1e-8 * (1.0 + std::fabs(u));
            if (u < lo - slack || u > hi + slack)
                throw std::runtime_error("minorant_majorant: sandwich violated at x=" +
                                         std::to_string(x) + ", node " + std::to_string(n));
        }
    }
    // Inada probes: the sandwich marginals must blow up at 0 and die at infinity
    if (!(field.envelope_upper(1e-10) > 1e3 * field.envelope_upper(1.0)) ||
        !(field.envelope_lower(1e10) < 1e-3 * field.envelope_lower(1.0)))
        throw std::runtime_error("minorant_majorant: envelopes fail the Inada probes");
    return mm;
}

// ---------------------------------------------------------------------------
// Asymptotic elasticity
// ---------------------------------------------------------------------------

struct GammaCheck {
    double gamma = 0.0;
    bool gamma1 = false, gamma2 = false, gamma3 = false, gamma4 = false;
    double x0 = std::numeric_limits<double>::quiet_NaN(); // threshold found for G1/G2
    double y0 = std::numeric_limits<double>::quiet_NaN(); // threshold found for G3/G4
};

struct ElasticityReport {
    double sup_ratio = 0.0;       // max over the grid of x dU/U
    double tail_estimate = 0.0;   // extrapolated limit of the ratio
    bool reasonably_elastic = false;
    double margin = 0.01;
    double envelope_ratio = 0.0;  // K2/K1 probed at x_max
    std::vector<GammaCheck> gamma_checks;
};

/// Grid diagnostic for AE[U] = limsup_x esssup_{t,node} x dU/U together with
/// the empirical Gamma_1..Gamma_4 threshold scans. An estimate, not a proof:
/// the verdict flags "reasonably elastic" when the extrapolated tail stays
/// below 1 - margin.
inline ElasticityReport asymptotic_elasticity(const UtilityField& field, const EventTree& tree,
                                              double x_max = 1e6, int grid_points = 60,
                                              const std::vector<double>& candidate_gammas = {},
                                              double margin = 0.01) {
    ElasticityReport rep;
    rep.margin = margin;

    auto ratio_at = [&](double x) {
        double r = -kInf;
        bool any = false;
        for (NodeId n = 0; n < NodeId(tree.size()); ++n) {
            const int t = tree.time_index(n);
            const double u = field.value(t, n, x);
            if (u <= 0.0) continue;
            any = true;
            r = std::max(r, x * field.marginal(t, n, x) / u);
        }
        return any ? r : std::numeric_limits<double>::quiet_NaN();
    };

    // start the grid where U is positive everywhere (Def. of the ratio)
    double x_lo = 1.0;
    int guard = 0;
    while (std::isnan(ratio_at(x_lo)) && guard++ < 60) x_lo *= 2.0;
    if (guard >= 60) throw std::runtime_error("asymptotic_elasticity: U <= 0 over the whole tail");
    x_lo = std::min(std::max(x_lo * 2.0, 4.0), 0.01 * x_max);

    std::vector<double> xs(std::size_t(grid_points), 0.0), rs(std::size_t(grid_points), 0.0);
    const double lr = std::log(x_max / x_lo);
    for (int g = 0; g < grid_points; ++g) {
        xs[std::size_t(g)] = x_lo * std::exp(lr * g / (grid_points - 1));
        rs[std::size_t(g)] = ratio_at(xs[std::size_t(g)]);
        rep.sup_ratio = std::max(rep.sup_ratio, rs[std::size_t(g)]);
    }

    // Aitken extrapolation of the last three ratios (exact for geometric
    // convergence, a useful accelerator otherwise)
    {
        const double r1 = rs[std::size_t(grid_points - 3)];
        const double r2 = rs[std::size_t(grid_points - 2)];
        const double r3 = rs[std::size_t(grid_points - 1)];
        const double denom = (r3 - r2) - (r2 - r1);
        rep.tail_estimate = std::fabs(denom) > 1e-14 ? r3 - (r3 - r2) * (r3 - r2) / denom : r3;
        rep.tail_estimate = std::max(rep.tail_estimate, 0.0);
    }
    rep.reasonably_elastic = rep.tail_estimate <= 1.0 - margin;
    rep.envelope_ratio = field.envelope_upper(x_max) / field.envelope_lower(x_max);

    const std::vector<double> lambdas{1.5, 2.0, 5.0, 10.0};
    const std::vector<double> rhos{0.9, 0.5, 0.1};

    for (double gamma : candidate_gammas) {
        GammaCheck gc;
        gc.gamma = gamma;

        // scan for the smallest grid x0 past which the x-conditions hold
        auto scan_x = [&](auto&& cond) {
            for (int i0 = 0; i0 < grid_points; ++i0) {
                bool ok = true;
                for (int g = i0; g < grid_points && ok; ++g)
                    for (NodeId n = 0; n < NodeId(tree.size()) && ok; ++n)
                        if (!cond(tree.time_index(n), n, xs[std::size_t(g)])) ok = false;
                if (ok) return xs[std::size_t(i0)];
            }
            return std::numeric_limits<double>::quiet_NaN();
        };
        gc.x0 = scan_x([&](int t, NodeId n, double x) {
            const double u = field.value(t, n, x);
            if (u <= 0.0) return false;
            bool ok = field.marginal(t, n, x) < gamma * u / x; // Gamma_2
            for (double lam : lambdas)
                ok = ok && field.value(t, n, lam * x) < std::pow(lam, gamma) * u; // Gamma_1
            return ok;
        });
        gc.gamma1 = gc.gamma2 = !std::isnan(gc.x0);

        // descending y-scan for the y-conditions
        const int ny = 40;
        std::vector<double> ys(std::size_t(ny), 0.0);
        for (int g = 0; g < ny; ++g) ys[std::size_t(g)] = std::pow(10.0, -0.5 - 7.5 * g / (ny - 1));
        const double pow_exp = -gamma / (1.0 - gamma);
        for (int i0 = 0; i0 < ny; ++i0) {
            bool ok = true;
            for (int g = i0; g < ny && ok; ++g)
                for (NodeId n = 0; n < NodeId(tree.size()) && ok; ++n) {
                    const int t = tree.time_index(n);
                    const double y = ys[std::size_t(g)];
                    const double v = field.conjugate(t, n, y);
                    if (v <= 0.0) { ok = false; break; }
                    for (double rho : rhos)
                        if (!(field.conjugate(t, n, rho * y) < std::pow(rho, pow_exp) * v)) ok = false; // Gamma_3
                    if (!(field.inverse_marginal(t, n, y) < gamma / (1.0 - gamma) * v / y)) ok = false;  // Gamma_4
                }
            if (ok) { gc.y0 = ys[std::size_t(i0)]; break; }
        }
        gc.gamma3 = gc.gamma4 = !std::isnan(gc.y0);
        rep.gamma_checks.push_back(gc);
    }
    return rep;
}

} // namespace treedual
