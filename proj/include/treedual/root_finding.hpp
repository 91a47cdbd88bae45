#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace treedual {

struct RootResult {
    double x = 0.0;
    double fx = 0.0;
    int evaluations = 0;
    bool converged = false;
};

/// Brent's method on a sign-changing bracket [a, b].
/// Combines bisection with secant / inverse quadratic steps; always keeps the
/// bracket, so it converges for any continuous f. Tolerances are on x
/// (relative + absolute); the caller checks f where it cares about residuals.
template <class F>
RootResult brent(F&& f, double a, double b, double rel_tol = 1e-13,
                 double abs_tol = 1e-300, int max_iter = 200) {
    RootResult res;
    double fa = f(a), fb = f(b);
    res.evaluations = 2;
    if (fa == 0.0) { res.x = a; res.fx = 0.0; res.converged = true; return res; }
    if (fb == 0.0) { res.x = b; res.fx = 0.0; res.converged = true; return res; }
    if ((fa > 0.0) == (fb > 0.0))
        throw std::invalid_argument("brent: root not bracketed");

    double c = a, fc = fa;
    double d = b - a, e = d;
    for (int it = 0; it < max_iter; ++it) {
        if ((fb > 0.0) == (fc > 0.0)) { c = a; fc = fa; d = b - a; e = d; }
        if (std::fabs(fc) < std::fabs(fb)) {
            a = b; b = c; c = a;
            fa = fb; fb = fc; fc = fa;
        }
        const double tol = 2.0 * rel_tol * std::fabs(b) + 0.5 * abs_tol;
        const double m = 0.5 * (c - b);
        if (std::fabs(m) <= tol || fb == 0.0) {
            res.x = b; res.fx = fb; res.converged = true;
            return res;
        }
        if (std::fabs(e) < tol || std::fabs(fa) <= std::fabs(fb)) {
            d = m; e = m; // bisection
        } else {
            double p, q;
            const double s = fb / fa;
            if (a == c) { // secant
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else { // inverse quadratic interpolation
                const double qq = fa / fc, r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if (p > 0.0) q = -q; else p = -p;
            if (2.0 * p < std::min(3.0 * m * q - std::fabs(tol * q), std::fabs(e * q))) {
                e = d; d = p / q;
            } else {
                d = m; e = m;
            }
        }
        a = b; fa = fb;
        b += (std::fabs(d) > tol) ? d : (m > 0.0 ? tol : -tol);
        fb = f(b);
        ++res.evaluations;
    }
    res.x = b; res.fx = fb; res.converged = false;
    return res;
}

/// Plain bisection until |b-a| <= rel_tol*|x| + abs_tol or f hits zero.
template <class F>
RootResult bisect(F&& f, double a, double b, double rel_tol = 1e-13,
                  double abs_tol = 0.0, int max_iter = 400) {
    RootResult res;
    double fa = f(a), fb = f(b);
    res.evaluations = 2;
    if (fa == 0.0) { res.x = a; res.converged = true; return res; }
    if (fb == 0.0) { res.x = b; res.converged = true; return res; }
    if ((fa > 0.0) == (fb > 0.0))
        throw std::invalid_argument("bisect: root not bracketed");
    for (int it = 0; it < max_iter; ++it) {
        const double m = 0.5 * (a + b);
        const double fm = f(m);
        ++res.evaluations;
        if (fm == 0.0 || (b - a) <= rel_tol * std::fabs(m) + abs_tol) {
            res.x = m; res.fx = fm; res.converged = true;
            return res;
        }
        if ((fm > 0.0) == (fa > 0.0)) { a = m; fa = fm; } else { b = m; fb = fm; }
    }
    res.x = 0.5 * (a + b);
    res.fx = f(res.x);
    res.converged = false;
    return res;
}

/// Golden-section minimization of a unimodal f on [a, b].
template <class F>
double golden_minimize(F&& f, double a, double b, double tol = 1e-10, int max_iter = 200) {
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - invphi * (b - a), x2 = a + invphi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < max_iter && (b - a) > tol * (1.0 + std::fabs(a) + std::fabs(b)); ++it) {
        if (f1 < f2) {
            b = x2; x2 = x1; f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = f(x1);
        } else {
            a = x1; x1 = x2; f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = f(x2);
        }
    }
    return f1 < f2 ? x1 : x2;
}

} // namespace treedual
