#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "treedual/event_tree.hpp"
#include "treedual/root_finding.hpp"

namespace treedual {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// One-argument utility functions (the building blocks of the fields)
// ---------------------------------------------------------------------------

/// Strictly concave, increasing, C^1 utility on (0, inf) with Inada marginals.
class ScalarUtility {
public:
    virtual ~ScalarUtility() = default;
    virtual double value(double x) const = 0;
    virtual double marginal(double x) const = 0;
    virtual double inverse_marginal(double y) const = 0;
    /// V(y) = sup_x [u(x) - xy]
    virtual double conjugate(double y) const {
        const double x = inverse_marginal(y);
        return value(x) - x * y;
    }
    /// -V'(y) = I(y); V''(y) = -I'(y)
    virtual double conjugate_second(double y) const {
        const double h = 1e-6 * std::max(1.0, y);
        return -(inverse_marginal(y + h) - inverse_marginal(y - h)) / (2.0 * h);
    }
    /// u(0+); -inf for log-type utilities
    virtual double value_at_zero() const = 0;
    /// u(inf) = V(0+)
    virtual double value_at_infinity() const = 0;
    /// antiderivative of the marginal on [1, x] (= u(x) - u(1))
    double marginal_integral(double x) const { return value(x) - value(1.0); }
};

class LogUtility final : public ScalarUtility {
public:
    double value(double x) const override { return std::log(x); }
    double marginal(double x) const override { return 1.0 / x; }
    double inverse_marginal(double y) const override { return 1.0 / y; }
    double conjugate(double y) const override { return -std::log(y) - 1.0; }
    double conjugate_second(double y) const override { return 1.0 / (y * y); }
    double value_at_zero() const override { return -kInf; }
    double value_at_infinity() const override { return kInf; }
};

/// x^alpha / alpha, 0 < alpha < 1.
class PowerUtility final : public ScalarUtility {
public:
    explicit PowerUtility(double alpha) : alpha_(alpha) {
        if (!(alpha > 0.0 && alpha < 1.0))
            throw std::invalid_argument("PowerUtility: alpha must be in (0,1)");
    }
    double alpha() const { return alpha_; }
    double value(double x) const override { return std::pow(x, alpha_) / alpha_; }
    double marginal(double x) const override { return std::pow(x, alpha_ - 1.0); }
    double inverse_marginal(double y) const override { return std::pow(y, 1.0 / (alpha_ - 1.0)); }
    double conjugate(double y) const override {
        return (1.0 - alpha_) / alpha_ * std::pow(y, -alpha_ / (1.0 - alpha_));
    }
    double conjugate_second(double y) const override {
        const double e = 1.0 / (alpha_ - 1.0);
        return -e * std::pow(y, e - 1.0);
    }
    double value_at_zero() const override { return 0.0; }
    double value_at_infinity() const override { return kInf; }

private:
    double alpha_;
};

inline std::shared_ptr<ScalarUtility> make_scalar_utility(const std::string& kind, double alpha = 0.5) {
    if (kind == "log") return std::make_shared<LogUtility>();
    if (kind == "power") return std::make_shared<PowerUtility>(alpha);
    throw std::invalid_argument("unknown scalar utility: " + kind);
}

// ---------------------------------------------------------------------------
// Utility random fields
// ---------------------------------------------------------------------------

/// Random field U(t, node, x): for each (time index, node) a utility function
/// of x, with deterministic envelopes K1(x) <= dU/dx <= K2(x). The analytic
/// members override the generic numeric conjugate / inverse-marginal paths.
class UtilityField {
public:
    virtual ~UtilityField() = default;

    virtual double value(int t, NodeId node, double x) const = 0;
    virtual double marginal(int t, NodeId node, double x) const = 0;

    virtual double inverse_marginal(int t, NodeId node, double y) const {
        return numeric_inverse_marginal(t, node, y);
    }
    virtual double conjugate(int t, NodeId node, double y) const {
        if (y <= 0.0) throw std::invalid_argument("conjugate: y must be positive");
        const double x = inverse_marginal(t, node, y);
        return value(t, node, x) - x * y;
    }
    /// dV/dy = -I
    double conjugate_derivative(int t, NodeId node, double y) const {
        return -inverse_marginal(t, node, y);
    }
    virtual double conjugate_second(int t, NodeId node, double y) const {
        const double h = 1e-6 * std::max(1.0, y);
        return -(inverse_marginal(t, node, y + h) - inverse_marginal(t, node, y - h)) / (2.0 * h);
    }

    virtual double envelope_lower(double x) const = 0;  // K1
    virtual double envelope_upper(double x) const = 0;  // K2

    virtual double envelope_lower_inverse(double y) const { return invert_envelope(false, y); }
    virtual double envelope_upper_inverse(double y) const { return invert_envelope(true, y); }

    /// true when U(t,.,0+) = -inf somewhere (log-type)
    virtual bool unbounded_below() const = 0;
    /// V(t,node,0+) = U(t,node,inf)
    virtual double conjugate_at_zero(int t, NodeId node) const = 0;

    virtual std::string describe() const = 0;

protected:
    /// Monotone root-find on marginal(x) = y, bracketed by the envelope
    /// inverses K1^{-1}(y) <= I(y) <= K2^{-1}(y).
    double numeric_inverse_marginal(int t, NodeId node, double y) const {
        if (y <= 0.0) throw std::invalid_argument("inverse_marginal: y must be positive");
        double lo = envelope_lower_inverse(y);
        double hi = envelope_upper_inverse(y);
        if (lo > hi) std::swap(lo, hi);
        lo = std::max(lo * 0.5, 1e-300);
        hi = hi * 2.0 + 1e-300;
        auto f = [&](double x) { return marginal(t, node, x) - y; };
        // marginal is decreasing: f(lo) >= 0 >= f(hi); expand if the envelope
        // bracket is off by rounding
        int guard = 0;
        while (f(lo) < 0.0 && guard++ < 200) lo *= 0.5;
        guard = 0;
        while (f(hi) > 0.0 && guard++ < 200) hi *= 2.0;
        RootResult r = brent(f, lo, hi, 1e-14, 0.0, 300);
        return r.x;
    }

    double invert_envelope(bool upper, double y) const {
        if (y <= 0.0) throw std::invalid_argument("envelope inverse: y must be positive");
        auto k = [&](double x) { return upper ? envelope_upper(x) : envelope_lower(x); };
        double lo = 1.0, hi = 1.0;
        int guard = 0;
        while (k(lo) < y && guard++ < 2000) lo *= 0.5;   // K decreasing: go left to raise it
        guard = 0;
        while (k(hi) > y && guard++ < 2000) hi *= 2.0;
        auto f = [&](double x) { return k(x) - y; };
        if (f(lo) < 0.0 || f(hi) > 0.0)
            throw std::runtime_error("envelope inverse: bracketing failed");
        RootResult r = brent(f, lo, hi, 1e-14, 0.0, 300);
        return r.x;
    }
};

using UtilityFieldPtr = std::shared_ptr<const UtilityField>;

/// Deterministic, time-independent field: U(t, node, x) = u(x).
class TimeInvariantField final : public UtilityField {
public:
    explicit TimeInvariantField(std::shared_ptr<ScalarUtility> u) : u_(std::move(u)) {}

    double value(int, NodeId, double x) const override { return u_->value(x); }
    double marginal(int, NodeId, double x) const override { return u_->marginal(x); }
    double inverse_marginal(int, NodeId, double y) const override {
        if (y <= 0.0) throw std::invalid_argument("inverse_marginal: y must be positive");
        return u_->inverse_marginal(y);
    }
    double conjugate(int, NodeId, double y) const override {
        if (y <= 0.0) throw std::invalid_argument("conjugate: y must be positive");
        return u_->conjugate(y);
    }
    double conjugate_second(int, NodeId, double y) const override { return u_->conjugate_second(y); }
    double envelope_lower(double x) const override { return u_->marginal(x); }
    double envelope_upper(double x) const override { return u_->marginal(x); }
    double envelope_lower_inverse(double y) const override { return u_->inverse_marginal(y); }
    double envelope_upper_inverse(double y) const override { return u_->inverse_marginal(y); }
    bool unbounded_below() const override { return u_->value_at_zero() == -kInf; }
    double conjugate_at_zero(int, NodeId) const override { return u_->value_at_infinity(); }
    std::string describe() const override { return "time-invariant"; }

    const ScalarUtility& scalar() const { return *u_; }

private:
    std::shared_ptr<ScalarUtility> u_;
};

/// U(t,x) = psi(t) u(x) with psi positive and bounded away from zero
/// (e.g. psi(t) = exp(-beta t), the discounted family).
class DiscountedField final : public UtilityField {
public:
    DiscountedField(std::shared_ptr<ScalarUtility> u, Vector psi_by_time)
        : u_(std::move(u)), psi_(std::move(psi_by_time)) {
        if (psi_.empty()) throw std::invalid_argument("DiscountedField: empty discount table");
        psi_min_ = *std::min_element(psi_.begin(), psi_.end());
        psi_max_ = *std::max_element(psi_.begin(), psi_.end());
        if (psi_min_ <= 0.0) throw std::invalid_argument("DiscountedField: psi must be positive");
    }

    static DiscountedField exponential(std::shared_ptr<ScalarUtility> u, double beta,
                                       const std::vector<double>& time_grid) {
        Vector psi(time_grid.size());
        for (std::size_t i = 0; i < psi.size(); ++i) psi[i] = std::exp(-beta * time_grid[i]);
        return DiscountedField(std::move(u), std::move(psi));
    }

    double psi(int t) const { return psi_[std::size_t(t)]; }

    double value(int t, NodeId, double x) const override { return psi(t) * u_->value(x); }
    double marginal(int t, NodeId, double x) const override { return psi(t) * u_->marginal(x); }
    double inverse_marginal(int t, NodeId, double y) const override {
        if (y <= 0.0) throw std::invalid_argument("inverse_marginal: y must be positive");
        return u_->inverse_marginal(y / psi(t));
    }
    // V(t,y) = psi V0(y/psi)
    double conjugate(int t, NodeId, double y) const override {
        if (y <= 0.0) throw std::invalid_argument("conjugate: y must be positive");
        return psi(t) * u_->conjugate(y / psi(t));
    }
    double conjugate_second(int t, NodeId, double y) const override {
        return u_->conjugate_second(y / psi(t)) / psi(t);
    }
    double envelope_lower(double x) const override { return psi_min_ * u_->marginal(x); }
    double envelope_upper(double x) const override { return psi_max_ * u_->marginal(x); }
    double envelope_lower_inverse(double y) const override { return u_->inverse_marginal(y / psi_min_); }
    double envelope_upper_inverse(double y) const override { return u_->inverse_marginal(y / psi_max_); }
    bool unbounded_below() const override { return u_->value_at_zero() == -kInf; }
    double conjugate_at_zero(int t, NodeId) const override {
        const double v = u_->value_at_infinity();
        return v == kInf ? kInf : psi(t) * v;
    }
    std::string describe() const override { return "discounted"; }

private:
    std::shared_ptr<ScalarUtility> u_;
    Vector psi_;
    double psi_min_ = 1.0, psi_max_ = 1.0;
};

/// Running field for t < N and a separate terminal function at t = N, each
/// with its own scaling a * u(x / a). The consumption+terminal-wealth
/// embedding uses exactly this shape.
class MixedField final : public UtilityField {
public:
    MixedField(UtilityFieldPtr running, std::shared_ptr<ScalarUtility> terminal,
               int terminal_index, double scale_running = 1.0, double scale_terminal = 1.0)
        : running_(std::move(running)), terminal_(std::move(terminal)),
          terminal_index_(terminal_index), a_r_(scale_running), a_t_(scale_terminal) {
        if (a_r_ <= 0.0 || a_t_ <= 0.0)
            throw std::invalid_argument("MixedField: scales must be positive");
    }

    bool is_terminal_time(int t) const { return t == terminal_index_; }

    double value(int t, NodeId node, double x) const override {
        return is_terminal_time(t) ? a_t_ * terminal_->value(x / a_t_)
                                   : a_r_ * running_->value(t, node, x / a_r_);
    }
    double marginal(int t, NodeId node, double x) const override {
        return is_terminal_time(t) ? terminal_->marginal(x / a_t_)
                                   : running_->marginal(t, node, x / a_r_);
    }
    double inverse_marginal(int t, NodeId node, double y) const override {
        if (y <= 0.0) throw std::invalid_argument("inverse_marginal: y must be positive");
        return is_terminal_time(t) ? a_t_ * terminal_->inverse_marginal(y)
                                   : a_r_ * running_->inverse_marginal(t, node, y);
    }
    // conjugate of a u(x/a) is a V(y)
    double conjugate(int t, NodeId node, double y) const override {
        if (y <= 0.0) throw std::invalid_argument("conjugate: y must be positive");
        return is_terminal_time(t) ? a_t_ * terminal_->conjugate(y)
                                   : a_r_ * running_->conjugate(t, node, y);
    }
    double conjugate_second(int t, NodeId node, double y) const override {
        return is_terminal_time(t) ? a_t_ * terminal_->conjugate_second(y)
                                   : a_r_ * running_->conjugate_second(t, node, y);
    }
    double envelope_lower(double x) const override {
        return std::min(running_->envelope_lower(x / a_r_), terminal_->marginal(x / a_t_));
    }
    double envelope_upper(double x) const override {
        return std::max(running_->envelope_upper(x / a_r_), terminal_->marginal(x / a_t_));
    }
    bool unbounded_below() const override {
        return running_->unbounded_below() || terminal_->value_at_zero() == -kInf;
    }
    double conjugate_at_zero(int t, NodeId node) const override {
        return is_terminal_time(t) ? (terminal_->value_at_infinity() == kInf ? kInf
                                                                             : a_t_ * terminal_->value_at_infinity())
                                   : (running_->conjugate_at_zero(t, node) == kInf
                                          ? kInf
                                          : a_r_ * running_->conjugate_at_zero(t, node));
    }
    std::string describe() const override { return "mixed running/terminal"; }

private:
    UtilityFieldPtr running_;
    std::shared_ptr<ScalarUtility> terminal_;
    int terminal_index_;
    double a_r_, a_t_;
};

/// Stochastic discount: U(t, node, x) = U1(t, B(node) x), B positive and
/// bounded (utility accrued from nominal rather than real consumption).
class StochasticDiscountField final : public UtilityField {
public:
    StochasticDiscountField(UtilityFieldPtr inner, Vector b_by_node)
        : inner_(std::move(inner)), b_(std::move(b_by_node)) {
        if (b_.empty()) throw std::invalid_argument("StochasticDiscountField: empty discount table");
        b_min_ = *std::min_element(b_.begin(), b_.end());
        b_max_ = *std::max_element(b_.begin(), b_.end());
        if (b_min_ <= 0.0)
            throw std::invalid_argument("StochasticDiscountField: discount must be positive");
    }

    double b(NodeId n) const { return b_[std::size_t(n)]; }

    double value(int t, NodeId node, double x) const override {
        return inner_->value(t, node, b(node) * x);
    }
    double marginal(int t, NodeId node, double x) const override {
        return b(node) * inner_->marginal(t, node, b(node) * x);
    }
    double inverse_marginal(int t, NodeId node, double y) const override {
        if (y <= 0.0) throw std::invalid_argument("inverse_marginal: y must be positive");
        return inner_->inverse_marginal(t, node, y / b(node)) / b(node);
    }
    double conjugate(int t, NodeId node, double y) const override {
        if (y <= 0.0) throw std::invalid_argument("conjugate: y must be positive");
        return inner_->conjugate(t, node, y / b(node));
    }
    double conjugate_second(int t, NodeId node, double y) const override {
        return inner_->conjugate_second(t, node, y / b(node)) / (b(node) * b(node));
    }
    double envelope_lower(double x) const override {
        return b_min_ * inner_->envelope_lower(b_max_ * x);
    }
    double envelope_upper(double x) const override {
        return b_max_ * inner_->envelope_upper(b_min_ * x);
    }
    bool unbounded_below() const override { return inner_->unbounded_below(); }
    double conjugate_at_zero(int t, NodeId node) const override {
        return inner_->conjugate_at_zero(t, node);
    }
    std::string describe() const override { return "stochastic discount"; }

private:
    UtilityFieldPtr inner_;
    Vector b_;
    double b_min_ = 1.0, b_max_ = 1.0;
};

} // namespace treedual
