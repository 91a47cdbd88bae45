#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "treedual/market.hpp"
#include "treedual/utility_field.hpp"

namespace treedual {

namespace detail {

inline std::vector<double> uniform_grid(int periods, double horizon = 1.0) {
    std::vector<double> g(std::size_t(periods) + 1);
    for (int i = 0; i <= periods; ++i) g[std::size_t(i)] = horizon * i / periods;
    return g;
}

} // namespace detail

/// Non-recombining binomial tree with per-step up/down factors u > 1 > d and
/// up-probability p. Unconstrained cone, zero endowment, mu = delta_T by
/// default (override afterwards for running-consumption problems).
inline MarketScenario build_binomial(double u, double d, double p, int periods,
                                     double s0, const ConstraintCone& cone,
                                     double horizon = 1.0) {
    if (!(d < 1.0 && 1.0 < u)) throw std::invalid_argument("binomial: need d < 1 < u (arbitrage otherwise)");
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("binomial: p must be in (0,1)");
    if (periods < 1) throw std::invalid_argument("binomial: need at least one period");

    MarketScenario s;
    s.d = 1;
    s.cone = cone;

    std::vector<TreeNode> nodes;
    std::vector<Vector> prices;
    nodes.push_back(TreeNode{0, kNoNode, 1.0, {}});
    prices.push_back(Vector{s0});
    std::vector<NodeId> level{0};
    for (int t = 1; t <= periods; ++t) {
        std::vector<NodeId> next;
        for (NodeId parent : level) {
            for (int branch = 0; branch < 2; ++branch) {
                const double factor = branch == 0 ? u : d;
                const double prob = branch == 0 ? p : 1.0 - p;
                NodeId id = NodeId(nodes.size());
                nodes.push_back(TreeNode{t, parent, prob, {}});
                prices.push_back(Vector{prices[std::size_t(parent)][0] * factor});
                next.push_back(id);
            }
        }
        level = std::move(next);
    }
    s.tree = EventTree(std::move(nodes), detail::uniform_grid(periods, horizon));
    s.prices = std::move(prices);
    s.endowment.assign(s.tree.size(), 0.0);
    s.mu.weights.assign(std::size_t(periods) + 1, 0.0);
    s.mu.weights.back() = 1.0;
    return s;
}

/// Complete market: cone = R (generators +-1), unique one-step martingale
/// weight q = (1-d)/(u-d).
inline MarketScenario build_complete_binomial(double u, double d, double p, int periods,
                                              double s0 = 1.0, double horizon = 1.0) {
    return build_binomial(u, d, p, periods, s0, ConstraintCone::unconstrained(1), horizon);
}

/// Short sales prohibited: cone = R_+ (generator {+1}); the one-step drift
/// condition becomes one-sided.
inline MarketScenario build_no_short_sale(double u, double d, double p, int periods,
                                          double s0 = 1.0, double horizon = 1.0) {
    return build_binomial(u, d, p, periods, s0, ConstraintCone::half_line(+1.0), horizon);
}

/// No market at all: S constant, so every measure is a supermartingale
/// measure and the dual domain is the whole simplex. The tree fans out at the
/// root into one deterministic branch per rate path; consumption runs
/// uniformly over t_0..t_{N-1} (nothing at T) and the endowment accrues
/// node-wise with the same weights, making the budget identity a finite sum.
///
/// branch_rates[j][i] = endowment rate on branch j at time index i; the
/// time-0 rates must agree across branches (the root is common).
inline MarketScenario build_lakner_slud(const std::vector<Vector>& branch_rates,
                                        const Vector& branch_probs, int periods) {
    const std::size_t k = branch_rates.size();
    if (k < 2) throw std::invalid_argument("lakner_slud: need at least two branches");
    if (branch_probs.size() != k) throw std::invalid_argument("lakner_slud: probability count mismatch");
    if (periods < 2) throw std::invalid_argument("lakner_slud: need at least two periods");
    double total_rate = 0.0;
    for (const auto& r : branch_rates) {
        if (r.size() != std::size_t(periods))
            throw std::invalid_argument("lakner_slud: one rate per running time required");
        for (double v : r) {
            if (v < 0.0) throw std::invalid_argument("lakner_slud: rates must be nonnegative");
            total_rate += v;
        }
        if (std::fabs(r[0] - branch_rates[0][0]) > 0.0)
            throw std::invalid_argument("lakner_slud: time-0 rates must coincide across branches");
    }
    if (total_rate <= 0.0) throw std::invalid_argument("lakner_slud: zero total endowment");

    MarketScenario s;
    s.d = 1;
    s.cone = ConstraintCone::unconstrained(1);
    s.mu.weights.assign(std::size_t(periods) + 1, 1.0 / periods);
    s.mu.weights.back() = 0.0;

    std::vector<TreeNode> nodes;
    nodes.push_back(TreeNode{0, kNoNode, 1.0, {}});
    Vector endow{0.0};
    const double w = 1.0 / periods;
    // income accrued over [t_{i-1}, t_i) arrives at the time-i nodes, keeping
    // E zero at the root; total E_T is the mu-weighted sum of the rates
    for (std::size_t j = 0; j < k; ++j) {
        NodeId parent = 0;
        for (int t = 1; t <= periods; ++t) {
            NodeId id = NodeId(nodes.size());
            nodes.push_back(TreeNode{t, parent, t == 1 ? branch_probs[j] : 1.0, {}});
            const double inc = branch_rates[j][std::size_t(t) - 1] * w;
            endow.push_back(endow[std::size_t(parent)] + inc);
            parent = id;
        }
    }
    s.tree = EventTree(std::move(nodes), detail::uniform_grid(periods));
    s.prices.assign(s.tree.size(), Vector{1.0});
    s.endowment = std::move(endow);
    return s;
}

/// Symmetric two-branch fan with a constant endowment rate.
inline MarketScenario build_lakner_slud_constant(double rate, double p, int periods) {
    std::vector<Vector> rates(2, Vector(std::size_t(periods), rate));
    return build_lakner_slud(rates, Vector{p, 1.0 - p}, periods);
}

// ---------------------------------------------------------------------------
// Consumption + terminal wealth embedding
// ---------------------------------------------------------------------------

/// A consumption+terminal-wealth problem recast as a single running-utility
/// field: mu puts `terminal_weight` on T and Lebesgue-proportional weights on
/// the running dates; the field is a_r U1(t, x/a_r) before T and
/// a_t U2(x/a_t) at T. True running rates and terminal wealth are recovered
/// by dividing the solved rates by the scales stored here.
struct MixedEmbedding {
    MarketScenario scenario;
    UtilityFieldPtr field;
    double rate_scale = 1.0;      // a_r: true rate = c_hat / a_r
    double terminal_scale = 1.0;  // a_t: terminal wealth = c_hat(T) / a_t
};

inline MixedEmbedding build_mixed_consumption_terminal(const MarketScenario& base,
                                                       UtilityFieldPtr running,
                                                       std::shared_ptr<ScalarUtility> terminal,
                                                       double terminal_weight = 0.5) {
    if (!(terminal_weight > 0.0 && terminal_weight < 1.0))
        throw std::invalid_argument("mixed embedding: terminal weight must be in (0,1)");
    const auto& grid = base.tree.time_grid();
    const int n_last = int(grid.size()) - 1;
    const double horizon = grid.back() - grid.front();

    // envelope compatibility probe: U2' / K1 must stay within sane bounds on
    // a moderate grid (the continuous-time compatibility condition)
    for (double x : {1.0, 10.0, 100.0, 1000.0}) {
        const double ratio = terminal->marginal(x) / running->envelope_lower(x);
        if (!(ratio > 1e-6 && ratio < 1e6))
            throw std::invalid_argument("mixed embedding: envelope incompatibility between U1 and U2");
    }

    MixedEmbedding out;
    out.scenario = base;
    out.rate_scale = horizon / (1.0 - terminal_weight);
    out.terminal_scale = 1.0 / terminal_weight;

    auto& w = out.scenario.mu.weights;
    w.assign(grid.size(), 0.0);
    for (int i = 0; i < n_last; ++i)
        w[std::size_t(i)] = (grid[std::size_t(i) + 1] - grid[std::size_t(i)]) / horizon * (1.0 - terminal_weight);
    w.back() = terminal_weight;

    out.field = std::make_shared<MixedField>(std::move(running), std::move(terminal), n_last,
                                             out.rate_scale, out.terminal_scale);
    return out;
}

// ---------------------------------------------------------------------------
// Randomized scenarios (property tests and the randomized acceptance suite)
// ---------------------------------------------------------------------------

/// Platform-stable uniforms from a mt19937_64 stream.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : rng_(seed) {}
    double uniform() { return double(rng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int uniform_int(int lo, int hi) { return lo + int(rng_() % std::uint64_t(hi - lo + 1)); }

private:
    std::mt19937_64 rng_;
};

enum class RandomConeKind { full, no_short, no_long };

struct RandomScenarioParams {
    int max_periods = 3;
    int max_branching = 3;
    bool allow_endowment = true;
};

/// Small random tree with a price process recentered so that a strictly
/// positive one-step measure satisfies the drift condition of the drawn cone
/// exactly; the scenario therefore always passes the no-arbitrage check.
inline MarketScenario build_random_scenario(RandomStream& rs,
                                            const RandomScenarioParams& params = {}) {
    const int periods = rs.uniform_int(1, params.max_periods);

    MarketScenario s;
    s.d = 1;
    const int cone_pick = rs.uniform_int(0, 2);
    const RandomConeKind kind = cone_pick == 0   ? RandomConeKind::full
                                : cone_pick == 1 ? RandomConeKind::no_short
                                                 : RandomConeKind::no_long;
    switch (kind) {
        case RandomConeKind::full: s.cone = ConstraintCone::unconstrained(1); break;
        case RandomConeKind::no_short: s.cone = ConstraintCone::half_line(+1.0); break;
        case RandomConeKind::no_long: s.cone = ConstraintCone::half_line(-1.0); break;
    }

    std::vector<TreeNode> nodes{TreeNode{0, kNoNode, 1.0, {}}};
    std::vector<Vector> prices{Vector{1.0}};
    Vector endow{0.0};
    const bool with_endowment = params.allow_endowment && rs.uniform() > 0.3;

    std::vector<NodeId> level{0};
    for (int t = 1; t <= periods; ++t) {
        std::vector<NodeId> next;
        for (NodeId parent : level) {
            const int nb = rs.uniform_int(2, params.max_branching);
            Vector probs(std::size_t(nb), 0.0);
            double psum = 0.0;
            for (auto& p : probs) { p = rs.uniform(0.15, 1.0); psum += p; }
            for (auto& p : probs) p /= psum;

            // child price moves recentered to zero drift under a strictly
            // positive measure; half-line cones get extra one-sided slack
            Vector moves(std::size_t(nb), 0.0);
            Vector tilt(std::size_t(nb), 0.0);
            double tsum = 0.0;
            for (std::size_t j = 0; j < moves.size(); ++j) {
                moves[j] = rs.uniform(-0.3, 0.3);
                tilt[j] = rs.uniform(0.15, 1.0);
                tsum += tilt[j];
            }
            double drift = 0.0;
            for (std::size_t j = 0; j < moves.size(); ++j) drift += moves[j] * tilt[j] / tsum;
            double shift = 0.0;
            if (kind == RandomConeKind::no_short) shift = rs.uniform(0.0, 0.1);
            else if (kind == RandomConeKind::no_long) shift = -rs.uniform(0.0, 0.1);
            for (auto& m : moves) m += -drift - shift;

            const double sp = prices[std::size_t(parent)][0];
            for (int j = 0; j < nb; ++j) {
                NodeId id = NodeId(nodes.size());
                nodes.push_back(TreeNode{t, parent, probs[std::size_t(j)], {}});
                prices.push_back(Vector{std::max(0.05, sp * (1.0 + moves[std::size_t(j)]))});
                endow.push_back(endow[std::size_t(parent)] +
                                (with_endowment ? rs.uniform(0.0, 0.25) : 0.0));
                next.push_back(id);
            }
        }
        level = std::move(next);
    }

    s.tree = EventTree(std::move(nodes), detail::uniform_grid(periods));
    s.prices = std::move(prices);
    s.endowment = std::move(endow);

    // admissible mu: keep mass on the last two dates so the prefix condition
    // holds, sprinkle the rest at random
    Vector w(std::size_t(periods) + 1, 0.0);
    for (auto& x : w)
        if (rs.uniform() > 0.5) x = rs.uniform(0.1, 1.0);
    if (periods == 1) w.back() = std::max(w.back(), rs.uniform(0.2, 1.0));
    else if (w[w.size() - 1] <= 0.0 && w[w.size() - 2] <= 0.0)
        w[rs.uniform() > 0.5 ? w.size() - 1 : w.size() - 2] = rs.uniform(0.2, 1.0);
    double wsum = 0.0;
    for (double x : w) wsum += x;
    if (wsum <= 0.0) { w.back() = 1.0; wsum = 1.0; }
    for (auto& x : w) x /= wsum;
    s.mu.weights = std::move(w);
    return s;
}

/// power / log / discounted family, drawn at random.
inline UtilityFieldPtr build_random_utility(RandomStream& rs, const std::vector<double>& time_grid) {
    const int pick = rs.uniform_int(0, 2);
    if (pick == 0) return std::make_shared<TimeInvariantField>(std::make_shared<LogUtility>());
    if (pick == 1)
        return std::make_shared<TimeInvariantField>(
            std::make_shared<PowerUtility>(rs.uniform(0.3, 0.9)));
    std::shared_ptr<ScalarUtility> inner =
        rs.uniform() > 0.5 ? std::shared_ptr<ScalarUtility>(std::make_shared<LogUtility>())
                           : std::make_shared<PowerUtility>(rs.uniform(0.3, 0.9));
    return std::make_shared<DiscountedField>(
        DiscountedField::exponential(std::move(inner), rs.uniform(0.0, 0.5), time_grid));
}

} // namespace treedual
