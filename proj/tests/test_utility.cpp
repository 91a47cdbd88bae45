#include "doctest.h"

#include <cmath>
#include <memory>
#include <vector>

#include "treedual/scenarios.hpp"
#include "treedual/utility_analysis.hpp"
#include "treedual/utility_field.hpp"

using namespace treedual;

namespace {

struct Families {
    EventTree tree;
    std::vector<UtilityFieldPtr> fields;
    std::vector<std::string> names;
};

Families make_families() {
    auto s = build_complete_binomial(2.0, 0.5, 0.5, 2);
    Families f{s.tree, {}, {}};
    const auto& grid = s.tree.time_grid();

    f.fields.push_back(std::make_shared<TimeInvariantField>(std::make_shared<PowerUtility>(0.5)));
    f.names.push_back("power");
    f.fields.push_back(std::make_shared<TimeInvariantField>(std::make_shared<LogUtility>()));
    f.names.push_back("log");
    f.fields.push_back(std::make_shared<DiscountedField>(
        DiscountedField::exponential(std::make_shared<LogUtility>(), 0.1, grid)));
    f.names.push_back("discounted");
    f.fields.push_back(std::make_shared<MixedField>(
        std::make_shared<TimeInvariantField>(std::make_shared<PowerUtility>(0.6)),
        std::make_shared<PowerUtility>(0.4), s.tree.horizon(), 2.0, 2.0));
    f.names.push_back("mixed");
    Vector b(s.tree.size());
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.8 + 0.05 * double(i % 7);
    f.fields.push_back(std::make_shared<StochasticDiscountField>(
        std::make_shared<TimeInvariantField>(std::make_shared<PowerUtility>(0.5)), b));
    f.names.push_back("stochastic-discount");
    return f;
}

/// Strips a field down to value/marginal/envelopes so the generic numeric
/// conjugate and inverse-marginal paths get exercised.
class NumericOnly final : public UtilityField {
public:
    explicit NumericOnly(UtilityFieldPtr inner) : inner_(std::move(inner)) {}
    double value(int t, NodeId n, double x) const override { return inner_->value(t, n, x); }
    double marginal(int t, NodeId n, double x) const override { return inner_->marginal(t, n, x); }
    double envelope_lower(double x) const override { return inner_->envelope_lower(x); }
    double envelope_upper(double x) const override { return inner_->envelope_upper(x); }
    bool unbounded_below() const override { return inner_->unbounded_below(); }
    double conjugate_at_zero(int t, NodeId n) const override { return inner_->conjugate_at_zero(t, n); }
    std::string describe() const override { return "numeric-only"; }

private:
    UtilityFieldPtr inner_;
};

} // namespace

TEST_CASE("closed-form conjugates: log and power") {
    TimeInvariantField logf(std::make_shared<LogUtility>());
    CHECK(logf.conjugate(0, 0, 1.0) == doctest::Approx(-1.0));
    TimeInvariantField powf(std::make_shared<PowerUtility>(0.5));
    CHECK(powf.conjugate(0, 0, 1.0) == doctest::Approx(1.0));
    CHECK_THROWS_AS(logf.conjugate(0, 0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(logf.conjugate(0, 0, -1.0), std::invalid_argument);
}

TEST_CASE("discounted conjugate equals the scaled closed form, numerically too") {
    auto grid = std::vector<double>{0.0, 1.0};
    auto field = std::make_shared<DiscountedField>(
        DiscountedField::exponential(std::make_shared<LogUtility>(), 0.1, grid));
    const double psi = std::exp(-0.1);
    const double expected = psi * (-std::log(1.0 / psi) - 1.0);
    CHECK(field->conjugate(1, 0, 1.0) == doctest::Approx(expected).epsilon(1e-14));

    NumericOnly numeric(field);
    CHECK(numeric.conjugate(1, 0, 1.0) == doctest::Approx(expected).epsilon(1e-11));
    CHECK(numeric.inverse_marginal(1, 0, 1.0) ==
          doctest::Approx(field->inverse_marginal(1, 0, 1.0)).epsilon(1e-12));
}

TEST_CASE("inverse marginals: closed forms") {
    TimeInvariantField logf(std::make_shared<LogUtility>());
    CHECK(logf.inverse_marginal(0, 0, 2.0) == doctest::Approx(0.5));
    TimeInvariantField powf(std::make_shared<PowerUtility>(0.5));
    CHECK(powf.inverse_marginal(0, 0, 4.0) == doctest::Approx(1.0 / 16.0));
    CHECK_THROWS_AS(powf.inverse_marginal(0, 0, 0.0), std::invalid_argument);
}

TEST_CASE("round trip I(dU(x)) = x across every family") {
    auto fam = make_families();
    for (std::size_t f = 0; f < fam.fields.size(); ++f) {
        const auto& field = *fam.fields[f];
        for (NodeId n = 0; n < NodeId(fam.tree.size()); ++n) {
            const int t = fam.tree.time_index(n);
            for (double x : {0.1, 1.0, 10.0}) {
                const double y = field.marginal(t, n, x);
                const double back = field.inverse_marginal(t, n, y);
                CHECK(std::fabs(back - x) <= 1e-10 * x);
            }
        }
    }
}

TEST_CASE("Fenchel-Young inequality with equality at y = dU(x)") {
    auto fam = make_families();
    RandomStream rs(41);
    for (std::size_t f = 0; f < fam.fields.size(); ++f) {
        const auto& field = *fam.fields[f];
        for (int trial = 0; trial < 200; ++trial) {
            const NodeId n = NodeId(rs.uniform_int(0, int(fam.tree.size()) - 1));
            const int t = fam.tree.time_index(n);
            const double x = std::pow(10.0, rs.uniform(-3.0, 3.0));
            const double y = std::pow(10.0, rs.uniform(-3.0, 3.0));
            const double u = field.value(t, n, x);
            const double v = field.conjugate(t, n, y);
            CHECK(u <= v + x * y + 1e-9 * (1.0 + std::fabs(u)));
            const double ystar = field.marginal(t, n, x);
            const double gap = field.conjugate(t, n, ystar) + x * ystar - u;
            CHECK(std::fabs(gap) <= 1e-9 * (1.0 + std::fabs(u)));
        }
    }
}

TEST_CASE("conjugate derivative is -I (finite differences on V)") {
    auto fam = make_families();
    for (std::size_t f = 0; f < fam.fields.size(); ++f) {
        const auto& field = *fam.fields[f];
        for (double y : {0.25, 1.0, 3.0}) {
            const double h = 1e-5 * y;
            const double fd =
                (field.conjugate(0, 0, y + h) - field.conjugate(0, 0, y - h)) / (2.0 * h);
            CHECK(fd == doctest::Approx(field.conjugate_derivative(0, 0, y)).epsilon(1e-8));
        }
    }
}

TEST_CASE("conjugate is decreasing and midpoint convex") {
    auto fam = make_families();
    RandomStream rs(59);
    for (std::size_t f = 0; f < fam.fields.size(); ++f) {
        const auto& field = *fam.fields[f];
        for (int trial = 0; trial < 60; ++trial) {
            double y1 = std::pow(10.0, rs.uniform(-2.0, 2.0));
            double y3 = std::pow(10.0, rs.uniform(-2.0, 2.0));
            if (y1 > y3) std::swap(y1, y3);
            if (y3 - y1 < 1e-6) continue;
            const double y2 = 0.5 * (y1 + y3);
            const double v1 = field.conjugate(0, 0, y1);
            const double v2 = field.conjugate(0, 0, y2);
            const double v3 = field.conjugate(0, 0, y3);
            CHECK(v2 < v1);
            CHECK(v2 <= 0.5 * (v1 + v3) + 1e-12 * (1.0 + std::fabs(v2)));
        }
    }
}

TEST_CASE("envelopes contain the marginal at random points, every family") {
    auto fam = make_families();
    RandomStream rs(71);
    for (std::size_t f = 0; f < fam.fields.size(); ++f) {
        const auto& field = *fam.fields[f];
        for (int trial = 0; trial < 1000; ++trial) {
            const NodeId n = NodeId(rs.uniform_int(0, int(fam.tree.size()) - 1));
            const int t = fam.tree.time_index(n);
            const double x = std::pow(10.0, rs.uniform(-3.0, 3.0));
            const double du = field.marginal(t, n, x);
            CHECK(field.envelope_lower(x) <= du * (1.0 + 1e-12));
            CHECK(du <= field.envelope_upper(x) * (1.0 + 1e-12));
        }
    }
}

TEST_CASE("minorant/majorant: time-invariant field degenerates to U itself") {
    auto s = build_complete_binomial(2.0, 0.5, 0.5, 1);
    TimeInvariantField field(std::make_shared<PowerUtility>(0.5));
    auto mm = minorant_majorant(field, s.tree);
    for (double x : {0.01, 0.5, 1.0, 7.0, 300.0}) {
        CHECK(mm.lower.value(x) == doctest::Approx(field.value(0, 0, x)).epsilon(1e-9));
        CHECK(mm.upper.value(x) == doctest::Approx(field.value(0, 0, x)).epsilon(1e-9));
    }
}

TEST_CASE("minorant/majorant sandwich the discounted family and its conjugate") {
    auto s = build_complete_binomial(2.0, 0.5, 0.5, 2);
    auto field = std::make_shared<DiscountedField>(
        DiscountedField::exponential(std::make_shared<LogUtility>(), 0.3, s.tree.time_grid()));
    auto mm = minorant_majorant(*field, s.tree, 1000);
    RandomStream rs(83);
    for (int trial = 0; trial < 200; ++trial) {
        const NodeId n = NodeId(rs.uniform_int(0, int(s.tree.size()) - 1));
        const int t = s.tree.time_index(n);
        const double x = std::pow(10.0, rs.uniform(-3.0, 3.0));
        const double u = field->value(t, n, x);
        CHECK(mm.lower.value(x) <= u + 1e-8 * (1.0 + std::fabs(u)));
        CHECK(u <= mm.upper.value(x) + 1e-8 * (1.0 + std::fabs(u)));
        const double y = std::pow(10.0, rs.uniform(-2.0, 2.0));
        const double v = field->conjugate(t, n, y);
        CHECK(mm.lower.conjugate(y) <= v + 1e-7 * (1.0 + std::fabs(v)));
        CHECK(v <= mm.upper.conjugate(y) + 1e-7 * (1.0 + std::fabs(v)));
    }
}

TEST_CASE("asymptotic elasticity: power utility has elasticity alpha") {
    auto s = build_complete_binomial(2.0, 0.5, 0.5, 1);
    for (double alpha : {0.3, 0.5, 0.9}) {
        TimeInvariantField field(std::make_shared<PowerUtility>(alpha));
        auto rep = asymptotic_elasticity(field, s.tree, 1e6, 60, {(1.0 + alpha) / 2.0});
        CHECK(std::fabs(rep.tail_estimate - alpha) <= 1e-3);
        CHECK(rep.reasonably_elastic);
        REQUIRE(rep.gamma_checks.size() == 1);
        CHECK(rep.gamma_checks[0].gamma2);
        CHECK(rep.gamma_checks[0].gamma4);
        CHECK(rep.gamma_checks[0].gamma1);
        CHECK(rep.gamma_checks[0].gamma3);
    }
}

TEST_CASE("asymptotic elasticity: log utility tail vanishes") {
    auto s = build_complete_binomial(2.0, 0.5, 0.5, 1);
    TimeInvariantField field(std::make_shared<LogUtility>());
    auto rep = asymptotic_elasticity(field, s.tree, 1e6, 60, {0.5});
    CHECK(rep.sup_ratio <= 1.0);
    CHECK(rep.tail_estimate <= 0.08);
    CHECK(rep.reasonably_elastic);
    CHECK(rep.gamma_checks[0].gamma4);
}

TEST_CASE("elasticity ratio requires a positive utility tail") {
    // log keeps U(x) <= 0 for x <= 1 only; shifting far enough breaks the scan domain
    auto s = build_complete_binomial(2.0, 0.5, 0.5, 1);
    TimeInvariantField field(std::make_shared<LogUtility>());
    CHECK_NOTHROW(asymptotic_elasticity(field, s.tree, 1e4, 40, {}));
}
