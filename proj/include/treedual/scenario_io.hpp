#pragma once

#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "treedual/market.hpp"
#include "treedual/utility_field.hpp"

namespace treedual {

class ScenarioParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The document parsed but the scenario violates an invariant. Failing only
/// the no-arbitrage postulate is distinguished for the exit-code contract.
class ScenarioValidationError : public std::runtime_error {
public:
    ScenarioValidationError(const std::string& what, bool arbitrage_only)
        : std::runtime_error(what), arbitrage_only_(arbitrage_only) {}
    bool arbitrage_only() const { return arbitrage_only_; }

private:
    bool arbitrage_only_;
};

struct LoadedScenario {
    MarketScenario scenario;
    UtilityFieldPtr field;
    nlohmann::json utility_spec;
};

namespace io_detail {

using nlohmann::json;

template <class T>
T field_as(const json& j, const std::string& key, const std::string& where) {
    if (!j.contains(key))
        throw ScenarioParseError("missing field '" + key + "' in " + where);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ScenarioParseError("bad value for '" + where + "." + key + "': " + e.what());
    }
}

inline std::shared_ptr<ScalarUtility> parse_scalar_utility(const json& j, const std::string& where) {
    const std::string family = field_as<std::string>(j, "family", where);
    if (family == "log") return std::make_shared<LogUtility>();
    if (family == "power") return std::make_shared<PowerUtility>(field_as<double>(j, "alpha", where));
    throw ScenarioParseError("unknown utility family '" + family + "' at " + where);
}

inline UtilityFieldPtr parse_utility(const json& j, const EventTree& tree, const std::string& where) {
    const std::string family = field_as<std::string>(j, "family", where);
    if (family == "log" || family == "power")
        return std::make_shared<TimeInvariantField>(parse_scalar_utility(j, where));
    if (family == "discounted") {
        auto inner = parse_scalar_utility(j.contains("inner") ? j.at("inner") : json{{"family", "log"}},
                                          where + ".inner");
        if (j.contains("psi")) {
            auto psi = field_as<std::vector<double>>(j, "psi", where);
            if (psi.size() != tree.time_grid().size())
                throw ScenarioParseError(where + ".psi: one entry per time-grid point required");
            return std::make_shared<DiscountedField>(std::move(inner), std::move(psi));
        }
        const double beta = field_as<double>(j, "beta", where);
        return std::make_shared<DiscountedField>(
            DiscountedField::exponential(std::move(inner), beta, tree.time_grid()));
    }
    if (family == "mixed") {
        if (!j.contains("running"))
            throw ScenarioParseError("missing field 'running' in " + where);
        auto running = parse_utility(j.at("running"), tree, where + ".running");
        auto terminal = parse_scalar_utility(
            j.contains("terminal") ? j.at("terminal") : json{{"family", "log"}}, where + ".terminal");
        const double ar = j.value("scale_running", 1.0);
        const double at = j.value("scale_terminal", 1.0);
        return std::make_shared<MixedField>(std::move(running), std::move(terminal), tree.horizon(),
                                            ar, at);
    }
    if (family == "stochastic_discount") {
        if (!j.contains("inner"))
            throw ScenarioParseError("missing field 'inner' in " + where);
        auto inner = parse_utility(j.at("inner"), tree, where + ".inner");
        auto disc = field_as<std::vector<double>>(j, "discount", where);
        if (disc.size() != tree.size())
            throw ScenarioParseError(where + ".discount: one entry per node required");
        return std::make_shared<StochasticDiscountField>(std::move(inner), std::move(disc));
    }
    throw ScenarioParseError("unknown utility family '" + family + "' at " + where);
}

} // namespace io_detail

/// Parses a scenario document (see README for the schema), builds the market
/// data and utility field and validates the scenario. Parse errors carry the
/// offending field path; validation failures list the violated invariants.
inline LoadedScenario parse_scenario_json(const nlohmann::json& doc) {
    using io_detail::field_as;
    LoadedScenario out;

    const auto time_grid = field_as<std::vector<double>>(doc, "time_grid", "scenario");
    if (!doc.contains("nodes")) throw ScenarioParseError("missing field 'nodes' in scenario");
    const auto& jnodes = doc.at("nodes");
    if (!jnodes.is_array() || jnodes.empty())
        throw ScenarioParseError("scenario.nodes: nonempty array required");

    std::vector<TreeNode> nodes(jnodes.size());
    std::vector<bool> seen(jnodes.size(), false);
    for (std::size_t i = 0; i < jnodes.size(); ++i) {
        const std::string where = "nodes[" + std::to_string(i) + "]";
        const auto& jn = jnodes.at(i);
        const auto id = field_as<int>(jn, "id", where);
        if (id < 0 || id >= int(jnodes.size()))
            throw ScenarioParseError(where + ".id: ids must be 0.." + std::to_string(jnodes.size() - 1));
        if (seen[std::size_t(id)]) throw ScenarioParseError(where + ".id: duplicate node id");
        seen[std::size_t(id)] = true;
        TreeNode node;
        node.parent = field_as<int>(jn, "parent", where);
        node.time_index = field_as<int>(jn, "time_index", where);
        node.cond_prob = jn.value("cond_prob", 1.0);
        if (node.cond_prob < 0.0)
            throw ScenarioParseError(where + ".cond_prob: negative probability");
        nodes[std::size_t(id)] = node;
    }

    MarketScenario s;
    try {
        s.tree = EventTree(std::move(nodes), time_grid);
    } catch (const std::invalid_argument& e) {
        throw ScenarioParseError(std::string("scenario.nodes: ") + e.what());
    }

    const auto prices = field_as<std::vector<std::vector<double>>>(doc, "prices", "scenario");
    if (prices.size() != s.tree.size())
        throw ScenarioParseError("scenario.prices: one price vector per node required");
    s.prices = prices;
    s.d = prices.empty() ? 1 : int(prices.front().size());

    s.endowment = doc.contains("endowment")
                      ? field_as<std::vector<double>>(doc, "endowment", "scenario")
                      : Vector(s.tree.size(), 0.0);
    if (s.endowment.size() != s.tree.size())
        throw ScenarioParseError("scenario.endowment: one value per node required");

    s.mu.weights = field_as<std::vector<double>>(doc, "mu", "scenario");

    if (doc.contains("cone")) {
        const auto gens =
            field_as<std::vector<std::vector<double>>>(doc.at("cone"), "generators", "scenario.cone");
        s.cone.dim = s.d;
        s.cone.generators = gens;
    } else {
        s.cone = ConstraintCone::unconstrained(s.d);
    }

    if (!doc.contains("utility")) throw ScenarioParseError("missing field 'utility' in scenario");
    out.utility_spec = doc.at("utility");
    out.field = io_detail::parse_utility(out.utility_spec, s.tree, "utility");

    auto rep = validate_scenario(s);
    if (!rep.ok()) {
        std::string msg = "scenario invalid:";
        bool arbitrage_only = true;
        for (const auto& v : rep.violations) {
            msg += " [" + v + "]";
            if (v.find("arbitrage") == std::string::npos) arbitrage_only = false;
        }
        throw ScenarioValidationError(msg, arbitrage_only);
    }
    out.scenario = std::move(s);
    return out;
}

inline LoadedScenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioParseError("cannot open scenario file: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ScenarioParseError("syntax error in " + path + ": " + e.what());
    }
    return parse_scenario_json(doc);
}

/// Serializes a scenario (with its utility spec) back to the document format.
inline nlohmann::json scenario_to_json(const MarketScenario& s, const nlohmann::json& utility_spec) {
    nlohmann::json doc;
    doc["format"] = "treedual/1";
    doc["time_grid"] = s.tree.time_grid();
    auto& jnodes = doc["nodes"] = nlohmann::json::array();
    for (NodeId i = 0; i < NodeId(s.tree.size()); ++i) {
        const auto& n = s.tree.node(i);
        jnodes.push_back({{"id", i},
                          {"parent", n.parent},
                          {"time_index", n.time_index},
                          {"cond_prob", n.cond_prob}});
    }
    doc["prices"] = s.prices;
    doc["endowment"] = s.endowment;
    doc["mu"] = s.mu.weights;
    doc["cone"] = {{"generators", s.cone.generators}};
    doc["utility"] = utility_spec;
    return doc;
}

inline void save_scenario(const MarketScenario& s, const nlohmann::json& utility_spec,
                          const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write scenario file: " + path);
    out << scenario_to_json(s, utility_spec).dump(2) << "\n";
}

} // namespace treedual
