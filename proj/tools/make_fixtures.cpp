// Regenerates the shipped scenario fixtures under fixtures/.

#include <cstdio>
#include <string>

#include "json.hpp"

#include "treedual/scenario_io.hpp"
#include "treedual/scenarios.hpp"

using namespace treedual;
using nlohmann::json;

int main(int argc, char** argv) {
    const std::string dir = argc > 1 ? argv[1] : "fixtures";

    {
        auto s = build_complete_binomial(2.0, 0.5, 0.5, 1);
        save_scenario(s, json{{"family", "log"}}, dir + "/complete_binomial_log.scn");
    }
    {
        auto s = build_no_short_sale(2.0, 0.5, 0.5, 1);
        save_scenario(s, json{{"family", "log"}}, dir + "/no_short_sale_log.scn");
    }
    {
        auto s = build_no_short_sale(1.8, 0.6, 0.45, 2);
        s.mu.weights = {0.3, 0.3, 0.4};
        save_scenario(s, json{{"family", "power"}, {"alpha", 0.5}},
                      dir + "/no_short_sale_power.scn");
    }
    {
        auto s = build_lakner_slud_constant(1.0, 0.5, 2);
        save_scenario(s, json{{"family", "log"}}, dir + "/lakner_slud_const.scn");
    }
    {
        // consumption + terminal wealth on a two-period binomial, horizon T=2,
        // embedded as a single running field with the canonical weight 1/2 at T
        auto base = build_complete_binomial(2.0, 0.5, 0.5, 2, 1.0, 2.0);
        auto emb = build_mixed_consumption_terminal(
            base, std::make_shared<TimeInvariantField>(std::make_shared<LogUtility>()),
            std::make_shared<LogUtility>(), 0.5);
        json uspec{{"family", "mixed"},
                   {"running", {{"family", "log"}}},
                   {"terminal", {{"family", "log"}}},
                   {"scale_running", emb.rate_scale},
                   {"scale_terminal", emb.terminal_scale}};
        save_scenario(emb.scenario, uspec, dir + "/mixed_consumption_terminal.scn");
    }
    std::printf("fixtures written to %s\n", dir.c_str());
    return 0;
}
