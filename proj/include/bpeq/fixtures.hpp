#pragma once

#include <string>

#include "bpeq/scenario.hpp"

namespace bpeq::app {

// Bundled reference scenarios used by the integration and acceptance suites
// and exported by the CLI `fixtures` subcommand.

// Four-leg isolated intersection: 500 m approaches with 3 lanes (1 left,
// 2 through), 10 m cells, the standard 8 two-movement phase set, no right
// turns. Demand is symmetric at `rate_vph` per approach (through 0.75,
// left 0.25).
nlohmann::json isolated_network_json();
nlohmann::json isolated_scenario_json(double rate_vph, const std::string& name);
ScenarioConfig make_isolated_scenario(double rate_vph, const std::string& name);

// 3x3 grid of four-leg intersections: 400 m two-lane links (left lane +
// shared through/right lane), 12 entries on the perimeter, turning ratios
// through 0.7 / left 0.2 / right 0.1.
nlohmann::json grid_network_json();
nlohmann::json grid_scenario_json(double rate_vph, const std::string& name);
ScenarioConfig make_grid_scenario(double rate_vph, const std::string& name);

// Max critical flow ratio over the network's intersections under the
// scenario's mean demand; 1.0 marks the capacity boundary.
double capacity_ratio(const ScenarioConfig& config);

// Multiplies every entry rate so the capacity ratio becomes `fraction`.
void scale_demand_to_capacity_fraction(ScenarioConfig& config, double fraction);

// Writes the bundled networks and scenario configs into `out_dir`.
void write_fixtures(const std::string& out_dir);

} // namespace bpeq::app
