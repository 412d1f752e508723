#include "bpeq/fixtures.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <fstream>
#include <set>

namespace bpeq::app {

using nlohmann::json;

namespace {

// Unordered movement pairs that may share a green at a standard four-leg
// intersection: opposing throughs, opposing lefts, and each approach's own
// through+left. Everything else conflicts.
json standard_conflicts(const std::array<std::string, 4>& through,
                        const std::array<std::string, 4>& left) {
  // Index order: 0 = southbound, 1 = northbound, 2 = westbound, 3 = eastbound;
  // 0/1 and 2/3 oppose each other.
  std::set<std::pair<std::string, std::string>> allowed;
  auto allow = [&](const std::string& a, const std::string& b) {
    allowed.insert({std::min(a, b), std::max(a, b)});
  };
  allow(through[0], through[1]);
  allow(through[2], through[3]);
  allow(left[0], left[1]);
  allow(left[2], left[3]);
  for (int i = 0; i < 4; ++i) allow(through[i], left[i]);

  std::vector<std::string> all;
  for (const auto& m : through) all.push_back(m);
  for (const auto& m : left) all.push_back(m);
  json conflicts = json::array();
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      const auto key = std::make_pair(std::min(all[i], all[j]), std::max(all[i], all[j]));
      if (!allowed.count(key)) conflicts.push_back({all[i], all[j]});
    }
  }
  return conflicts;
}

json turning_entry(const std::string& from, const json& ratios) {
  return json{{"from", from}, {"ratios", ratios}};
}

} // namespace

json isolated_network_json() {
  json doc;
  doc["links"] = json::array();
  const std::array<std::string, 4> sides = {"n", "s", "e", "w"};
  for (const auto& side : sides) {
    doc["links"].push_back({{"id", side + "_in"},
                            {"length_m", 500.0},
                            {"lanes", 3},
                            {"from", "b" + side},
                            {"to", "x"},
                            {"cell_length_m", 10.0}});
    doc["links"].push_back({{"id", side + "_out"},
                            {"length_m", 500.0},
                            {"lanes", 3},
                            {"from", "x"},
                            {"to", "b" + side},
                            {"cell_length_m", 10.0}});
  }
  // Compass geometry: traffic from the north heads south, its left turn
  // exits east, and so on around the intersection.
  doc["movements"] = json::array(
      {{{"id", "sb_t"}, {"from", "n_in"}, {"to", "s_out"}, {"turn", "through"}, {"lane_count", 2}},
       {{"id", "sb_l"}, {"from", "n_in"}, {"to", "e_out"}, {"turn", "left"}, {"lane_count", 1}},
       {{"id", "nb_t"}, {"from", "s_in"}, {"to", "n_out"}, {"turn", "through"}, {"lane_count", 2}},
       {{"id", "nb_l"}, {"from", "s_in"}, {"to", "w_out"}, {"turn", "left"}, {"lane_count", 1}},
       {{"id", "wb_t"}, {"from", "e_in"}, {"to", "w_out"}, {"turn", "through"}, {"lane_count", 2}},
       {{"id", "wb_l"}, {"from", "e_in"}, {"to", "s_out"}, {"turn", "left"}, {"lane_count", 1}},
       {{"id", "eb_t"}, {"from", "w_in"}, {"to", "e_out"}, {"turn", "through"}, {"lane_count", 2}},
       {{"id", "eb_l"}, {"from", "w_in"}, {"to", "n_out"}, {"turn", "left"}, {"lane_count", 1}}});
  doc["conflicts"] = standard_conflicts({"sb_t", "nb_t", "wb_t", "eb_t"},
                                        {"sb_l", "nb_l", "wb_l", "eb_l"});
  doc["intersections"] = json::array({{{"id", "x"}, {"standard_phases", true}}});
  return doc;
}

json isolated_scenario_json(double rate_vph, const std::string& name) {
  json doc;
  doc["name"] = name;
  doc["network"] = isolated_network_json();
  // Field demand is lumpy: the heavy direction rotates every 20 minutes
  // (morning-peak style waves). Stationary symmetric input would let a
  // pre-timed plan match an adaptive one and starve the left turns.
  const std::array<std::string, 4> sides = {"n", "s", "e", "w"};
  constexpr double kPeak = 2.6;
  constexpr double kRest = (4.0 - kPeak) / 3.0;
  const double profile[3][4] = {
      {kPeak, kRest, kRest, kRest},  // north-heavy
      {kRest, kRest, kPeak, kRest},  // east-heavy
      {kRest, kPeak, kRest, kRest},  // south-heavy
  };
  json entries = json::array();
  for (std::size_t a = 0; a < sides.size(); ++a) {
    json segments = json::array();
    for (int regime = 0; regime < 3; ++regime) {
      segments.push_back(
          {{"t_start", 1200.0 * regime}, {"rate_vph", rate_vph * profile[regime][a]}});
    }
    entries.push_back({{"link", sides[a] + "_in"}, {"segments", segments}});
  }
  json turning = json::array(
      {turning_entry("n_in", {{"s_out", 0.75}, {"e_out", 0.25}}),
       turning_entry("s_in", {{"n_out", 0.75}, {"w_out", 0.25}}),
       turning_entry("e_in", {{"w_out", 0.75}, {"s_out", 0.25}}),
       turning_entry("w_in", {{"e_out", 0.75}, {"n_out", 0.25}})});
  doc["demand"] = {{"entries", entries}, {"turning", turning}};
  doc["controllers"] = {{"default", {{"kind", "bp_perfect"}}}};
  doc["penetration"] = 1.0;
  doc["seeds"] = {1, 2, 3, 4, 5};
  doc["duration_s"] = 3600.0;
  doc["metrics_window_s"] = 600.0;
  return doc;
}

ScenarioConfig make_isolated_scenario(double rate_vph, const std::string& name) {
  return config_from_json(isolated_scenario_json(rate_vph, name), "");
}

json grid_network_json() {
  constexpr int kRows = 3;
  constexpr int kCols = 3;
  constexpr double kLength = 400.0;
  json links = json::array();
  auto add_link = [&](const std::string& id, const std::string& from, const std::string& to) {
    links.push_back({{"id", id},
                     {"length_m", kLength},
                     {"lanes", 2},
                     {"from", from},
                     {"to", to},
                     {"cell_length_m", 10.0}});
  };
  auto node = [](int r, int c) { return "x" + std::to_string(r) + std::to_string(c); };

  for (int r = 0; r < kRows; ++r) {
    const std::string row = std::to_string(r);
    add_link("he" + row + "_in", "bw" + row, node(r, 0));
    add_link("he" + row + "_01", node(r, 0), node(r, 1));
    add_link("he" + row + "_12", node(r, 1), node(r, 2));
    add_link("he" + row + "_out", node(r, 2), "be" + row);
    add_link("hw" + row + "_in", "be" + row, node(r, 2));
    add_link("hw" + row + "_21", node(r, 2), node(r, 1));
    add_link("hw" + row + "_10", node(r, 1), node(r, 0));
    add_link("hw" + row + "_out", node(r, 0), "bw" + row);
  }
  for (int c = 0; c < kCols; ++c) {
    const std::string col = std::to_string(c);
    add_link("vs" + col + "_in", "bn" + col, node(0, c));
    add_link("vs" + col + "_01", node(0, c), node(1, c));
    add_link("vs" + col + "_12", node(1, c), node(2, c));
    add_link("vs" + col + "_out", node(2, c), "bs" + col);
    add_link("vn" + col + "_in", "bs" + col, node(2, c));
    add_link("vn" + col + "_21", node(2, c), node(1, c));
    add_link("vn" + col + "_10", node(1, c), node(0, c));
    add_link("vn" + col + "_out", node(0, c), "bn" + col);
  }

  // Per-node approach links by bound direction.
  auto eb_in = [&](int r, int c) {
    return c == 0 ? "he" + std::to_string(r) + "_in"
                  : "he" + std::to_string(r) + "_" + std::to_string(c - 1) + std::to_string(c);
  };
  auto eb_out = [&](int r, int c) {
    return c == kCols - 1
               ? "he" + std::to_string(r) + "_out"
               : "he" + std::to_string(r) + "_" + std::to_string(c) + std::to_string(c + 1);
  };
  auto wb_in = [&](int r, int c) {
    return c == kCols - 1
               ? "hw" + std::to_string(r) + "_in"
               : "hw" + std::to_string(r) + "_" + std::to_string(c + 1) + std::to_string(c);
  };
  auto wb_out = [&](int r, int c) {
    return c == 0 ? "hw" + std::to_string(r) + "_out"
                  : "hw" + std::to_string(r) + "_" + std::to_string(c) + std::to_string(c - 1);
  };
  auto sb_in = [&](int r, int c) {
    return r == 0 ? "vs" + std::to_string(c) + "_in"
                  : "vs" + std::to_string(c) + "_" + std::to_string(r - 1) + std::to_string(r);
  };
  auto sb_out = [&](int r, int c) {
    return r == kRows - 1
               ? "vs" + std::to_string(c) + "_out"
               : "vs" + std::to_string(c) + "_" + std::to_string(r) + std::to_string(r + 1);
  };
  auto nb_in = [&](int r, int c) {
    return r == kRows - 1
               ? "vn" + std::to_string(c) + "_in"
               : "vn" + std::to_string(c) + "_" + std::to_string(r + 1) + std::to_string(r);
  };
  auto nb_out = [&](int r, int c) {
    return r == 0 ? "vn" + std::to_string(c) + "_out"
                  : "vn" + std::to_string(c) + "_" + std::to_string(r) + std::to_string(r - 1);
  };

  json movements = json::array();
  json lanes = json::array();
  json conflicts = json::array();
  json intersections = json::array();

  for (int r = 0; r < kRows; ++r) {
    for (int c = 0; c < kCols; ++c) {
      const std::string tag = std::to_string(r) + std::to_string(c) + "_";
      struct Approach {
        std::string name;
        std::string in;
        std::string through_to;
        std::string left_to;
        std::string right_to;
      };
      const std::array<Approach, 4> approaches = {
          Approach{"sb", sb_in(r, c), sb_out(r, c), eb_out(r, c), wb_out(r, c)},
          Approach{"nb", nb_in(r, c), nb_out(r, c), wb_out(r, c), eb_out(r, c)},
          Approach{"wb", wb_in(r, c), wb_out(r, c), sb_out(r, c), nb_out(r, c)},
          Approach{"eb", eb_in(r, c), eb_out(r, c), nb_out(r, c), sb_out(r, c)}};
      std::array<std::string, 4> through_ids;
      std::array<std::string, 4> left_ids;
      for (std::size_t a = 0; a < approaches.size(); ++a) {
        const Approach& ap = approaches[a];
        through_ids[a] = "m" + tag + ap.name + "_t";
        left_ids[a] = "m" + tag + ap.name + "_l";
        const std::string right_id = "m" + tag + ap.name + "_r";
        movements.push_back({{"id", through_ids[a]},
                             {"from", ap.in},
                             {"to", ap.through_to},
                             {"turn", "through"},
                             {"lane_count", 1}});
        movements.push_back({{"id", left_ids[a]},
                             {"from", ap.in},
                             {"to", ap.left_to},
                             {"turn", "left"},
                             {"lane_count", 1}});
        movements.push_back({{"id", right_id},
                             {"from", ap.in},
                             {"to", ap.right_to},
                             {"turn", "right"},
                             {"lane_count", 1}});
        lanes.push_back(
            {{"link", ap.in}, {"index", 0}, {"movements", json::array({left_ids[a]})}});
        lanes.push_back({{"link", ap.in},
                         {"index", 1},
                         {"movements", json::array({through_ids[a], right_id})}});
      }
      for (const auto& pair : standard_conflicts(through_ids, left_ids)) {
        conflicts.push_back(pair);
      }
      intersections.push_back({{"id", node(r, c)}, {"standard_phases", true}});
    }
  }
  json doc;
  doc["links"] = links;
  doc["lanes"] = lanes;
  doc["movements"] = movements;
  doc["conflicts"] = conflicts;
  doc["intersections"] = intersections;
  return doc;
}

json grid_scenario_json(double rate_vph, const std::string& name) {
  json network = grid_network_json();
  json doc;
  doc["name"] = name;
  doc["network"] = network;
  json entries = json::array();
  json turning = json::array();
  // Uneven directional loads, heaviest on the eastbound corridors.
  const std::map<std::string, double> factors = {
      {"he0_in", 1.2}, {"he1_in", 1.0}, {"he2_in", 0.8},
      {"hw0_in", 0.6}, {"hw1_in", 0.8}, {"hw2_in", 0.9},
      {"vs0_in", 1.1}, {"vs1_in", 0.7}, {"vs2_in", 0.9},
      {"vn0_in", 0.6}, {"vn1_in", 1.0}, {"vn2_in", 0.7}};
  for (const auto& link : network["links"]) {
    const std::string id = link["id"].get<std::string>();
    if (id.find("_in") != std::string::npos) {
      entries.push_back({{"link", id}, {"rate_vph", rate_vph * factors.at(id)}});
    }
  }
  // Uniform split: through 0.7, left 0.2, right 0.1 at every approach.
  std::unordered_map<std::string, json> tables;
  for (const auto& mv : network["movements"]) {
    const std::string from = mv["from"].get<std::string>();
    const std::string to = mv["to"].get<std::string>();
    const std::string turn = mv["turn"].get<std::string>();
    const double ratio = turn == "through" ? 0.7 : (turn == "left" ? 0.2 : 0.1);
    tables[from][to] = ratio;
  }
  std::vector<std::string> froms;
  for (const auto& [from, ratios] : tables) froms.push_back(from);
  std::sort(froms.begin(), froms.end());
  for (const auto& from : froms) {
    turning.push_back(turning_entry(from, tables[from]));
  }
  doc["demand"] = {{"entries", entries}, {"turning", turning}};
  doc["controllers"] = {{"default", {{"kind", "bp_perfect"}}}};
  doc["penetration"] = 1.0;
  doc["seeds"] = {1, 2, 3, 4, 5};
  doc["duration_s"] = 7200.0;
  doc["metrics_window_s"] = 300.0;
  return doc;
}

ScenarioConfig make_grid_scenario(double rate_vph, const std::string& name) {
  return config_from_json(grid_scenario_json(rate_vph, name), "");
}

double capacity_ratio(const ScenarioConfig& config) {
  const ctl::MeanDemand mean = config.demand.mean(config.network, config.duration_s);
  const ctl::DemandFlows flows = ctl::propagate_flows(config.network, mean);
  return ctl::max_critical_ratio(config.network, flows, config.saturation);
}

void scale_demand_to_capacity_fraction(ScenarioConfig& config, double fraction) {
  const double current = capacity_ratio(config);
  if (current <= 0.0) throw std::invalid_argument("demand is zero; cannot scale to capacity");
  // Estimated capacity derates the flow-ratio bound by the clearance share a
  // slot controller can burn in the worst case (one switch per slot idles the
  // intersection for the all-red interval).
  const ctl::ControlSlot& slot = config.default_controller.slot;
  const double derate = 1.0 - slot.all_red_s / slot.slot_s;
  const double factor = fraction * derate / current;
  for (auto& entry : config.demand.entries) {
    for (auto& seg : entry.segments) seg.rate_vph *= factor;
  }
}

void write_fixtures(const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto dump = [&](const std::string& file, const json& doc) {
    std::ofstream out(fs::path(out_dir) / file);
    if (!out) throw std::runtime_error("cannot write fixture '" + file + "'");
    out << doc.dump(2) << '\n';
  };
  dump("network_isolated.json", isolated_network_json());
  dump("network_grid3x3.json", grid_network_json());

  auto with_network_path = [](json scenario, const std::string& path) {
    scenario["network"] = path;
    return scenario;
  };
  dump("isolated_low.json",
       with_network_path(isolated_scenario_json(250.0, "isolated_low"), "network_isolated.json"));
  dump("isolated_high.json",
       with_network_path(isolated_scenario_json(600.0, "isolated_high"), "network_isolated.json"));
  dump("grid.json", with_network_path(grid_scenario_json(450.0, "grid"), "network_grid3x3.json"));
}

} // namespace bpeq::app
