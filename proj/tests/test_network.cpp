#include "doctest.h"

#include <algorithm>
#include <set>

#include "bpeq/fixtures.hpp"
#include "bpeq/network.hpp"

using namespace bpeq;

namespace {

net::Network standard_four_leg() {
  return net::build_network(app::isolated_network_json().dump());
}

} // namespace

TEST_CASE("four-leg network: 500 m links with 10 m cells give 50 cells per lane") {
  const net::Network network = standard_four_leg();
  CHECK(network.links.size() == 8);
  for (const auto& lane : network.lanes) {
    CHECK(lane.cells.size() == 50);
    CHECK(lane.cells.front().center == doctest::Approx(5.0));
    CHECK(lane.cells.back().center == doctest::Approx(495.0));
  }
}

TEST_CASE("cell tiling is exact for every lane, remainder absorbed by the last cell") {
  const net::Network network = net::build_network(R"({
    "links": [{"id": "a", "length_m": 507.0, "lanes": 2, "from": "u", "to": "v",
               "cell_length_m": 10.0}]
  })");
  for (const auto& lane : network.lanes) {
    double total = 0.0;
    for (const auto& cell : lane.cells) {
      CHECK(cell.length > 0.0);
      CHECK(cell.center == doctest::Approx(total + cell.length / 2.0));
      total += cell.length;
    }
    CHECK(total == doctest::Approx(507.0));
    CHECK(lane.cells.size() == 50);
    CHECK(lane.cells.back().length == doctest::Approx(17.0));
  }
}

TEST_CASE("single one-lane link is a valid network with no phases") {
  const net::Network network = net::build_network(R"({
    "links": [{"id": "solo", "length_m": 200.0, "lanes": 1, "from": "a", "to": "b"}]
  })");
  CHECK(network.links.size() == 1);
  CHECK(network.links[0].is_entry);
  CHECK(network.links[0].is_exit);
  CHECK(network.intersections.empty());
}

TEST_CASE("phase with conflicting movements is rejected with the offending ids") {
  nlohmann::json doc = app::isolated_network_json();
  doc["intersections"][0]["standard_phases"] = false;
  doc["phases"] = nlohmann::json::array(
      {{{"intersection", "x"}, {"id", "bad"}, {"movements", {"nb_t", "wb_t"}}},
       {{"intersection", "x"},
        {"id", "rest"},
        {"movements", {"sb_t", "sb_l"}}}});
  // Cover the remaining movements so only the conflict trips validation.
  doc["phases"].push_back({{"intersection", "x"}, {"id", "p3"}, {"movements", {"nb_l", "sb_l"}}});
  doc["phases"].push_back({{"intersection", "x"}, {"id", "p4"}, {"movements", {"eb_t", "wb_t"}}});
  doc["phases"].push_back({{"intersection", "x"}, {"id", "p5"}, {"movements", {"eb_l", "wb_l"}}});
  doc["phases"].push_back({{"intersection", "x"}, {"id", "p6"}, {"movements", {"nb_t", "nb_l"}}});
  CHECK_THROWS_WITH_AS(net::build_network(doc.dump()),
                       doctest::Contains("'nb_t' and 'wb_t' conflict"), net::ValidationError);
}

TEST_CASE("movement referencing an unknown link is reported by id") {
  CHECK_THROWS_WITH_AS(net::build_network(R"({
    "links": [{"id": "a", "length_m": 100.0, "lanes": 1, "from": "u", "to": "v"}],
    "movements": [{"id": "ghost", "from": "a", "to": "nowhere"}]
  })"),
                       doctest::Contains("unknown link 'nowhere'"), net::ValidationError);
}

TEST_CASE("non-positive cell length is a tiling error") {
  CHECK_THROWS_AS(net::build_network(R"({
    "links": [{"id": "a", "length_m": 100.0, "lanes": 1, "from": "u", "to": "v",
               "cell_length_m": 0.0}]
  })"),
                  net::ValidationError);
}

TEST_CASE("standard phase enumeration yields the 8 classic phases") {
  const net::Network network = standard_four_leg();
  REQUIRE(network.intersections.size() == 1);
  const auto& phases = network.intersections[0].phases;
  CHECK(phases.size() == 8);

  std::set<std::set<std::string>> got;
  for (const auto& phase : phases) {
    std::set<std::string> ids;
    for (net::Index m : phase.movements) ids.insert(network.movements[m].id);
    got.insert(ids);
  }
  const std::set<std::set<std::string>> expected = {
      {"sb_t", "nb_t"}, {"wb_t", "eb_t"}, {"sb_l", "nb_l"}, {"wb_l", "eb_l"},
      {"sb_t", "sb_l"}, {"nb_t", "nb_l"}, {"wb_t", "wb_l"}, {"eb_t", "eb_l"}};
  CHECK(got == expected);
}

TEST_CASE("every enumerated phase is internally non-conflicting") {
  const net::Network network = standard_four_leg();
  for (const auto& inter : network.intersections) {
    for (const auto& phase : inter.phases) {
      for (std::size_t i = 0; i < phase.movements.size(); ++i) {
        for (std::size_t j = i + 1; j < phase.movements.size(); ++j) {
          CHECK_FALSE(network.conflicts(phase.movements[i], phase.movements[j]));
        }
      }
    }
  }
}

TEST_CASE("T-intersection requires an explicit phase list") {
  const net::Network network = net::build_network(R"({
    "links": [
      {"id": "a_in", "length_m": 100.0, "lanes": 1, "from": "ba", "to": "t"},
      {"id": "b_in", "length_m": 100.0, "lanes": 1, "from": "bb", "to": "t"},
      {"id": "c_in", "length_m": 100.0, "lanes": 2, "from": "bc", "to": "t"},
      {"id": "a_out", "length_m": 100.0, "lanes": 1, "from": "t", "to": "ba"},
      {"id": "b_out", "length_m": 100.0, "lanes": 1, "from": "t", "to": "bb"},
      {"id": "c_out", "length_m": 100.0, "lanes": 1, "from": "t", "to": "bc"}
    ],
    "movements": [
      {"id": "ab", "from": "a_in", "to": "b_out", "turn": "through"},
      {"id": "ba", "from": "b_in", "to": "a_out", "turn": "through"},
      {"id": "ca", "from": "c_in", "to": "a_out", "turn": "left"},
      {"id": "cb", "from": "c_in", "to": "b_out", "turn": "right"}
    ],
    "phases": [
      {"intersection": "t", "id": "p1", "movements": ["ab", "ba"]},
      {"intersection": "t", "id": "p2", "movements": ["ca", "ab"]}
    ],
    "intersections": [{"id": "t"}]
  })");
  CHECK_THROWS_WITH_AS(net::enumerate_standard_phases(network, 0),
                       doctest::Contains("explicit phase list required"), net::ValidationError);
}

TEST_CASE("four-leg with left turns prohibited enumerates the 2 through phases") {
  nlohmann::json doc = app::isolated_network_json();
  nlohmann::json kept = nlohmann::json::array();
  for (auto mv : doc["movements"]) {
    if (mv["turn"] == "through") {
      mv["lane_count"] = 3;  // throughs take the whole approach without lefts
      kept.push_back(mv);
    }
  }
  doc["movements"] = kept;
  nlohmann::json conflicts = nlohmann::json::array();
  for (const auto& pair : doc["conflicts"]) {
    const std::string a = pair[0].get<std::string>();
    const std::string b = pair[1].get<std::string>();
    if (a.ends_with("_t") && b.ends_with("_t")) conflicts.push_back(pair);
  }
  doc["conflicts"] = conflicts;
  const net::Network network = net::build_network(doc.dump());
  const auto& phases = network.intersections[0].phases;
  CHECK(phases.size() == 2);
  for (const auto& phase : phases) CHECK(phase.movements.size() == 2);
}

TEST_CASE("lanes serving a movement match its declared lane count") {
  const net::Network network = standard_four_leg();
  for (std::size_t m = 0; m < network.movements.size(); ++m) {
    const auto& mv = network.movements[m];
    const auto serving = network.lanes_serving(mv.from_link, static_cast<net::Index>(m));
    CHECK(static_cast<int>(serving.size()) == mv.lane_count);
  }
}

TEST_CASE("grid fixture network builds and every intersection is four-leg with 8 phases") {
  const net::Network network = net::build_network(app::grid_network_json().dump());
  CHECK(network.intersections.size() == 9);
  CHECK(network.links.size() == 48);
  for (const auto& inter : network.intersections) {
    CHECK(inter.incoming.size() == 4);
    CHECK(inter.outgoing.size() == 4);
    CHECK(inter.phases.size() == 8);
  }
}
