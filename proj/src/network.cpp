#include "bpeq/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace bpeq::net {

using nlohmann::json;

const char* turn_kind_name(TurnKind kind) {
  switch (kind) {
    case TurnKind::kThrough: return "through";
    case TurnKind::kLeft: return "left";
    case TurnKind::kRight: return "right";
  }
  return "?";
}

TurnKind turn_kind_from_name(const std::string& name) {
  if (name == "through") return TurnKind::kThrough;
  if (name == "left") return TurnKind::kLeft;
  if (name == "right") return TurnKind::kRight;
  throw ValidationError("unknown turn kind '" + name + "'");
}

Index Network::link_index(const std::string& id) const {
  auto it = link_ids_.find(id);
  return it == link_ids_.end() ? kNone : it->second;
}

Index Network::movement_index(const std::string& id) const {
  auto it = movement_ids_.find(id);
  return it == movement_ids_.end() ? kNone : it->second;
}

Index Network::intersection_index(const std::string& id) const {
  auto it = intersection_ids_.find(id);
  return it == intersection_ids_.end() ? kNone : it->second;
}

Index Network::movement_between(Index link, Index next_link) const {
  for (std::size_t m = 0; m < movements.size(); ++m) {
    if (movements[m].from_link == link && movements[m].to_link == next_link) {
      return static_cast<Index>(m);
    }
  }
  return kNone;
}

std::vector<Index> Network::lanes_serving(Index link, Index movement) const {
  std::vector<Index> out;
  for (Index lane : links[link].lanes) {
    const auto& allowed = lanes[lane].movements;
    if (std::find(allowed.begin(), allowed.end(), movement) != allowed.end()) {
      out.push_back(lane);
    }
  }
  return out;
}

double Network::total_lane_meters(Index link) const {
  return links[link].length * static_cast<double>(links[link].lanes.size());
}

namespace {

class ErrorList {
 public:
  void add(const std::string& message) { messages_.push_back(message); }
  bool empty() const { return messages_.empty(); }
  [[noreturn]] void raise() const {
    std::ostringstream out;
    out << "network validation failed:";
    for (const auto& m : messages_) out << "\n  - " << m;
    throw ValidationError(out.str());
  }

 private:
  std::vector<std::string> messages_;
};

std::vector<Cell> tile_cells(double link_length, double cell_length) {
  // Uniform cells; the last cell absorbs any remainder so the tiling is exact.
  std::vector<Cell> cells;
  int count = std::max(1, static_cast<int>(std::floor(link_length / cell_length)));
  cells.resize(static_cast<std::size_t>(count));
  double upstream = 0.0;
  for (int i = 0; i < count; ++i) {
    const double d = (i + 1 == count) ? link_length - upstream : cell_length;
    cells[static_cast<std::size_t>(i)].length = d;
    cells[static_cast<std::size_t>(i)].center = upstream + d / 2.0;
    upstream += d;
  }
  return cells;
}

double default_turn_factor(TurnKind turn) {
  switch (turn) {
    case TurnKind::kThrough: return 1.0;
    case TurnKind::kLeft: return 0.714;
    case TurnKind::kRight: return 0.85;
  }
  return 1.0;
}

} // namespace

class NetworkBuilder {
 public:
  Network build(const json& doc) {
    parse_links(doc);
    parse_movements(doc);
    assign_lanes(doc);
    parse_conflicts(doc);
    parse_intersections(doc);
    parse_phases(doc);
    validate();
    if (!errors_.empty()) errors_.raise();
    return std::move(net_);
  }

 private:
  Network net_;
  ErrorList errors_;
  std::vector<std::pair<std::string, std::string>> conflict_pairs_;

  void parse_links(const json& doc) {
    if (!doc.contains("links") || !doc["links"].is_array() || doc["links"].empty()) {
      throw ValidationError("network document needs a non-empty 'links' array");
    }
    for (const auto& item : doc["links"]) {
      Link link;
      link.id = item.at("id").get<std::string>();
      if (net_.link_ids_.count(link.id)) {
        errors_.add("duplicate link id '" + link.id + "'");
        continue;
      }
      link.length = item.at("length_m").get<double>();
      link.upstream_node = item.at("from").get<std::string>();
      link.downstream_node = item.at("to").get<std::string>();
      const int lane_count = item.value("lanes", 1);
      const double cell_length = item.value("cell_length_m", 10.0);
      if (link.length <= 0.0) {
        errors_.add("link '" + link.id + "': length must be > 0");
        continue;
      }
      if (lane_count < 1) {
        errors_.add("link '" + link.id + "': needs at least one lane");
        continue;
      }
      if (cell_length <= 0.0) {
        errors_.add("link '" + link.id + "': cell_length_m must be > 0 (cells would overlap or gap)");
        continue;
      }
      const Index link_idx = static_cast<Index>(net_.links.size());
      for (int i = 0; i < lane_count; ++i) {
        Lane lane;
        lane.id = link.id + "." + std::to_string(i);
        lane.link = link_idx;
        lane.index = i;
        lane.cells = tile_cells(link.length, cell_length);
        link.lanes.push_back(static_cast<Index>(net_.lanes.size()));
        net_.lanes.push_back(std::move(lane));
      }
      net_.link_ids_[link.id] = link_idx;
      net_.links.push_back(std::move(link));
    }
  }

  void parse_movements(const json& doc) {
    if (!doc.contains("movements")) return;
    for (const auto& item : doc["movements"]) {
      Movement mv;
      mv.id = item.at("id").get<std::string>();
      if (net_.movement_ids_.count(mv.id)) {
        errors_.add("duplicate movement id '" + mv.id + "'");
        continue;
      }
      const std::string from = item.at("from").get<std::string>();
      const std::string to = item.at("to").get<std::string>();
      mv.from_link = net_.link_index(from);
      mv.to_link = net_.link_index(to);
      if (mv.from_link == kNone) {
        errors_.add("movement '" + mv.id + "': unknown link '" + from + "'");
        continue;
      }
      if (mv.to_link == kNone) {
        errors_.add("movement '" + mv.id + "': unknown link '" + to + "'");
        continue;
      }
      mv.turn = turn_kind_from_name(item.value("turn", std::string("through")));
      mv.lane_count = item.value("lane_count", 1);
      mv.turn_factor = item.value("turn_factor", default_turn_factor(mv.turn));
      if (mv.lane_count < 1) {
        errors_.add("movement '" + mv.id + "': lane_count must be >= 1");
      }
      if (mv.turn_factor <= 0.0 || mv.turn_factor > 1.0) {
        errors_.add("movement '" + mv.id + "': turn_factor must be in (0, 1]");
      }
      net_.movement_ids_[mv.id] = static_cast<Index>(net_.movements.size());
      net_.movements.push_back(std::move(mv));
    }
  }

  // Lane-to-movement assignment, either from an explicit "lanes" section or
  // auto-allocated (lefts from the leftmost lane, rights from the rightmost,
  // throughs across the middle).
  void assign_lanes(const json& doc) {
    if (doc.contains("lanes")) {
      for (const auto& item : doc["lanes"]) {
        const std::string link_id = item.at("link").get<std::string>();
        const Index link = net_.link_index(link_id);
        if (link == kNone) {
          errors_.add("lane entry references unknown link '" + link_id + "'");
          continue;
        }
        const int index = item.at("index").get<int>();
        if (index < 0 || index >= static_cast<int>(net_.links[link].lanes.size())) {
          errors_.add("lane entry for link '" + link_id + "': index " + std::to_string(index) +
                      " out of range");
          continue;
        }
        Lane& lane = net_.lanes[net_.links[link].lanes[static_cast<std::size_t>(index)]];
        for (const auto& mv_id : item.at("movements")) {
          const Index mv = net_.movement_index(mv_id.get<std::string>());
          if (mv == kNone) {
            errors_.add("lane '" + lane.id + "': unknown movement '" +
                        mv_id.get<std::string>() + "'");
            continue;
          }
          lane.movements.push_back(mv);
        }
      }
    }
    for (std::size_t li = 0; li < net_.links.size(); ++li) {
      auto_assign_link(static_cast<Index>(li));
    }
  }

  void auto_assign_link(Index link_idx) {
    const Link& link = net_.links[static_cast<std::size_t>(link_idx)];
    bool any_assigned = false;
    for (Index lane : link.lanes) {
      if (!net_.lanes[lane].movements.empty()) any_assigned = true;
    }
    std::vector<Index> lefts, throughs, rights;
    for (std::size_t m = 0; m < net_.movements.size(); ++m) {
      if (net_.movements[m].from_link != link_idx) continue;
      switch (net_.movements[m].turn) {
        case TurnKind::kLeft: lefts.push_back(static_cast<Index>(m)); break;
        case TurnKind::kThrough: throughs.push_back(static_cast<Index>(m)); break;
        case TurnKind::kRight: rights.push_back(static_cast<Index>(m)); break;
      }
    }
    if (any_assigned || (lefts.empty() && throughs.empty() && rights.empty())) return;

    const int n = static_cast<int>(link.lanes.size());
    int left_cursor = 0;
    int right_cursor = n;
    auto lane_at = [&](int i) -> Lane& { return net_.lanes[link.lanes[static_cast<std::size_t>(i)]]; };
    for (Index m : lefts) {
      for (int i = 0; i < net_.movements[m].lane_count && left_cursor < n; ++i) {
        lane_at(left_cursor++).movements.push_back(m);
      }
    }
    for (Index m : rights) {
      for (int i = 0; i < net_.movements[m].lane_count && right_cursor > left_cursor; ++i) {
        lane_at(--right_cursor).movements.push_back(m);
      }
    }
    for (Index m : throughs) {
      const int span = right_cursor - left_cursor;
      if (span != net_.movements[m].lane_count) {
        errors_.add("movement '" + net_.movements[m].id + "': auto lane assignment needs " +
                    std::to_string(net_.movements[m].lane_count) + " middle lanes but link '" +
                    link.id + "' has " + std::to_string(span) +
                    "; list lanes explicitly");
        continue;
      }
      for (int i = left_cursor; i < right_cursor; ++i) {
        lane_at(i).movements.push_back(m);
      }
    }
  }

  void parse_conflicts(const json& doc) {
    if (!doc.contains("conflicts")) return;
    for (const auto& pair : doc["conflicts"]) {
      conflict_pairs_.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
    }
  }

  void parse_intersections(const json& doc) {
    if (doc.contains("intersections")) {
      for (const auto& item : doc["intersections"]) {
        Intersection inter;
        inter.id = item.at("id").get<std::string>();
        if (net_.intersection_ids_.count(inter.id)) {
          errors_.add("duplicate intersection id '" + inter.id + "'");
          continue;
        }
        net_.intersection_ids_[inter.id] = static_cast<Index>(net_.intersections.size());
        net_.intersections.push_back(std::move(inter));
      }
    }
    // Wire links to intersections by node name.
    for (std::size_t li = 0; li < net_.links.size(); ++li) {
      Link& link = net_.links[li];
      link.upstream_intersection = net_.intersection_index(link.upstream_node);
      link.downstream_intersection = net_.intersection_index(link.downstream_node);
      link.is_entry = link.upstream_intersection == kNone;
      link.is_exit = link.downstream_intersection == kNone;
      if (link.upstream_intersection != kNone) {
        net_.intersections[static_cast<std::size_t>(link.upstream_intersection)].outgoing.push_back(
            static_cast<Index>(li));
      }
      if (link.downstream_intersection != kNone) {
        net_.intersections[static_cast<std::size_t>(link.downstream_intersection)].incoming.push_back(
            static_cast<Index>(li));
      }
    }
    // Movements belong to the node joining their links.
    for (auto& mv : net_.movements) {
      const Index at = net_.links[static_cast<std::size_t>(mv.from_link)].downstream_intersection;
      const Index to_up = net_.links[static_cast<std::size_t>(mv.to_link)].upstream_intersection;
      if (at == kNone || at != to_up) {
        errors_.add("movement '" + mv.id + "': links '" +
                    net_.links[static_cast<std::size_t>(mv.from_link)].id + "' -> '" +
                    net_.links[static_cast<std::size_t>(mv.to_link)].id +
                    "' do not meet at one intersection");
        continue;
      }
      mv.intersection = at;
    }
    build_conflict_matrix();
  }

  void build_conflict_matrix() {
    const std::size_t n = net_.movements.size();
    net_.conflict_matrix_.assign(n * n, 0);
    for (const auto& [a_id, b_id] : conflict_pairs_) {
      const Index a = net_.movement_index(a_id);
      const Index b = net_.movement_index(b_id);
      if (a == kNone || b == kNone) {
        errors_.add("conflict pair ['" + a_id + "', '" + b_id + "'] references an unknown movement");
        continue;
      }
      net_.conflict_matrix_[static_cast<std::size_t>(a) * n + static_cast<std::size_t>(b)] = 1;
      net_.conflict_matrix_[static_cast<std::size_t>(b) * n + static_cast<std::size_t>(a)] = 1;
    }
  }

  void parse_phases(const json& doc) {
    if (doc.contains("phases")) {
      for (const auto& item : doc["phases"]) {
        const std::string inter_id = item.at("intersection").get<std::string>();
        const Index inter = net_.intersection_index(inter_id);
        if (inter == kNone) {
          errors_.add("phase references unknown intersection '" + inter_id + "'");
          continue;
        }
        Phase phase;
        phase.id = item.at("id").get<std::string>();
        for (const auto& mv_id : item.at("movements")) {
          const Index mv = net_.movement_index(mv_id.get<std::string>());
          if (mv == kNone) {
            errors_.add("phase '" + phase.id + "': unknown movement '" +
                        mv_id.get<std::string>() + "'");
            continue;
          }
          phase.movements.push_back(mv);
        }
        net_.intersections[static_cast<std::size_t>(inter)].phases.push_back(std::move(phase));
      }
    }
    if (doc.contains("intersections")) {
      for (const auto& item : doc["intersections"]) {
        if (!item.value("standard_phases", false)) continue;
        const Index inter = net_.intersection_index(item.at("id").get<std::string>());
        if (inter == kNone) continue;
        auto& slot = net_.intersections[static_cast<std::size_t>(inter)];
        if (!slot.phases.empty()) {
          errors_.add("intersection '" + slot.id +
                      "': both explicit phases and standard_phases requested");
          continue;
        }
        try {
          slot.phases = enumerate_standard_phases(net_, inter);
        } catch (const ValidationError& err) {
          errors_.add(err.what());
        }
      }
    }
  }

  void validate() {
    for (const auto& lane : net_.lanes) {
      double total = 0.0;
      for (const auto& cell : lane.cells) {
        if (cell.length <= 0.0) errors_.add("lane '" + lane.id + "': non-positive cell length");
        total += cell.length;
      }
      const double link_length = net_.links[static_cast<std::size_t>(lane.link)].length;
      if (std::abs(total - link_length) > 1e-9) {
        errors_.add("lane '" + lane.id + "': cells tile " + std::to_string(total) +
                    " m but link is " + std::to_string(link_length) + " m");
      }
    }
    for (const auto& inter : net_.intersections) {
      for (const auto& phase : inter.phases) {
        if (phase.movements.size() < 2) {
          errors_.add("phase '" + phase.id + "' at '" + inter.id + "': needs >= 2 movements");
        }
        for (Index m : phase.movements) {
          const Movement& mv = net_.movements[static_cast<std::size_t>(m)];
          if (mv.intersection != net_.intersection_index(inter.id)) {
            errors_.add("phase '" + phase.id + "': movement '" + mv.id +
                        "' belongs to a different intersection");
          }
          if (!mv.controlled()) {
            errors_.add("phase '" + phase.id + "': right-turn movement '" + mv.id +
                        "' is not signal-controlled and cannot be in a phase");
          }
        }
        for (std::size_t i = 0; i < phase.movements.size(); ++i) {
          for (std::size_t j = i + 1; j < phase.movements.size(); ++j) {
            if (net_.conflicts(phase.movements[i], phase.movements[j])) {
              errors_.add("phase '" + phase.id + "': movements '" +
                          net_.movements[static_cast<std::size_t>(phase.movements[i])].id +
                          "' and '" +
                          net_.movements[static_cast<std::size_t>(phase.movements[j])].id +
                          "' conflict");
            }
          }
        }
      }
      // Every controlled movement must be served by some phase.
      for (std::size_t m = 0; m < net_.movements.size(); ++m) {
        const Movement& mv = net_.movements[m];
        if (mv.intersection != net_.intersection_index(inter.id) || !mv.controlled()) continue;
        bool covered = false;
        for (const auto& phase : inter.phases) {
          if (std::find(phase.movements.begin(), phase.movements.end(), static_cast<Index>(m)) !=
              phase.movements.end()) {
            covered = true;
            break;
          }
        }
        if (!covered) {
          errors_.add("intersection '" + inter.id + "': movement '" + mv.id +
                      "' appears in no phase");
        }
      }
    }
    // A movement's lane assignment must match its declared lane count.
    for (std::size_t m = 0; m < net_.movements.size(); ++m) {
      const Movement& mv = net_.movements[m];
      const auto serving = net_.lanes_serving(mv.from_link, static_cast<Index>(m));
      if (static_cast<int>(serving.size()) != mv.lane_count) {
        errors_.add("movement '" + mv.id + "': lane_count " + std::to_string(mv.lane_count) +
                    " but " + std::to_string(serving.size()) + " lanes serve it");
      }
    }
  }
};

Network build_network(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& err) {
    throw ValidationError(std::string("network document parse error: ") + err.what());
  }
  NetworkBuilder builder;
  return builder.build(doc);
}

Network load_network_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open network file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return build_network(buffer.str());
}

std::vector<Phase> enumerate_standard_phases(const Network& network, Index intersection) {
  const Intersection& inter = network.intersections[static_cast<std::size_t>(intersection)];
  if (inter.incoming.size() != 4) {
    throw ValidationError("intersection '" + inter.id +
                          "': explicit phase list required (standard phases need a four-leg "
                          "intersection, got " +
                          std::to_string(inter.incoming.size()) + " approaches)");
  }
  std::vector<Index> controlled;
  for (std::size_t m = 0; m < network.movements.size(); ++m) {
    const Movement& mv = network.movements[m];
    if (mv.intersection == intersection && mv.controlled()) {
      controlled.push_back(static_cast<Index>(m));
    }
  }
  for (Index link : inter.incoming) {
    bool has_through = false;
    for (Index m : controlled) {
      if (network.movements[static_cast<std::size_t>(m)].from_link == link &&
          network.movements[static_cast<std::size_t>(m)].turn == TurnKind::kThrough) {
        has_through = true;
      }
    }
    if (!has_through) {
      throw ValidationError("intersection '" + inter.id + "': explicit phase list required (link '" +
                            network.links[static_cast<std::size_t>(link)].id +
                            "' has no through movement)");
    }
  }
  std::vector<Phase> phases;
  for (std::size_t i = 0; i < controlled.size(); ++i) {
    for (std::size_t j = i + 1; j < controlled.size(); ++j) {
      if (network.conflicts(controlled[i], controlled[j])) continue;
      Phase phase;
      phase.id = network.movements[static_cast<std::size_t>(controlled[i])].id + "+" +
                 network.movements[static_cast<std::size_t>(controlled[j])].id;
      phase.movements = {controlled[i], controlled[j]};
      phases.push_back(std::move(phase));
    }
  }
  return phases;
}

} // namespace bpeq::net
