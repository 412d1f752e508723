#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace bpeq::net {

using Index = std::int32_t;
constexpr Index kNone = -1;

enum class TurnKind { kThrough, kLeft, kRight };

const char* turn_kind_name(TurnKind kind);
TurnKind turn_kind_from_name(const std::string& name);

struct Cell {
  double length = 0.0;  // d_i, meters
  double center = 0.0;  // x_i, meters from the upstream end of the link
};

struct Lane {
  std::string id;  // "<link>.<index>"
  Index link = kNone;
  int index = 0;  // 0 = leftmost lane
  std::vector<Cell> cells;
  std::vector<Index> movements;  // movements this lane may serve
};

struct Link {
  std::string id;
  double length = 0.0;
  std::vector<Index> lanes;
  std::string upstream_node;
  std::string downstream_node;
  Index upstream_intersection = kNone;
  Index downstream_intersection = kNone;
  bool is_entry = false;
  bool is_exit = false;
};

struct Movement {
  std::string id;
  Index from_link = kNone;
  Index to_link = kNone;
  TurnKind turn = TurnKind::kThrough;
  int lane_count = 1;         // x_(La,Lb)
  double turn_factor = 1.0;   // f_t
  Index intersection = kNone;
  bool controlled() const { return turn != TurnKind::kRight; }
};

struct Phase {
  std::string id;
  std::vector<Index> movements;
};

struct Intersection {
  std::string id;
  std::vector<Index> incoming;  // links
  std::vector<Index> outgoing;  // links
  std::vector<Phase> phases;    // the phase set P_n; indices into Movement table
};

// Immutable once built; simulation and control only read it.
class Network {
 public:
  std::vector<Link> links;
  std::vector<Lane> lanes;
  std::vector<Movement> movements;
  std::vector<Intersection> intersections;

  Index link_index(const std::string& id) const;
  Index movement_index(const std::string& id) const;
  Index intersection_index(const std::string& id) const;

  bool conflicts(Index movement_a, Index movement_b) const {
    return conflict_matrix_[static_cast<std::size_t>(movement_a) * movements.size() +
                            static_cast<std::size_t>(movement_b)];
  }

  // Movements leaving `link` toward `next_link`; kNone if no such movement.
  Index movement_between(Index link, Index next_link) const;

  // Lanes of `link` allowed to serve `movement`.
  std::vector<Index> lanes_serving(Index link, Index movement) const;

  double total_lane_meters(Index link) const;

  friend Network build_network(const std::string& json_text);

 private:
  std::unordered_map<std::string, Index> link_ids_;
  std::unordered_map<std::string, Index> movement_ids_;
  std::unordered_map<std::string, Index> intersection_ids_;
  std::vector<char> conflict_matrix_;  // movements.size()^2, symmetric

  friend class NetworkBuilder;
};

// Thrown on document or invariant violations; message lists every offense
// with the offending id.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Parses and validates a network document (JSON; see docs/formats.md).
Network build_network(const std::string& json_text);
Network load_network_file(const std::string& path);

// Enumerates the two-movement phase set of a four-leg intersection: every
// unordered pair of signal-controlled movements that is non-conflicting under
// the conflict matrix. With the standard 8 movements (4 through, 4 left) this
// yields the 8 classic phases: the two opposing-through pairs, the two
// opposing-left pairs, and the four same-approach through+left pairs.
// Requires 4 incoming links, each with a through movement; anything else
// (e.g. a T-intersection) is unsupported and the caller must list phases
// explicitly.
std::vector<Phase> enumerate_standard_phases(const Network& network, Index intersection);

} // namespace bpeq::net
