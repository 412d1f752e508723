#include "bpeq/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bpeq::ctl {

double QueueSnapshot::at(const net::Network& network, net::Index link) const {
  auto it = queues.find(link);
  if (it == queues.end()) {
    throw std::runtime_error("queue snapshot is missing link '" +
                             network.links[static_cast<std::size_t>(link)].id + "'");
  }
  return it->second;
}

void ControlSlot::validate() const {
  if (slot_s <= 0.0) throw std::invalid_argument("control slot duration must be > 0");
  if (yellow_s < 0.0 || all_red_s < 0.0) {
    throw std::invalid_argument("lost times must be >= 0");
  }
  if (lost_s() >= slot_s) {
    throw std::invalid_argument("lost time must be shorter than the control slot");
  }
}

double movement_service_value(const net::Network& network, net::Index movement,
                              const SaturationParams& sat, double slot_s) {
  const net::Movement& mv = network.movements[static_cast<std::size_t>(movement)];
  return sat.sat_flow_vphpl * static_cast<double>(mv.lane_count) * mv.turn_factor * slot_s /
         3600.0;
}

double movement_service(const net::Network& network, net::Index movement,
                        const net::Phase& phase, const SaturationParams& sat, double slot_s) {
  if (std::find(phase.movements.begin(), phase.movements.end(), movement) ==
      phase.movements.end()) {
    return 0.0;
  }
  return movement_service_value(network, movement, sat, slot_s);
}

double movement_weight(const net::Network& network, net::Index movement,
                       const QueueSnapshot& queues) {
  const net::Movement& mv = network.movements[static_cast<std::size_t>(movement)];
  double upstream = 0.0;
  bool lane_detail = !queues.lane_queues.empty();
  if (lane_detail) {
    for (net::Index lane : network.lanes_serving(mv.from_link, movement)) {
      auto it = queues.lane_queues.find(lane);
      if (it == queues.lane_queues.end()) {
        lane_detail = false;
        break;
      }
      upstream += it->second;
    }
  }
  if (!lane_detail) upstream = queues.at(network, mv.from_link);
  const net::Link& to = network.links[static_cast<std::size_t>(mv.to_link)];
  const double downstream = to.is_exit ? 0.0 : queues.at(network, mv.to_link);
  return upstream - downstream;
}

double phase_pressure(const net::Network& network, const net::Phase& phase,
                      const QueueSnapshot& queues, const SaturationParams& sat,
                      double slot_s) {
  double pressure = 0.0;
  for (net::Index m : phase.movements) {
    pressure += movement_weight(network, m, queues) *
                movement_service_value(network, m, sat, slot_s);
  }
  return pressure;
}

net::Index select_phase(const net::Network& network, net::Index intersection,
                        const QueueSnapshot& queues, const SaturationParams& sat,
                        double slot_s, net::Index current_phase) {
  const net::Intersection& inter = network.intersections[static_cast<std::size_t>(intersection)];
  if (inter.phases.empty()) {
    throw std::runtime_error("intersection '" + inter.id + "' has an empty phase set");
  }
  double best = -std::numeric_limits<double>::infinity();
  net::Index best_phase = 0;
  bool current_is_max = false;
  for (std::size_t p = 0; p < inter.phases.size(); ++p) {
    const double pressure = phase_pressure(network, inter.phases[p], queues, sat, slot_s);
    if (pressure > best) {
      best = pressure;
      best_phase = static_cast<net::Index>(p);
      current_is_max = static_cast<net::Index>(p) == current_phase;
    } else if (pressure == best && static_cast<net::Index>(p) == current_phase) {
      current_is_max = true;
    }
  }
  return current_is_max ? current_phase : best_phase;
}

double FixedTimingPlan::cycle_s() const {
  double total = 0.0;
  for (const auto& pt : sequence) total += pt.green_s + pt.lost_s;
  return total;
}

void FixedTimingPlan::validate() const {
  if (sequence.empty()) throw std::invalid_argument("fixed timing plan has no phases");
  for (const auto& pt : sequence) {
    if (pt.green_s <= 0.0) throw std::invalid_argument("fixed timing greens must be > 0");
    if (pt.lost_s < 0.0) throw std::invalid_argument("fixed timing lost times must be >= 0");
  }
}

net::Index fixed_timing_step(const FixedTimingPlan& plan, double t) {
  const double cycle = plan.cycle_s();
  double s = std::fmod(t + plan.offset_s, cycle);
  if (s < 0.0) s += cycle;
  for (const auto& pt : plan.sequence) {
    const double span = pt.lost_s + pt.green_s;
    if (s < span) return pt.phase;
    s -= span;
  }
  return plan.sequence.back().phase;
}

net::Index BpController::step(double, const QueueSnapshot& queues) {
  current_phase_ = select_phase(network_, intersection_, queues, sat_, slot_.slot_s,
                                current_phase_);
  return current_phase_;
}

DemandFlows propagate_flows(const net::Network& network, const MeanDemand& demand) {
  DemandFlows flows;
  flows.link_flow_vph.assign(network.links.size(), 0.0);
  flows.movement_flow_vph.assign(network.movements.size(), 0.0);
  // Turning ratios leak every cycle through exits, so iteration converges
  // geometrically; 200 rounds is far past float precision for any sane net.
  for (int round = 0; round < 200; ++round) {
    std::vector<double> next(network.links.size(), 0.0);
    for (std::size_t li = 0; li < network.links.size(); ++li) {
      if (li < demand.entry_rate_vph.size()) next[li] += demand.entry_rate_vph[li];
    }
    for (std::size_t m = 0; m < network.movements.size(); ++m) {
      const net::Movement& mv = network.movements[m];
      const double ratio = m < demand.movement_ratio.size() ? demand.movement_ratio[m] : 0.0;
      next[static_cast<std::size_t>(mv.to_link)] +=
          flows.link_flow_vph[static_cast<std::size_t>(mv.from_link)] * ratio;
    }
    double delta = 0.0;
    for (std::size_t li = 0; li < next.size(); ++li) {
      delta = std::max(delta, std::abs(next[li] - flows.link_flow_vph[li]));
    }
    flows.link_flow_vph = std::move(next);
    if (delta < 1e-9) break;
  }
  for (std::size_t m = 0; m < network.movements.size(); ++m) {
    const net::Movement& mv = network.movements[m];
    const double ratio = m < demand.movement_ratio.size() ? demand.movement_ratio[m] : 0.0;
    flows.movement_flow_vph[m] =
        flows.link_flow_vph[static_cast<std::size_t>(mv.from_link)] * ratio;
  }
  return flows;
}

namespace {

// Greedy cover of all controlled movements by phases, in declaration order.
std::vector<net::Index> covering_phase_sequence(const net::Network& network,
                                                const net::Intersection& inter) {
  std::vector<net::Index> uncovered;
  for (std::size_t m = 0; m < network.movements.size(); ++m) {
    if (network.movements[m].intersection ==
            network.intersection_index(inter.id) &&
        network.movements[m].controlled()) {
      uncovered.push_back(static_cast<net::Index>(m));
    }
  }
  std::vector<net::Index> sequence;
  std::vector<bool> used(inter.phases.size(), false);
  while (!uncovered.empty()) {
    std::size_t best_phase = inter.phases.size();
    std::size_t best_gain = 0;
    for (std::size_t p = 0; p < inter.phases.size(); ++p) {
      if (used[p]) continue;
      std::size_t gain = 0;
      for (net::Index m : inter.phases[p].movements) {
        if (std::find(uncovered.begin(), uncovered.end(), m) != uncovered.end()) ++gain;
      }
      if (gain > best_gain) {
        best_gain = gain;
        best_phase = p;
      }
    }
    if (best_phase == inter.phases.size()) break;  // remaining movements uncoverable
    used[best_phase] = true;
    sequence.push_back(static_cast<net::Index>(best_phase));
    for (net::Index m : inter.phases[best_phase].movements) {
      uncovered.erase(std::remove(uncovered.begin(), uncovered.end(), m), uncovered.end());
    }
  }
  return sequence;
}

// Flow ratio of a movement including everything that shares its lanes
// (a right turn riding the through lane loads the same service).
double movement_flow_ratio(const net::Network& network, const DemandFlows& flows,
                           const SaturationParams& sat, net::Index movement) {
  const net::Movement& mv = network.movements[static_cast<std::size_t>(movement)];
  const auto serving = network.lanes_serving(mv.from_link, movement);
  double flow = flows.movement_flow_vph[static_cast<std::size_t>(movement)];
  for (std::size_t other = 0; other < network.movements.size(); ++other) {
    if (static_cast<net::Index>(other) == movement) continue;
    if (network.movements[other].from_link != mv.from_link) continue;
    const auto other_lanes = network.lanes_serving(mv.from_link, static_cast<net::Index>(other));
    bool shares = false;
    for (net::Index lane : other_lanes) {
      if (std::find(serving.begin(), serving.end(), lane) != serving.end()) shares = true;
    }
    if (shares) flow += flows.movement_flow_vph[other];
  }
  const double capacity =
      sat.sat_flow_vphpl * static_cast<double>(mv.lane_count) * mv.turn_factor;
  return flow / capacity;
}

} // namespace

double max_critical_ratio(const net::Network& network, const DemandFlows& flows,
                          const SaturationParams& sat) {
  double worst = 0.0;
  for (const auto& inter : network.intersections) {
    if (inter.phases.empty()) continue;
    const auto sequence = covering_phase_sequence(network, inter);
    double y_sum = 0.0;
    for (net::Index p : sequence) {
      double y = 0.0;
      for (net::Index m : inter.phases[static_cast<std::size_t>(p)].movements) {
        y = std::max(y, movement_flow_ratio(network, flows, sat, m));
      }
      y_sum += y;
    }
    worst = std::max(worst, y_sum);
  }
  return worst;
}

std::vector<FixedTimingPlan> optimize_fixed_timing(const net::Network& network,
                                                   const MeanDemand& demand,
                                                   const SaturationParams& sat,
                                                   const ControlSlot& slot,
                                                   double free_flow_speed) {
  const DemandFlows flows = propagate_flows(network, demand);
  std::vector<FixedTimingPlan> plans(network.intersections.size());

  constexpr double kMinCycle = 40.0;
  constexpr double kMaxCycle = 120.0;
  constexpr double kMinGreen = 5.0;

  for (std::size_t n = 0; n < network.intersections.size(); ++n) {
    const net::Intersection& inter = network.intersections[n];
    FixedTimingPlan& plan = plans[n];
    if (inter.phases.empty()) continue;
    const auto sequence = covering_phase_sequence(network, inter);
    std::vector<double> ratios;
    double y_sum = 0.0;
    for (net::Index p : sequence) {
      double y = 0.0;
      for (net::Index m : inter.phases[static_cast<std::size_t>(p)].movements) {
        y = std::max(y, movement_flow_ratio(network, flows, sat, m));
      }
      ratios.push_back(y);
      y_sum += y;
    }
    const double lost_total = slot.lost_s() * static_cast<double>(sequence.size());
    double cycle = kMaxCycle;
    if (y_sum < 0.95) {
      cycle = std::clamp((1.5 * lost_total + 5.0) / (1.0 - y_sum), kMinCycle, kMaxCycle);
    } else {
      plan.oversaturated = true;
    }
    const double green_total = std::max(cycle - lost_total, kMinGreen * sequence.size());
    for (std::size_t i = 0; i < sequence.size(); ++i) {
      PhaseTiming timing;
      timing.phase = sequence[i];
      timing.lost_s = slot.lost_s();
      const double share = y_sum > 0.0 ? ratios[i] / y_sum
                                       : 1.0 / static_cast<double>(sequence.size());
      timing.green_s = std::max(kMinGreen, green_total * share);
      plan.sequence.push_back(timing);
    }
  }

  // Progression offsets along the heaviest entry corridor: each downstream
  // intersection starts its cycle one free-flow travel time later.
  net::Index heaviest_entry = net::kNone;
  double heaviest_rate = 0.0;
  for (std::size_t li = 0; li < network.links.size(); ++li) {
    const double rate = li < demand.entry_rate_vph.size() ? demand.entry_rate_vph[li] : 0.0;
    if (network.links[li].is_entry && rate > heaviest_rate) {
      heaviest_rate = rate;
      heaviest_entry = static_cast<net::Index>(li);
    }
  }
  if (heaviest_entry != net::kNone) {
    net::Index link = heaviest_entry;
    double travel = 0.0;
    std::vector<bool> visited(network.intersections.size(), false);
    while (true) {
      const net::Link& l = network.links[static_cast<std::size_t>(link)];
      if (l.is_exit) break;
      travel += l.length / free_flow_speed;
      const net::Index at = l.downstream_intersection;
      if (visited[static_cast<std::size_t>(at)]) break;
      visited[static_cast<std::size_t>(at)] = true;
      FixedTimingPlan& plan = plans[static_cast<std::size_t>(at)];
      if (!plan.sequence.empty()) {
        const double cycle = plan.cycle_s();
        plan.offset_s = std::fmod(cycle - std::fmod(travel, cycle), cycle);
      }
      // Continue along the through movement, if any.
      net::Index next = net::kNone;
      for (const auto& mv : network.movements) {
        if (mv.from_link == link && mv.turn == net::TurnKind::kThrough) {
          next = mv.to_link;
          break;
        }
      }
      if (next == net::kNone) break;
      link = next;
    }
  }
  return plans;
}

} // namespace bpeq::ctl
