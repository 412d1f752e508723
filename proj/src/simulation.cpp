#include "bpeq/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace bpeq::sim {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = 1e-9;

std::string format_line(const char* fmt, ...) {
  char buffer[256];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buffer, sizeof(buffer), fmt, args);
  va_end(args);
  return buffer;
}
} // namespace

void VehicleState::reset_history(double t, double x) {
  hist_len = 1;
  hist_head = 0;
  hist_time[0] = t;
  hist_pos[0] = x;
}

void VehicleState::push_history(double t, double x) {
  const int capacity = static_cast<int>(hist_time.size());
  const int slot = (hist_head + hist_len) % capacity;
  hist_time[slot] = t;
  hist_pos[slot] = x;
  if (hist_len < capacity) {
    ++hist_len;
  } else {
    hist_head = (hist_head + 1) % capacity;
  }
}

double VehicleState::position_at(double t) const {
  const int capacity = static_cast<int>(hist_time.size());
  if (hist_len == 0) return position;
  const int newest = (hist_head + hist_len - 1) % capacity;
  if (t >= hist_time[newest]) return hist_pos[newest];
  if (t <= hist_time[hist_head]) return hist_pos[hist_head];
  for (int k = hist_len - 1; k > 0; --k) {
    const int hi = (hist_head + k) % capacity;
    const int lo = (hist_head + k - 1) % capacity;
    if (t >= hist_time[lo]) {
      const double span = hist_time[hi] - hist_time[lo];
      if (span <= 0.0) return hist_pos[lo];
      const double f = (t - hist_time[lo]) / span;
      return hist_pos[lo] + f * (hist_pos[hi] - hist_pos[lo]);
    }
  }
  return hist_pos[hist_head];
}

double DemandProfile::rate_at(net::Index link, double t) const {
  for (const auto& entry : entries) {
    if (entry.link != link) continue;
    double rate = 0.0;
    for (const auto& seg : entry.segments) {
      if (seg.t_start <= t + kEps) rate = seg.rate_vph;
    }
    return rate;
  }
  return 0.0;
}

const TurningTable* DemandProfile::turning_for(net::Index from_link) const {
  for (const auto& table : turnings) {
    if (table.from_link == from_link) return &table;
  }
  return nullptr;
}

ctl::MeanDemand DemandProfile::mean(const net::Network& network, double duration) const {
  ctl::MeanDemand demand;
  demand.entry_rate_vph.assign(network.links.size(), 0.0);
  demand.movement_ratio.assign(network.movements.size(), 0.0);
  for (const auto& entry : entries) {
    double integral = 0.0;
    for (std::size_t s = 0; s < entry.segments.size(); ++s) {
      const double from = std::clamp(entry.segments[s].t_start, 0.0, duration);
      const double to = s + 1 < entry.segments.size()
                            ? std::clamp(entry.segments[s + 1].t_start, 0.0, duration)
                            : duration;
      integral += entry.segments[s].rate_vph * std::max(0.0, to - from);
    }
    demand.entry_rate_vph[static_cast<std::size_t>(entry.link)] =
        duration > 0.0 ? integral / duration : 0.0;
  }
  for (std::size_t m = 0; m < network.movements.size(); ++m) {
    const net::Movement& mv = network.movements[m];
    if (const TurningTable* table = turning_for(mv.from_link)) {
      for (const auto& [to, p] : table->branches) {
        if (to == mv.to_link) demand.movement_ratio[m] = p;
      }
    } else {
      // Single outgoing movement defaults to probability 1.
      int count = 0;
      for (const auto& other : network.movements) {
        if (other.from_link == mv.from_link) ++count;
      }
      if (count == 1) demand.movement_ratio[m] = 1.0;
    }
  }
  return demand;
}

void DemandProfile::validate(const net::Network& network) const {
  for (const auto& entry : entries) {
    if (entry.link == net::kNone ||
        !network.links[static_cast<std::size_t>(entry.link)].is_entry) {
      throw std::invalid_argument("demand entry must reference an entry link");
    }
    double last_start = -kInf;
    for (const auto& seg : entry.segments) {
      if (seg.rate_vph < 0.0) throw std::invalid_argument("arrival rates must be >= 0");
      if (seg.t_start < last_start) {
        throw std::invalid_argument("rate segments must be sorted by start time");
      }
      last_start = seg.t_start;
    }
  }
  for (const auto& table : turnings) {
    double total = 0.0;
    for (const auto& [to, p] : table.branches) {
      if (p < 0.0) throw std::invalid_argument("turning ratios must be >= 0");
      if (network.movement_between(table.from_link, to) == net::kNone) {
        throw std::invalid_argument(
            "turning table lists '" + network.links[static_cast<std::size_t>(to)].id +
            "' but no movement goes there from '" +
            network.links[static_cast<std::size_t>(table.from_link)].id + "'");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw std::invalid_argument("turning ratios from '" +
                                  network.links[static_cast<std::size_t>(table.from_link)].id +
                                  "' sum to " + std::to_string(total) + ", expected 1");
    }
  }
  // Every non-exit link needs a resolvable branch choice.
  for (std::size_t li = 0; li < network.links.size(); ++li) {
    if (network.links[li].is_exit) continue;
    int out = 0;
    for (const auto& mv : network.movements) {
      if (mv.from_link == static_cast<net::Index>(li)) ++out;
    }
    if (out == 0) {
      throw std::invalid_argument("link '" + network.links[li].id +
                                  "' is not an exit but has no outgoing movements");
    }
    if (out > 1 && turning_for(static_cast<net::Index>(li)) == nullptr) {
      throw std::invalid_argument("link '" + network.links[li].id +
                                  "' has several outgoing movements but no turning table");
    }
  }
}

const char* controller_kind_name(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::kBpPerfect: return "bp_perfect";
    case ControllerKind::kBpEq: return "bp_eq";
    case ControllerKind::kFixed: return "fixed";
  }
  return "?";
}

ControllerKind controller_kind_from_name(const std::string& name) {
  if (name == "bp_perfect") return ControllerKind::kBpPerfect;
  if (name == "bp_eq") return ControllerKind::kBpEq;
  if (name == "fixed") return ControllerKind::kFixed;
  throw std::invalid_argument("unknown controller kind '" + name + "'");
}

void SimParams::validate() const {
  estimator.validate();
  if (step_s <= 0.0) throw std::invalid_argument("step_s must be > 0");
  if (penetration < 0.0 || penetration > 1.0) {
    throw std::invalid_argument("penetration must be in [0, 1]");
  }
  const double ticks = report_interval_s / step_s;
  if (std::abs(ticks - std::round(ticks)) > 1e-9) {
    throw std::invalid_argument("step size must divide the probe reporting interval");
  }
  if (step_s > reaction_lag() + kEps) {
    throw std::invalid_argument("step size must not exceed the car-following reaction lag (" +
                                std::to_string(reaction_lag()) + " s)");
  }
  const double count_ticks = count_sample_s / step_s;
  if (std::abs(count_ticks - std::round(count_ticks)) > 1e-9) {
    throw std::invalid_argument("step size must divide count_sample_s");
  }
}

struct Simulation::Impl {
  const net::Network& net;
  RunConfig config;
  SimParams params;
  Rng rng;
  RunResult result;

  double dt;
  double vf;
  double delta;    // jam spacing, 1/rho_jam
  double tau_lag;  // reaction lag, 1/(w*rho_jam)

  std::vector<VehicleState> vehicles;
  std::vector<std::vector<int>> lane_order;  // per lane, front (stop line) first
  std::vector<std::deque<int>> entry_buffers;
  std::vector<long> last_moved_tick;

  struct MoveState {
    double green_from = kInf;
    double green_until = kInf;  // clearing movements keep flowing through the yellow
    bool was_green = false;
    double tokens = 0.0;
    double rate_per_s = 0.0;
    double service_value = 0.0;  // vehicles per slot while active
    int ceil_cap = 0;
    long slot_idx = -1;
    int slot_count = 0;
  };
  std::vector<MoveState> move_states;

  struct InterState {
    ControllerKind kind = ControllerKind::kBpPerfect;
    ctl::ControlSlot slot;
    std::unique_ptr<ctl::Controller> controller;
    long period_ticks = 0;  // 0 = every tick
    net::Index active_phase = net::kNone;
    std::optional<ctl::QueueSnapshot> last_est_snapshot;
  };
  std::vector<InterState> inter_states;

  using CachedQueues = std::pair<double, std::pair<double, std::vector<double>>>;
  struct EstimationContext {
    est::ProbeHistory history;
    est::CellField scratch;
    std::unordered_map<net::Index, CachedQueues> queue_cache;  // link -> (t, (Q, per-lane))
    explicit EstimationContext(std::size_t lanes) : history(lanes) {}
  };
  std::unique_ptr<EstimationContext> estimation;

  std::vector<long> link_capacity;  // spatial capacity in vehicles

  long tick = 0;
  long ticks_total = 0;
  long report_ticks = 0;
  long window_ticks = 0;
  long count_ticks = 0;

  // Current metrics window accumulators.
  double win_delay_sum = 0.0;
  long win_delay_count = 0;
  long win_exits = 0;
  double win_max_queue = 0.0;

  std::int64_t next_vehicle_id = 0;
  long buffered = 0;

  explicit Impl(const RunConfig& cfg)
      : net(*cfg.network), config(cfg), params(cfg.params), rng(cfg.seed) {
    params.validate();
    config.demand.validate(net);
    dt = params.step_s;
    vf = params.estimator.free_flow_speed;
    delta = params.jam_spacing();
    tau_lag = params.reaction_lag();

    if (config.duration_s < 0.0) throw std::invalid_argument("duration must be >= 0");
    ticks_total = static_cast<long>(std::llround(config.duration_s / dt));
    report_ticks = static_cast<long>(std::llround(params.report_interval_s / dt));
    count_ticks = static_cast<long>(std::llround(params.count_sample_s / dt));
    if (config.window_s > 0.0) {
      const double w = config.window_s / dt;
      if (std::abs(w - std::round(w)) > 1e-9) {
        throw std::invalid_argument("step size must divide the metrics window");
      }
      window_ticks = static_cast<long>(std::llround(w));
      const double windows = config.duration_s / config.window_s;
      if (std::abs(windows - std::round(windows)) > 1e-9) {
        throw std::invalid_argument("metrics window must divide the duration");
      }
    }

    if (config.controllers.size() != net.intersections.size()) {
      throw std::invalid_argument("need one controller assignment per intersection");
    }

    lane_order.resize(net.lanes.size());
    entry_buffers.resize(net.links.size());
    move_states.resize(net.movements.size());
    link_capacity.resize(net.links.size());
    for (std::size_t li = 0; li < net.links.size(); ++li) {
      link_capacity[li] = static_cast<long>(
          std::floor(params.estimator.jam_density * net.total_lane_meters(static_cast<net::Index>(li)) +
                     kEps));
    }

    bool any_bp_eq = false;
    inter_states.resize(net.intersections.size());
    for (std::size_t n = 0; n < net.intersections.size(); ++n) {
      const ControllerAssignment& assign = config.controllers[n];
      InterState& state = inter_states[n];
      state.kind = assign.kind;
      state.slot = assign.slot;
      state.slot.validate();
      if (net.intersections[n].phases.empty()) continue;
      switch (assign.kind) {
        case ControllerKind::kBpPerfect:
        case ControllerKind::kBpEq:
          state.controller = std::make_unique<ctl::BpController>(
              net, static_cast<net::Index>(n), params.saturation, assign.slot);
          any_bp_eq |= assign.kind == ControllerKind::kBpEq;
          break;
        case ControllerKind::kFixed: {
          if (!assign.plan) {
            throw std::invalid_argument("fixed controller at '" + net.intersections[n].id +
                                        "' needs a timing plan");
          }
          state.controller = std::make_unique<ctl::FixedTimingController>(*assign.plan);
          break;
        }
      }
      const double period = state.controller->decision_period();
      if (period > 0.0) {
        const double p = period / dt;
        if (std::abs(p - std::round(p)) > 1e-9) {
          throw std::invalid_argument("step size must divide the control slot");
        }
        state.period_ticks = static_cast<long>(std::llround(p));
      }
    }
    if (any_bp_eq || params.shadow_compare) {
      estimation = std::make_unique<EstimationContext>(net.lanes.size());
    }

    for (std::size_t m = 0; m < net.movements.size(); ++m) {
      MoveState& ms = move_states[m];
      const net::Index inter = net.movements[m].intersection;
      const double slot_s =
          inter == net::kNone ? 10.0 : inter_states[static_cast<std::size_t>(inter)].slot.slot_s;
      ms.service_value =
          ctl::movement_service_value(net, static_cast<net::Index>(m), params.saturation, slot_s);
      ms.rate_per_s = ms.service_value / slot_s;
      ms.ceil_cap = static_cast<int>(std::ceil(ms.service_value - 1e-9));
      if (!net.movements[m].controlled()) ms.green_from = 0.0;  // rights run free
    }
  }

  // ---- logging ----------------------------------------------------------
  void log_event(const std::string& line) {
    if (config.event_log) (*config.event_log) << line << '\n';
  }

  void violation(const std::string& what, double t) {
    ++result.invariant_violations;
    if (result.violation_samples.size() < 10) {
      result.violation_samples.push_back(format_line("t=%.3f %s", t, what.c_str()));
    }
  }

  // ---- vehicle bookkeeping ----------------------------------------------
  long on_links_count() const {
    long count = 0;
    for (const auto& lane : lane_order) count += static_cast<long>(lane.size());
    return count;
  }

  long link_count(net::Index link) const {
    long count = 0;
    for (net::Index lane : net.links[static_cast<std::size_t>(link)].lanes) {
      count += static_cast<long>(lane_order[static_cast<std::size_t>(lane)].size());
    }
    return count;
  }

  // Lane on `link` able to serve `movement` (kNone = no restriction) with the
  // most entry room; kNone if every candidate is blocked.
  net::Index pick_lane(net::Index link, net::Index movement) const {
    net::Index best = net::kNone;
    double best_room = -1.0;
    for (net::Index lane : net.links[static_cast<std::size_t>(link)].lanes) {
      if (movement != net::kNone) {
        const auto& allowed = net.lanes[static_cast<std::size_t>(lane)].movements;
        if (std::find(allowed.begin(), allowed.end(), movement) == allowed.end()) continue;
      }
      const auto& order = lane_order[static_cast<std::size_t>(lane)];
      const double room = order.empty()
                              ? net.links[static_cast<std::size_t>(link)].length
                              : vehicles[static_cast<std::size_t>(order.back())].position - delta;
      if (room >= -kEps && room > best_room) {
        best_room = room;
        best = lane;
      }
    }
    return best;
  }

  net::Index movement_after(const VehicleState& v) const {
    if (v.route_pos + 1 >= v.route.size()) return net::kNone;
    return net.movement_between(v.route[v.route_pos], v.route[v.route_pos + 1]);
  }

  // ---- demand ------------------------------------------------------------
  std::vector<net::Index> sample_route(net::Index entry) {
    std::vector<net::Index> route{entry};
    net::Index link = entry;
    while (!net.links[static_cast<std::size_t>(link)].is_exit) {
      net::Index next = net::kNone;
      if (const TurningTable* table = config.demand.turning_for(link)) {
        std::vector<double> weights;
        weights.reserve(table->branches.size());
        for (const auto& [to, p] : table->branches) weights.push_back(p);
        next = table->branches[rng.pick_weighted(weights)].first;
      } else {
        for (std::size_t m = 0; m < net.movements.size(); ++m) {
          if (net.movements[m].from_link == link) {
            next = net.movements[m].to_link;
            break;
          }
        }
      }
      if (next == net::kNone) {
        throw std::runtime_error("route sampling stranded on link '" +
                                 net.links[static_cast<std::size_t>(link)].id + "'");
      }
      route.push_back(next);
      link = next;
      if (route.size() > 256) {
        throw std::runtime_error("route exceeds 256 links; check turning ratios");
      }
    }
    return route;
  }

  void spawn_arrivals(double t0) {
    for (std::size_t li = 0; li < net.links.size(); ++li) {
      if (!net.links[li].is_entry) continue;
      const double rate = config.demand.rate_at(static_cast<net::Index>(li), t0);
      if (rate <= 0.0) continue;
      const int arrivals = rng.poisson(rate * dt / 3600.0);
      for (int a = 0; a < arrivals; ++a) {
        VehicleState v;
        v.id = next_vehicle_id++;
        v.route = sample_route(static_cast<net::Index>(li));
        v.spawn_time = t0;
        v.connected = rng.bernoulli(params.penetration);
        double ff = 0.0;
        for (net::Index link : v.route) {
          ff += net.links[static_cast<std::size_t>(link)].length / vf;
        }
        v.free_flow_trip_s = ff;
        v.speed = vf;
        vehicles.push_back(std::move(v));
        last_moved_tick.push_back(-1);
        entry_buffers[li].push_back(static_cast<int>(vehicles.size() - 1));
        ++buffered;
        ++result.spawned;
        log_event(format_line("t=%.3f spawn veh=%lld link=%s connected=%d", t0,
                              static_cast<long long>(vehicles.back().id), net.links[li].id.c_str(),
                              vehicles.back().connected ? 1 : 0));
      }
    }
  }

  void release_buffers(double t0) {
    // A blocked head (say a left-turner facing a full left lane) must not
    // starve vehicles behind it that fit into other lanes; scan a short
    // window of the buffer.
    constexpr std::size_t kReleaseScan = 8;
    for (std::size_t li = 0; li < net.links.size(); ++li) {
      auto& buffer = entry_buffers[li];
      bool released = true;
      while (released && !buffer.empty()) {
        released = false;
        if (link_count(static_cast<net::Index>(li)) >= link_capacity[li]) break;
        const std::size_t scan = std::min(buffer.size(), kReleaseScan);
        for (std::size_t k = 0; k < scan; ++k) {
          VehicleState& v = vehicles[static_cast<std::size_t>(buffer[k])];
          const net::Index movement = movement_after(v);
          const net::Index lane = pick_lane(static_cast<net::Index>(li), movement);
          if (lane == net::kNone) continue;
          v.lane = lane;
          v.position = 0.0;
          v.speed = vf;
          v.next_movement = movement;
          v.reset_history(t0, 0.0);
          lane_order[static_cast<std::size_t>(lane)].push_back(buffer[k]);
          buffer.erase(buffer.begin() + static_cast<std::ptrdiff_t>(k));
          --buffered;
          released = true;
          break;
        }
      }
    }
  }

  // ---- signals and service ----------------------------------------------
  void apply_phase(std::size_t n, net::Index phase, double t) {
    InterState& state = inter_states[n];
    const bool first = state.active_phase == net::kNone;
    const bool switched = !first && phase != state.active_phase;
    if (!first && !switched) return;
    state.active_phase = phase;
    // On a switch, movements leaving service keep discharging through the
    // yellow; the all-red after it is dead time; the new movements go green
    // once yellow + all-red have run.
    const double green_start = switched ? t + state.slot.lost_s() : t;
    const double clear_until = t + state.slot.yellow_s;
    const net::Intersection& inter = net.intersections[n];
    const auto& serve = inter.phases[static_cast<std::size_t>(phase)].movements;
    for (std::size_t m = 0; m < net.movements.size(); ++m) {
      if (net.movements[m].intersection != static_cast<net::Index>(n) ||
          !net.movements[m].controlled()) {
        continue;
      }
      MoveState& ms = move_states[m];
      const bool in_phase = std::find(serve.begin(), serve.end(), static_cast<net::Index>(m)) !=
                            serve.end();
      const bool was_serving = ms.green_from <= t && t < ms.green_until;
      if (in_phase) {
        if (!was_serving) ms.green_from = green_start;  // continuing movements keep flowing
        ms.green_until = kInf;
      } else if (was_serving) {
        ms.green_until = clear_until;
      } else {
        ms.green_from = kInf;
        ms.green_until = kInf;
      }
    }
    log_event(format_line("t=%.3f phase intersection=%s phase=%s switched=%d", t,
                          inter.id.c_str(),
                          inter.phases[static_cast<std::size_t>(phase)].id.c_str(),
                          switched ? 1 : 0));
  }

  ctl::QueueSnapshot perfect_snapshot(std::size_t n, double t) const {
    ctl::QueueSnapshot snap;
    snap.time = t;
    const net::Intersection& inter = net.intersections[n];
    for (net::Index link : inter.incoming) {
      snap.queues[link] = static_cast<double>(link_count(link));
      for (net::Index lane : net.links[static_cast<std::size_t>(link)].lanes) {
        snap.lane_queues[lane] =
            static_cast<double>(lane_order[static_cast<std::size_t>(lane)].size());
      }
    }
    for (net::Index link : inter.outgoing) snap.queues[link] = static_cast<double>(link_count(link));
    return snap;
  }

  // Estimated queues for one link at time t: link total plus per-lane values.
  const std::pair<double, std::vector<double>>& estimated_link_queues(net::Index link, double t) {
    auto& cache = estimation->queue_cache;
    auto it = cache.find(link);
    if (it == cache.end() || it->second.first != t) {
      est::estimate_link_field(net, link, estimation->history, t, params.estimator,
                               estimation->scratch);
      std::vector<double> lanes;
      double total = 0.0;
      for (net::Index lane : net.links[static_cast<std::size_t>(link)].lanes) {
        const double q = est::lane_queue(net, lane, estimation->scratch);
        lanes.push_back(q);
        total += q;
      }
      it = cache.insert_or_assign(link, CachedQueues{t, {total, std::move(lanes)}}).first;
    }
    return it->second.second;
  }

  ctl::QueueSnapshot estimated_snapshot(std::size_t n, double t) {
    InterState& state = inter_states[n];
    const double age = estimation->history.ever_ingested()
                           ? t - estimation->history.last_ingest_time()
                           : 0.0;
    if (age > state.slot.slot_s + kEps && state.last_est_snapshot) {
      ++result.stale_warnings;
      return *state.last_est_snapshot;
    }
    ctl::QueueSnapshot snap;
    snap.time = t;
    const net::Intersection& inter = net.intersections[n];
    for (net::Index link : inter.incoming) {
      const auto& [total, lanes] = estimated_link_queues(link, t);
      snap.queues[link] = total;
      const auto& lane_ids = net.links[static_cast<std::size_t>(link)].lanes;
      for (std::size_t i = 0; i < lane_ids.size(); ++i) snap.lane_queues[lane_ids[i]] = lanes[i];
    }
    for (net::Index link : inter.outgoing) {
      snap.queues[link] = estimated_link_queues(link, t).first;
    }
    state.last_est_snapshot = snap;
    return snap;
  }

  void step_controllers(double t, long boundary_tick) {
    for (std::size_t n = 0; n < inter_states.size(); ++n) {
      InterState& state = inter_states[n];
      if (!state.controller) continue;
      if (state.period_ticks > 0 && boundary_tick % state.period_ticks != 0) continue;
      net::Index choice = net::kNone;
      if (state.controller->wants_queues()) {
        const net::Index prev =
            static_cast<ctl::BpController*>(state.controller.get())->current_phase();
        ctl::QueueSnapshot snap = state.kind == ControllerKind::kBpEq
                                      ? estimated_snapshot(n, t)
                                      : perfect_snapshot(n, t);
        choice = state.controller->step(t, snap);
        if (params.shadow_compare) {
          // Convergence check on the link-level selection contract: evaluate
          // both queue sources' choices from the same state, link totals only.
          ctl::QueueSnapshot estimated = state.kind == ControllerKind::kBpEq
                                             ? snap
                                             : estimated_snapshot(n, t);
          ctl::QueueSnapshot truth = state.kind == ControllerKind::kBpEq
                                         ? perfect_snapshot(n, t)
                                         : snap;
          estimated.lane_queues.clear();
          truth.lane_queues.clear();
          const net::Index est_choice = ctl::select_phase(
              net, static_cast<net::Index>(n), estimated, params.saturation, state.slot.slot_s,
              prev);
          const net::Index true_choice = ctl::select_phase(
              net, static_cast<net::Index>(n), truth, params.saturation, state.slot.slot_s, prev);
          ++result.shadow_total;
          if (est_choice == true_choice) ++result.shadow_agree;
          if (std::getenv("BPEQ_TRACE_QUEUES") != nullptr && est_choice != true_choice) {
            std::fprintf(stderr, "t=%.0f inter=%s est=%d true=%d prev=%d\n", t,
                         net.intersections[n].id.c_str(), est_choice, true_choice, prev);
            for (net::Index link : net.intersections[n].incoming) {
              std::fprintf(stderr, "  %s est=%.2f true=%.2f\n",
                           net.links[static_cast<std::size_t>(link)].id.c_str(),
                           estimated.queues.at(link), truth.queues.at(link));
            }
          }
        }
      } else {
        static const ctl::QueueSnapshot empty{};
        choice = state.controller->step(t, empty);
      }
      apply_phase(n, choice, t);
    }
  }

  void refill_tokens(double t0, double t1) {
    for (std::size_t m = 0; m < move_states.size(); ++m) {
      MoveState& ms = move_states[m];
      const bool green_now = ms.green_from <= t0 + kEps && t0 < ms.green_until - kEps;
      if (green_now && !ms.was_green) {
        ms.tokens = 1.0;  // fresh green: first vehicle may cross at once
      } else if (green_now) {
        const double span = std::min(t1, ms.green_until) - std::max(t0, ms.green_from);
        ms.tokens = std::min(1.0, ms.tokens + ms.rate_per_s * std::max(0.0, span));
      }
      ms.was_green = green_now;
    }
  }

  // ---- advance ------------------------------------------------------------
  bool try_cross(int vid, double desired, double t0, double t1) {
    VehicleState& v = vehicles[static_cast<std::size_t>(vid)];
    const net::Index link = v.route[v.route_pos];
    const double length = net.links[static_cast<std::size_t>(link)].length;

    if (v.route_pos + 1 >= v.route.size()) {
      // Downstream network boundary: free outflow.
      finish_trip(vid, t1, length);
      return true;
    }

    const net::Index movement = v.next_movement;
    MoveState& ms = move_states[static_cast<std::size_t>(movement)];
    if (ms.green_from > t0 + kEps || t0 >= ms.green_until - kEps) {
      return false;  // red, or the clearing window has closed
    }
    if (ms.tokens < 1.0 - kEps) return false;  // saturation headway not elapsed

    const net::Index inter = net.movements[static_cast<std::size_t>(movement)].intersection;
    const double slot_s = inter_states[static_cast<std::size_t>(inter)].slot.slot_s;
    const long slot_idx = static_cast<long>(std::floor(t0 / slot_s + kEps));
    if (ms.slot_idx != slot_idx) {
      ms.slot_idx = slot_idx;
      ms.slot_count = 0;
    }
    if (ms.slot_count >= ms.ceil_cap) return false;  // per-slot service cap

    const net::Index next_link = v.route[v.route_pos + 1];
    if (link_count(next_link) >= link_capacity[static_cast<std::size_t>(next_link)]) {
      return false;  // spillback: downstream link at spatial capacity
    }
    const net::Index next_movement_idx =
        v.route_pos + 2 < v.route.size()
            ? net.movement_between(next_link, v.route[v.route_pos + 2])
            : net::kNone;
    const net::Index target_lane = pick_lane(next_link, next_movement_idx);
    if (target_lane == net::kNone) return false;  // no lane has entry room

    const auto& target_order = lane_order[static_cast<std::size_t>(target_lane)];
    const double room = target_order.empty()
                            ? net.links[static_cast<std::size_t>(next_link)].length
                            : vehicles[static_cast<std::size_t>(target_order.back())].position -
                                  delta;
    const double overshoot = std::max(0.0, desired - length);
    const double new_pos = std::clamp(std::min(overshoot, room), 0.0,
                                      net.links[static_cast<std::size_t>(next_link)].length);

    ms.tokens -= 1.0;
    ms.slot_count += 1;

    auto& old_order = lane_order[static_cast<std::size_t>(v.lane)];
    old_order.erase(old_order.begin());

    const double moved = (length - v.position) + new_pos;
    v.route_pos += 1;
    v.lane = target_lane;
    v.position = new_pos;
    v.speed = moved / dt;
    v.next_movement = next_movement_idx;
    v.reset_history(t1, new_pos);
    lane_order[static_cast<std::size_t>(target_lane)].push_back(vid);

    if (moved > vf * dt + 1e-6) violation("teleport on crossing", t1);
    log_event(format_line("t=%.3f cross veh=%lld movement=%s to=%s x=%.3f", t1,
                          static_cast<long long>(v.id),
                          net.movements[static_cast<std::size_t>(movement)].id.c_str(),
                          net.links[static_cast<std::size_t>(next_link)].id.c_str(), new_pos));
    return true;
  }

  void finish_trip(int vid, double t1, double length) {
    VehicleState& v = vehicles[static_cast<std::size_t>(vid)];
    auto& order = lane_order[static_cast<std::size_t>(v.lane)];
    order.erase(order.begin());
    v.exited = true;
    v.position = length;
    const double delay = (t1 - v.spawn_time) - v.free_flow_trip_s;
    ++result.exited;
    ++result.completed_trips;
    result.total_delay_s += delay;
    win_delay_sum += delay;
    ++win_delay_count;
    ++win_exits;
    log_event(format_line("t=%.3f exit veh=%lld delay=%.3f", t1, static_cast<long long>(v.id),
                          delay));
  }

  void advance_lane(net::Index lane_idx, double t0, double t1) {
    const std::vector<int> order = lane_order[static_cast<std::size_t>(lane_idx)];  // snapshot
    if (order.empty()) return;
    const net::Index link = net.lanes[static_cast<std::size_t>(lane_idx)].link;
    const double length = net.links[static_cast<std::size_t>(link)].length;

    // Leader positions one reaction lag back, resolved before anyone moves.
    std::vector<double> lag_bound(order.size(), kInf);
    const double lag_time = t1 - tau_lag;
    for (std::size_t i = 1; i < order.size(); ++i) {
      lag_bound[i] = vehicles[static_cast<std::size_t>(order[i - 1])].position_at(lag_time) - delta;
    }

    for (std::size_t i = 0; i < order.size(); ++i) {
      const int vid = order[i];
      if (last_moved_tick[static_cast<std::size_t>(vid)] == tick) continue;
      last_moved_tick[static_cast<std::size_t>(vid)] = tick;
      VehicleState& v = vehicles[static_cast<std::size_t>(vid)];
      double desired = v.position + vf * dt;
      if (i > 0) desired = std::min(desired, lag_bound[i]);
      desired = std::max(desired, v.position);  // never reverse

      if (i == 0 && desired >= length - 1e-9) {
        if (try_cross(vid, desired, t0, t1)) continue;
      }
      const double new_pos = std::min(desired, length);
      if (new_pos - v.position > vf * dt + 1e-6) violation("teleport within lane", t1);
      v.speed = (new_pos - v.position) / dt;
      v.position = new_pos;
      v.push_history(t1, new_pos);
    }
  }

  void advance_all(double t0, double t1) {
    for (std::size_t lane = 0; lane < lane_order.size(); ++lane) {
      advance_lane(static_cast<net::Index>(lane), t0, t1);
    }
  }

  // ---- probes --------------------------------------------------------------
  void emit_probes(double t) {
    std::vector<est::ProbeReading> batch;
    for (std::size_t lane = 0; lane < lane_order.size(); ++lane) {
      for (int vid : lane_order[lane]) {
        const VehicleState& v = vehicles[static_cast<std::size_t>(vid)];
        if (!v.connected) continue;
        est::ProbeReading reading;
        reading.vehicle = v.id;
        reading.lane = static_cast<net::Index>(lane);
        reading.position = v.position;
        reading.time = t;
        reading.speed = v.speed;
        if (params.probe_noise_std > 0.0) {
          reading.speed = std::clamp(reading.speed + params.probe_noise_std * rng.normal01(),
                                     0.0, vf);
        }
        batch.push_back(reading);
        if (config.probe_log) est::write_probe_reading(*config.probe_log, reading, net);
        log_event(format_line("t=%.3f probe veh=%lld lane=%s x=%.3f v=%.3f", t,
                              static_cast<long long>(v.id),
                              net.lanes[lane].id.c_str(), reading.position, reading.speed));
      }
    }
    if (estimation && !batch.empty()) {
      estimation->history.ingest_batch(batch, t);
      estimation->history.prune(t, params.estimator.horizon);
    }
  }

  // ---- metrics --------------------------------------------------------------
  void scan_stopped_queues(double t) {
    for (std::size_t lane = 0; lane < lane_order.size(); ++lane) {
      const auto& order = lane_order[lane];
      if (order.empty()) continue;
      const net::Index link = net.lanes[lane].link;
      const double length = net.links[static_cast<std::size_t>(link)].length;
      const VehicleState& front = vehicles[static_cast<std::size_t>(order[0])];
      if (front.speed >= params.stop_speed_threshold ||
          length - front.position > 1.5 * delta) {
        continue;
      }
      int run = 1;
      for (std::size_t i = 1; i < order.size(); ++i) {
        const VehicleState& prev = vehicles[static_cast<std::size_t>(order[i - 1])];
        const VehicleState& cur = vehicles[static_cast<std::size_t>(order[i])];
        if (cur.speed >= params.stop_speed_threshold || prev.position - cur.position > 1.5 * delta) {
          break;
        }
        ++run;
      }
      const double meters = std::min(static_cast<double>(run) * delta, length);
      win_max_queue = std::max(win_max_queue, meters);
      (void)t;
    }
  }

  void close_window(double start, double end) {
    MetricsWindow window;
    window.start = start;
    window.end = end;
    window.avg_delay_s = win_delay_count > 0
                             ? win_delay_sum / static_cast<double>(win_delay_count)
                             : 0.0;
    window.throughput = win_exits;
    window.max_stopped_queue_m = win_max_queue;
    result.peak_queue_m = std::max(result.peak_queue_m, win_max_queue);
    result.windows.push_back(window);
    win_delay_sum = 0.0;
    win_delay_count = 0;
    win_exits = 0;
    win_max_queue = 0.0;
  }

  void check_invariants(double t) {
    long on_links = on_links_count();
    if (result.spawned != result.exited + on_links + buffered) {
      violation(format_line("conservation: spawned=%ld exited=%ld on_links=%ld buffered=%ld",
                            result.spawned, result.exited, on_links, buffered),
                t);
    }
    for (std::size_t lane = 0; lane < lane_order.size(); ++lane) {
      const auto& order = lane_order[lane];
      for (std::size_t i = 1; i < order.size(); ++i) {
        const double gap = vehicles[static_cast<std::size_t>(order[i - 1])].position -
                           vehicles[static_cast<std::size_t>(order[i])].position;
        if (gap < delta - 1e-6) {
          violation(format_line("collision: lane=%s gap=%.4f", net.lanes[lane].id.c_str(), gap), t);
        }
      }
    }
    for (std::size_t m = 0; m < move_states.size(); ++m) {
      if (move_states[m].slot_count > move_states[m].ceil_cap) {
        violation(format_line("service cap: movement=%s count=%d",
                              net.movements[m].id.c_str(), move_states[m].slot_count),
                  t);
      }
    }
    for (std::size_t li = 0; li < net.links.size(); ++li) {
      if (link_count(static_cast<net::Index>(li)) > link_capacity[li]) {
        violation(format_line("spillback: link=%s over capacity", net.links[li].id.c_str()), t);
      }
    }
  }

  // ---- main loop -------------------------------------------------------------
  void run() {
    double window_start = 0.0;
    // Boundary actions at t = 0: reporting, control decisions, count sample.
    emit_probes(0.0);
    step_controllers(0.0, 0);
    result.network_counts.emplace_back(0.0, on_links_count());

    for (tick = 0; tick < ticks_total; ++tick) {
      const double t0 = static_cast<double>(tick) * dt;
      const double t1 = static_cast<double>(tick + 1) * dt;

      spawn_arrivals(t0);
      release_buffers(t0);
      refill_tokens(t0, t1);
      advance_all(t0, t1);
      scan_stopped_queues(t1);
      if (params.check_invariants) check_invariants(t1);

      const long boundary = tick + 1;
      if (report_ticks > 0 && boundary % report_ticks == 0) emit_probes(t1);
      step_controllers(t1, boundary);
      if (count_ticks > 0 && boundary % count_ticks == 0) {
        result.network_counts.emplace_back(t1, on_links_count());
      }
      if (window_ticks > 0 && boundary % window_ticks == 0) {
        close_window(window_start, t1);
        window_start = t1;
      }
    }
  }
};

Simulation::Simulation(const RunConfig& config) : impl_(std::make_unique<Impl>(config)) {}
Simulation::~Simulation() = default;

void Simulation::run() { impl_->run(); }

RunResult Simulation::take_result() { return std::move(impl_->result); }

long Simulation::link_vehicle_count(net::Index link) const { return impl_->link_count(link); }

long Simulation::total_on_links() const { return impl_->on_links_count(); }

const VehicleState& Simulation::vehicle(std::int64_t id) const {
  return impl_->vehicles.at(static_cast<std::size_t>(id));
}

RunResult run_scenario(const RunConfig& config) {
  Simulation sim(config);
  sim.run();
  return sim.take_result();
}

} // namespace bpeq::sim
