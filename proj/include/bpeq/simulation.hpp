#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bpeq/control.hpp"
#include "bpeq/estimation.hpp"
#include "bpeq/network.hpp"
#include "bpeq/rng.hpp"

namespace bpeq::sim {

struct VehicleState {
  std::int64_t id = 0;
  std::vector<net::Index> route;      // ordered links, entry to exit
  std::size_t route_pos = 0;          // index of the current link in route
  net::Index lane = net::kNone;       // kNone while waiting in the entry buffer
  net::Index next_movement = net::kNone;
  double position = 0.0;              // meters from the upstream end
  double speed = 0.0;                 // m/s
  bool connected = false;
  double spawn_time = 0.0;
  double free_flow_trip_s = 0.0;
  bool exited = false;

  // Recent trajectory samples for the car-following reaction lag.
  std::array<double, 8> hist_time{};
  std::array<double, 8> hist_pos{};
  int hist_len = 0;
  int hist_head = 0;

  void reset_history(double t, double x);
  void push_history(double t, double x);
  double position_at(double t) const;  // linear interpolation, clamped to ends
};

struct RateSegment {
  double t_start = 0.0;
  double rate_vph = 0.0;
};

struct TurningTable {
  net::Index from_link = net::kNone;
  std::vector<std::pair<net::Index, double>> branches;  // (to link, probability)
};

struct DemandProfile {
  struct Entry {
    net::Index link = net::kNone;
    std::vector<RateSegment> segments;  // sorted by t_start
  };
  std::vector<Entry> entries;
  std::vector<TurningTable> turnings;

  double rate_at(net::Index link, double t) const;
  const TurningTable* turning_for(net::Index from_link) const;
  // Time-averaged over [0, duration], for planning.
  ctl::MeanDemand mean(const net::Network& network, double duration) const;
  void validate(const net::Network& network) const;
};

enum class ControllerKind { kBpPerfect, kBpEq, kFixed };

const char* controller_kind_name(ControllerKind kind);
ControllerKind controller_kind_from_name(const std::string& name);

struct ControllerAssignment {
  ControllerKind kind = ControllerKind::kBpPerfect;
  ctl::ControlSlot slot;
  std::optional<ctl::FixedTimingPlan> plan;  // required for kFixed
};

struct SimParams {
  double step_s = 0.5;
  double report_interval_s = 10.0;
  double penetration = 1.0;
  double stop_speed_threshold = kmh_to_ms(5.0);
  double probe_noise_std = 0.0;  // m/s; 0 disables the noise hook
  double count_sample_s = 10.0;
  bool check_invariants = true;
  bool shadow_compare = false;  // also evaluate the perfect-queue choice at
                                // every BP-EQ decision and record agreement
  est::EstimatorParams estimator;  // also supplies v_f, w, rho_jam for dynamics
  ctl::SaturationParams saturation;

  double jam_spacing() const { return 1.0 / estimator.jam_density; }
  double reaction_lag() const {
    return 1.0 / (estimator.shockwave_speed * estimator.jam_density);
  }
  void validate() const;
};

struct MetricsWindow {
  double start = 0.0;
  double end = 0.0;
  double avg_delay_s = 0.0;          // mean over trips completed in the window
  long throughput = 0;               // vehicles exited in the window
  double max_stopped_queue_m = 0.0;  // max over lanes and ticks in the window
};

struct RunResult {
  std::vector<MetricsWindow> windows;
  long spawned = 0;
  long exited = 0;
  long completed_trips = 0;
  double total_delay_s = 0.0;
  double peak_queue_m = 0.0;
  long shadow_agree = 0;
  long shadow_total = 0;
  long stale_warnings = 0;
  long invariant_violations = 0;
  std::vector<std::string> violation_samples;
  std::vector<std::pair<double, long>> network_counts;  // (t, vehicles on links)

  double mean_delay_s() const {
    return completed_trips > 0 ? total_delay_s / static_cast<double>(completed_trips) : 0.0;
  }
  double shadow_agreement() const {
    return shadow_total > 0 ? static_cast<double>(shadow_agree) / static_cast<double>(shadow_total)
                            : 1.0;
  }
};

struct RunConfig {
  const net::Network* network = nullptr;
  DemandProfile demand;
  std::vector<ControllerAssignment> controllers;  // one per intersection
  SimParams params;
  std::uint64_t seed = 1;
  double duration_s = 3600.0;
  double window_s = 600.0;
  std::ostream* event_log = nullptr;
  std::ostream* probe_log = nullptr;
};

// Advances the whole scenario tick by tick: spawn, car-following advance,
// probe emission at reporting boundaries, controller steps at slot
// boundaries, metrics at window boundaries. Deterministic for a fixed seed;
// the network starts empty.
RunResult run_scenario(const RunConfig& config);

// Exposed for tests: the simulator engine with observers.
class Simulation {
 public:
  explicit Simulation(const RunConfig& config);
  ~Simulation();

  void run();
  RunResult take_result();

  // Observers (tests and the perfect queue source).
  long link_vehicle_count(net::Index link) const;
  long total_on_links() const;
  const VehicleState& vehicle(std::int64_t id) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace bpeq::sim
