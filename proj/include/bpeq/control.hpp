#pragma once

#include <unordered_map>
#include <vector>

#include "bpeq/network.hpp"

namespace bpeq::ctl {

// Queue lengths (vehicles) for the links incident to one intersection,
// sampled at `time`. Controllers receive nothing else: decentralization is
// enforced by this interface. `lane_queues` is optional lane-level detail;
// when present for a movement's serving lanes, the movement's upstream weight
// counts only those lanes (a shared approach queue otherwise locks protected
// turns out of service, see movement_weight).
struct QueueSnapshot {
  std::unordered_map<net::Index, double> queues;       // by link
  std::unordered_map<net::Index, double> lane_queues;  // by lane, optional
  double time = 0.0;

  double at(const net::Network& network, net::Index link) const;
};

struct SaturationParams {
  double sat_flow_vphpl = 1800.0;  // one through lane, veh/h
};

struct ControlSlot {
  double slot_s = 10.0;
  double yellow_s = 3.0;
  double all_red_s = 2.0;
  double lost_s() const { return yellow_s + all_red_s; }
  void validate() const;
};

// Service of a movement while its phase is active: mu * x * f_t * dt / 3600
// vehicles per slot.
double movement_service_value(const net::Network& network, net::Index movement,
                              const SaturationParams& sat, double slot_s);

// Same, but 0 when the movement is not part of `phase`.
double movement_service(const net::Network& network, net::Index movement,
                        const net::Phase& phase, const SaturationParams& sat, double slot_s);

// W = Q_up - Q_Lb, possibly negative. Exit links count as empty sinks.
// Q_up is the queue on the movement's serving lanes when the snapshot has
// lane detail, else the whole upstream link queue.
double movement_weight(const net::Network& network, net::Index movement,
                       const QueueSnapshot& queues);

double phase_pressure(const net::Network& network, const net::Phase& phase,
                      const QueueSnapshot& queues, const SaturationParams& sat, double slot_s);

// Argmax of phase pressure over the intersection's phase set. Ties keep the
// current phase when it is among the maximizers, otherwise the lowest phase
// index wins. `current_phase` may be net::kNone (cold start).
net::Index select_phase(const net::Network& network, net::Index intersection,
                        const QueueSnapshot& queues, const SaturationParams& sat,
                        double slot_s, net::Index current_phase);

// One entry per phase activation; `green_s` excludes the preceding lost time.
struct PhaseTiming {
  net::Index phase = net::kNone;  // index into the intersection's phase list
  double green_s = 0.0;
  double lost_s = 0.0;
};

struct FixedTimingPlan {
  std::vector<PhaseTiming> sequence;
  double offset_s = 0.0;
  bool oversaturated = false;

  double cycle_s() const;
  void validate() const;
};

// Phase pending-or-active at clock time t: activation i covers
// [c_i, c_i + lost_i + green_i) within the cycle, lost time first.
net::Index fixed_timing_step(const FixedTimingPlan& plan, double t);

// Mean demand seen by the controllers: entry arrival rates and per-movement
// turning probabilities (ratios over the movements leaving each link).
struct MeanDemand {
  std::vector<double> entry_rate_vph;   // by link index; 0 for non-entry links
  std::vector<double> movement_ratio;   // by movement index
};

// Steady-state link/movement flows implied by the demand: entry rates pushed
// through the turning ratios to a fixed point.
struct DemandFlows {
  std::vector<double> link_flow_vph;
  std::vector<double> movement_flow_vph;
};

DemandFlows propagate_flows(const net::Network& network, const MeanDemand& demand);

// Max over intersections of the sum of critical flow ratios of a covering
// phase sequence; 1.0 marks the capacity boundary.
double max_critical_ratio(const net::Network& network, const DemandFlows& flows,
                          const SaturationParams& sat);

// Webster-style plans: greens proportional to critical flow ratios, cycle
// from Webster's formula clamped to [40 s, 120 s], offsets from free-flow
// travel time along the heaviest-demand corridor. Plans for oversaturated
// intersections are still produced, flagged.
std::vector<FixedTimingPlan> optimize_fixed_timing(const net::Network& network,
                                                   const MeanDemand& demand,
                                                   const SaturationParams& sat,
                                                   const ControlSlot& slot,
                                                   double free_flow_speed);

// Per-intersection decision logic. The simulator calls step() at the
// controller's cadence and applies lost time whenever the returned phase
// differs from the active one.
class Controller {
 public:
  virtual ~Controller() = default;
  // Returns the phase index to run next (within the intersection phase list).
  virtual net::Index step(double t, const QueueSnapshot& queues) = 0;
  // Seconds between decisions; 0 means every simulation tick.
  virtual double decision_period() const = 0;
  virtual bool wants_queues() const = 0;
};

class BpController : public Controller {
 public:
  BpController(const net::Network& network, net::Index intersection, SaturationParams sat,
               ControlSlot slot)
      : network_(network), intersection_(intersection), sat_(sat), slot_(slot) {}

  net::Index step(double t, const QueueSnapshot& queues) override;
  double decision_period() const override { return slot_.slot_s; }
  bool wants_queues() const override { return true; }
  net::Index current_phase() const { return current_phase_; }

 private:
  const net::Network& network_;
  net::Index intersection_;
  SaturationParams sat_;
  ControlSlot slot_;
  net::Index current_phase_ = net::kNone;
};

class FixedTimingController : public Controller {
 public:
  explicit FixedTimingController(FixedTimingPlan plan) : plan_(std::move(plan)) {
    plan_.validate();
  }

  net::Index step(double t, const QueueSnapshot&) override {
    return fixed_timing_step(plan_, t);
  }
  double decision_period() const override { return 0.0; }
  bool wants_queues() const override { return false; }
  const FixedTimingPlan& plan() const { return plan_; }

 private:
  FixedTimingPlan plan_;
};

} // namespace bpeq::ctl
