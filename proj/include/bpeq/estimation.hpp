#pragma once

#include <deque>
#include <iosfwd>
#include <vector>

#include "bpeq/network.hpp"
#include "bpeq/units.hpp"

namespace bpeq::est {

// One timestamped report from a connected vehicle. Position is measured from
// the upstream end of the link.
struct ProbeReading {
  std::int64_t vehicle = 0;
  net::Index lane = net::kNone;
  double position = 0.0;  // x_k, meters
  double time = 0.0;      // t_k, seconds
  double speed = 0.0;     // v_k, m/s
};

struct EstimatorParams {
  double sigma = 20.0;                          // space kernel scale, m
  double tau = 5.0;                             // time kernel scale, s
  double horizon = 40.0;                        // T, s
  double free_flow_speed = kmh_to_ms(60.0);     // v_f
  double shockwave_speed = kmh_to_ms(25.0);     // w
  double jam_density = 0.143;                   // rho_jam, veh/m
  // Kernel mass below which a cell is treated as data-free and assumed free
  // flowing. 0.3 puts the cutoff roughly 1.2 sigma past an isolated fresh
  // reading; much smaller floors let a single stopped reporter paint
  // hundreds of meters of phantom jam.
  double z_floor = 0.3;
  void validate() const;
};

// phi_0 of the interpolation: exp(-|dx|/sigma - |dt|/tau). Equals 1 only at
// the origin and decreases in both |dx| and |dt|.
double kernel_weight(double dx, double dt, const EstimatorParams& params);

// Normalized kernel weights of `readings` at evaluation point (x, t).
// Returned in reading order; empty if total kernel mass is below z_floor.
std::vector<double> kernel_weights(double x, double t,
                                   const std::vector<ProbeReading>& readings,
                                   const EstimatorParams& params);

// Kernel-weighted mean of reported speeds at (x, t); free-flow speed when the
// kernel mass is below z_floor (no informative data). Clamped to [0, v_f].
double estimate_speed(double x, double t, const std::vector<ProbeReading>& readings,
                      const EstimatorParams& params);

// Speed-to-density inversion. v = 0 maps to jam density; v within 1e-9
// relative of v_f maps to exactly 0. Throws std::domain_error outside
// [0, v_f] beyond that tolerance.
double speed_to_density(double v, const EstimatorParams& params);

// Inverse of speed_to_density on [0, rho_jam].
double density_to_speed(double rho, const EstimatorParams& params);

// Per-lane retained probe readings. Ingestion is batch-atomic; pruning keeps
// readings with age <= horizon (age exactly T stays in).
class ProbeHistory {
 public:
  explicit ProbeHistory(std::size_t lane_count) : lanes_(lane_count) {}

  void ingest_batch(const std::vector<ProbeReading>& batch, double t_now);
  void prune(double t_now, double horizon);

  const std::deque<ProbeReading>& lane(net::Index lane_index) const {
    return lanes_[static_cast<std::size_t>(lane_index)];
  }
  std::vector<ProbeReading> lane_snapshot(net::Index lane_index) const;

  double last_ingest_time() const { return last_ingest_time_; }
  bool ever_ingested() const { return ever_ingested_; }

 private:
  std::vector<std::deque<ProbeReading>> lanes_;
  double last_ingest_time_ = 0.0;
  bool ever_ingested_ = false;
};

struct CellEstimate {
  double speed = 0.0;    // v(x_i, t_i), m/s
  double density = 0.0;  // rho(x_i, t_i), veh/m
};

// Estimated speed/density for every cell of every lane, indexed like
// Network::lanes. `time` is the evaluation timestamp.
struct CellField {
  std::vector<std::vector<CellEstimate>> lanes;
  double time = 0.0;
};

// Runs the full pipeline for one link: speeds at cell centers, densities via
// the speed-density inversion. Only same-lane readings contribute.
void estimate_link_field(const net::Network& network, net::Index link,
                         const ProbeHistory& history, double t_now,
                         const EstimatorParams& params, CellField& out);

CellField estimate_cell_field(const net::Network& network, const ProbeHistory& history,
                              double t_now, const EstimatorParams& params);

// Q_L = sum over the link's lane cells of rho_i * d_i, in vehicles.
double link_queue(const net::Network& network, net::Index link, const CellField& field);

// Same aggregation restricted to one lane.
double lane_queue(const net::Network& network, net::Index lane, const CellField& field);

// Probe-log text replay: lines "vehicle,lane,x,t,v"; '#' starts a comment.
std::vector<ProbeReading> read_probe_log(std::istream& in, const net::Network& network);
void write_probe_reading(std::ostream& out, const ProbeReading& reading,
                         const net::Network& network);

} // namespace bpeq::est
