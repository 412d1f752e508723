#include "bpeq/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace bpeq::est {

namespace {
constexpr double kFreeFlowSnapRel = 1e-9;     // v within this of v_f counts as free flow
constexpr double kDensitySnapVehM = 1e-9;     // densities below this snap to 0
constexpr double kDomainTolRel = 1e-9;        // accepted overshoot before domain_error
} // namespace

void EstimatorParams::validate() const {
  if (sigma <= 0.0 || tau <= 0.0 || horizon <= 0.0 || free_flow_speed <= 0.0 ||
      shockwave_speed <= 0.0 || jam_density <= 0.0 || z_floor <= 0.0) {
    throw std::invalid_argument("estimator params must all be strictly positive");
  }
}

double kernel_weight(double dx, double dt, const EstimatorParams& params) {
  return std::exp(-std::abs(dx) / params.sigma - std::abs(dt) / params.tau);
}

std::vector<double> kernel_weights(double x, double t,
                                   const std::vector<ProbeReading>& readings,
                                   const EstimatorParams& params) {
  std::vector<double> weights;
  weights.reserve(readings.size());
  double z = 0.0;
  for (const auto& r : readings) {
    const double phi = kernel_weight(x - r.position, t - r.time, params);
    weights.push_back(phi);
    z += phi;
  }
  if (z < params.z_floor) return {};
  for (double& w : weights) w /= z;
  return weights;
}

double estimate_speed(double x, double t, const std::vector<ProbeReading>& readings,
                      const EstimatorParams& params) {
  const auto weights = kernel_weights(x, t, readings, params);
  if (weights.empty()) return params.free_flow_speed;
  double v = 0.0;
  for (std::size_t k = 0; k < readings.size(); ++k) {
    v += weights[k] * readings[k].speed;
  }
  return std::clamp(v, 0.0, params.free_flow_speed);
}

double speed_to_density(double v, const EstimatorParams& params) {
  const double v_f = params.free_flow_speed;
  if (v < -v_f * kDomainTolRel || v > v_f * (1.0 + kDomainTolRel)) {
    throw std::domain_error("speed_to_density: speed outside [0, v_f]");
  }
  v = std::clamp(v, 0.0, v_f);
  if (v >= v_f * (1.0 - kFreeFlowSnapRel)) return 0.0;
  const double denom = 1.0 - (v_f / params.shockwave_speed) * std::log1p(-v / v_f);
  const double rho = params.jam_density / denom;
  return rho < kDensitySnapVehM ? 0.0 : rho;
}

double density_to_speed(double rho, const EstimatorParams& params) {
  if (rho < -params.jam_density * kDomainTolRel ||
      rho > params.jam_density * (1.0 + kDomainTolRel)) {
    throw std::domain_error("density_to_speed: density outside [0, rho_jam]");
  }
  rho = std::clamp(rho, 0.0, params.jam_density);
  if (rho <= 0.0) return params.free_flow_speed;
  const double v_f = params.free_flow_speed;
  const double v =
      v_f * -std::expm1((params.shockwave_speed / v_f) * (1.0 - params.jam_density / rho));
  return std::clamp(v, 0.0, v_f);
}

void ProbeHistory::ingest_batch(const std::vector<ProbeReading>& batch, double t_now) {
  for (const auto& reading : batch) {
    lanes_[static_cast<std::size_t>(reading.lane)].push_back(reading);
  }
  last_ingest_time_ = t_now;
  ever_ingested_ = true;
}

void ProbeHistory::prune(double t_now, double horizon) {
  for (auto& lane : lanes_) {
    while (!lane.empty() && t_now - lane.front().time > horizon) {
      lane.pop_front();
    }
  }
}

std::vector<ProbeReading> ProbeHistory::lane_snapshot(net::Index lane_index) const {
  const auto& buffer = lanes_[static_cast<std::size_t>(lane_index)];
  return {buffer.begin(), buffer.end()};
}

void estimate_link_field(const net::Network& network, net::Index link,
                         const ProbeHistory& history, double t_now,
                         const EstimatorParams& params, CellField& out) {
  if (out.lanes.size() != network.lanes.size()) {
    out.lanes.assign(network.lanes.size(), {});
  }
  out.time = t_now;
  for (net::Index lane_idx : network.links[static_cast<std::size_t>(link)].lanes) {
    const net::Lane& lane = network.lanes[static_cast<std::size_t>(lane_idx)];
    auto& estimates = out.lanes[static_cast<std::size_t>(lane_idx)];
    estimates.resize(lane.cells.size());
    const auto& readings = history.lane(lane_idx);

    for (std::size_t c = 0; c < lane.cells.size(); ++c) {
      const double x = lane.cells[c].center;
      double z = 0.0;
      double weighted = 0.0;
      for (const auto& r : readings) {
        const double phi = kernel_weight(x - r.position, t_now - r.time, params);
        z += phi;
        weighted += phi * r.speed;
      }
      double v = params.free_flow_speed;
      if (z >= params.z_floor) {
        v = std::clamp(weighted / z, 0.0, params.free_flow_speed);
      }
      estimates[c].speed = v;
      estimates[c].density = speed_to_density(v, params);
    }
  }
}

CellField estimate_cell_field(const net::Network& network, const ProbeHistory& history,
                              double t_now, const EstimatorParams& params) {
  CellField field;
  field.lanes.assign(network.lanes.size(), {});
  field.time = t_now;
  for (std::size_t li = 0; li < network.links.size(); ++li) {
    estimate_link_field(network, static_cast<net::Index>(li), history, t_now, params, field);
  }
  return field;
}

double link_queue(const net::Network& network, net::Index link, const CellField& field) {
  double queue = 0.0;
  for (net::Index lane_idx : network.links[static_cast<std::size_t>(link)].lanes) {
    queue += lane_queue(network, lane_idx, field);
  }
  return queue;
}

double lane_queue(const net::Network& network, net::Index lane_idx, const CellField& field) {
  const net::Lane& lane = network.lanes[static_cast<std::size_t>(lane_idx)];
  const auto& estimates = field.lanes[static_cast<std::size_t>(lane_idx)];
  double queue = 0.0;
  for (std::size_t c = 0; c < lane.cells.size(); ++c) {
    queue += estimates[c].density * lane.cells[c].length;
  }
  return queue;
}

std::vector<ProbeReading> read_probe_log(std::istream& in, const net::Network& network) {
  std::vector<ProbeReading> readings;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string vehicle, lane, x, t, v;
    if (!std::getline(fields, vehicle, ',') || !std::getline(fields, lane, ',') ||
        !std::getline(fields, x, ',') || !std::getline(fields, t, ',') ||
        !std::getline(fields, v, ',')) {
      throw std::runtime_error("probe log line " + std::to_string(line_no) +
                               ": expected 'vehicle,lane,x,t,v'");
    }
    ProbeReading reading;
    reading.vehicle = std::stoll(vehicle);
    reading.lane = net::kNone;
    for (std::size_t i = 0; i < network.lanes.size(); ++i) {
      if (network.lanes[i].id == lane) {
        reading.lane = static_cast<net::Index>(i);
        break;
      }
    }
    if (reading.lane == net::kNone) {
      throw std::runtime_error("probe log line " + std::to_string(line_no) + ": unknown lane '" +
                               lane + "'");
    }
    reading.position = std::stod(x);
    reading.time = std::stod(t);
    reading.speed = std::stod(v);
    readings.push_back(reading);
  }
  return readings;
}

void write_probe_reading(std::ostream& out, const ProbeReading& reading,
                         const net::Network& network) {
  char buffer[160];
  std::snprintf(buffer, sizeof(buffer), "%lld,%s,%.9f,%.3f,%.9f",
                static_cast<long long>(reading.vehicle),
                network.lanes[static_cast<std::size_t>(reading.lane)].id.c_str(),
                reading.position, reading.time, reading.speed);
  out << buffer << '\n';
}

} // namespace bpeq::est
