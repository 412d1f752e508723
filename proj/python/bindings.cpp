#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <sstream>

#include "bpeq/estimation.hpp"
#include "bpeq/fixtures.hpp"
#include "bpeq/scenario.hpp"

namespace py = pybind11;
using namespace bpeq;

namespace {

est::EstimatorParams params_from_kwargs(double sigma, double tau, double horizon,
                                        double free_flow_kmh, double shockwave_kmh,
                                        double jam_density_veh_km, double z_floor) {
  est::EstimatorParams p;
  p.sigma = sigma;
  p.tau = tau;
  p.horizon = horizon;
  p.free_flow_speed = kmh_to_ms(free_flow_kmh);
  p.shockwave_speed = kmh_to_ms(shockwave_kmh);
  p.jam_density = veh_per_km_to_veh_per_m(jam_density_veh_km);
  p.z_floor = z_floor;
  p.validate();
  return p;
}

std::vector<est::ProbeReading> readings_from_tuples(
    const std::vector<std::tuple<double, double, double>>& xtv) {
  std::vector<est::ProbeReading> readings;
  readings.reserve(xtv.size());
  std::int64_t id = 0;
  for (const auto& [x, t, v] : xtv) {
    est::ProbeReading r;
    r.vehicle = id++;
    r.lane = 0;
    r.position = x;
    r.time = t;
    r.speed = v;
    readings.push_back(r);
  }
  return readings;
}

py::dict summary_to_dict(const app::RunSummary& s) {
  py::dict d;
  d["scenario"] = s.scenario;
  d["controller"] = s.controller;
  d["penetration"] = s.penetration;
  d["seed"] = s.seed;
  d["ok"] = s.ok;
  d["mean_delay_s"] = s.mean_delay_s;
  d["total_throughput"] = s.total_throughput;
  d["peak_queue_m"] = s.peak_queue_m;
  d["invariant_violations"] = s.invariant_violations;
  return d;
}

py::list rows_to_list(const app::ResultTable& table) {
  py::list rows;
  for (const auto& r : table.rows) {
    py::dict d;
    d["scenario"] = r.scenario;
    d["controller"] = r.controller;
    d["penetration"] = r.penetration;
    d["seed"] = r.seed;
    d["window_start"] = r.window_start;
    d["window_end"] = r.window_end;
    d["delay_s"] = r.avg_delay_s;
    d["throughput"] = r.throughput;
    d["max_queue_m"] = r.max_stopped_queue_m;
    rows.append(d);
  }
  return rows;
}

} // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Traffic simulator with backpressure signal control from probe-estimated queues";

  py::class_<est::EstimatorParams>(m, "EstimatorParams")
      .def(py::init(&params_from_kwargs), py::arg("sigma_m") = 20.0, py::arg("tau_s") = 5.0,
           py::arg("horizon_s") = 40.0, py::arg("free_flow_kmh") = 60.0,
           py::arg("shockwave_kmh") = 25.0, py::arg("jam_density_veh_km") = 143.0,
           py::arg("z_floor") = 1e-6)
      .def_readonly("sigma_m", &est::EstimatorParams::sigma)
      .def_readonly("tau_s", &est::EstimatorParams::tau)
      .def_readonly("horizon_s", &est::EstimatorParams::horizon)
      .def_readonly("free_flow_ms", &est::EstimatorParams::free_flow_speed)
      .def_readonly("shockwave_ms", &est::EstimatorParams::shockwave_speed)
      .def_readonly("jam_density_veh_m", &est::EstimatorParams::jam_density);

  m.def(
      "kernel_weight",
      [](double dx, double dt, const est::EstimatorParams& p) {
        return est::kernel_weight(dx, dt, p);
      },
      py::arg("dx_m"), py::arg("dt_s"), py::arg("params") = est::EstimatorParams{},
      "Interpolation kernel exp(-|dx|/sigma - |dt|/tau)");

  m.def(
      "estimate_speed",
      [](double x, double t, const std::vector<std::tuple<double, double, double>>& readings,
         const est::EstimatorParams& p) {
        return est::estimate_speed(x, t, readings_from_tuples(readings), p);
      },
      py::arg("x_m"), py::arg("t_s"), py::arg("readings"),
      py::arg("params") = est::EstimatorParams{},
      "Kernel-weighted speed at (x, t) from same-lane (x, t, v) readings");

  m.def(
      "speed_to_density",
      [](double v, const est::EstimatorParams& p) { return est::speed_to_density(v, p); },
      py::arg("speed_ms"), py::arg("params") = est::EstimatorParams{},
      "Speed-density inversion, veh/m");

  m.def(
      "density_to_speed",
      [](double rho, const est::EstimatorParams& p) { return est::density_to_speed(rho, p); },
      py::arg("density_veh_m"), py::arg("params") = est::EstimatorParams{});

  m.def(
      "movement_service",
      [](double sat_flow_vphpl, int lane_count, double turn_factor, double slot_s) {
        return sat_flow_vphpl * lane_count * turn_factor * slot_s / 3600.0;
      },
      py::arg("sat_flow_vphpl") = 1800.0, py::arg("lane_count") = 1,
      py::arg("turn_factor") = 1.0, py::arg("slot_s") = 10.0,
      "Vehicles served per slot while a movement is active");

  m.def(
      "select_phase",
      [](const std::string& network_json, const std::map<std::string, double>& queues,
         int current_phase, double slot_s, double sat_flow_vphpl) {
        const net::Network network = net::build_network(network_json);
        if (network.intersections.size() != 1) {
          throw std::invalid_argument("select_phase expects a single-intersection network");
        }
        ctl::QueueSnapshot snap;
        for (const auto& [link_id, q] : queues) {
          const net::Index link = network.link_index(link_id);
          if (link == net::kNone) {
            throw std::invalid_argument("unknown link '" + link_id + "'");
          }
          snap.queues[link] = q;
        }
        ctl::SaturationParams sat;
        sat.sat_flow_vphpl = sat_flow_vphpl;
        const net::Index chosen =
            ctl::select_phase(network, 0, snap, sat, slot_s,
                              current_phase < 0 ? net::kNone : current_phase);
        py::dict out;
        out["phase_index"] = chosen;
        out["phase_id"] = network.intersections[0].phases[chosen].id;
        return out;
      },
      py::arg("network_json"), py::arg("queues"), py::arg("current_phase") = -1,
      py::arg("slot_s") = 10.0, py::arg("sat_flow_vphpl") = 1800.0,
      "Max-pressure phase choice for a one-intersection network from per-link queues");

  m.def("isolated_scenario_json",
        [](double rate_vph, const std::string& name) {
          return app::isolated_scenario_json(rate_vph, name).dump();
        },
        py::arg("rate_vph"), py::arg("name") = "isolated");

  m.def("isolated_network_json", [] { return app::isolated_network_json().dump(); });

  m.def("grid_scenario_json",
        [](double rate_vph, const std::string& name) {
          return app::grid_scenario_json(rate_vph, name).dump();
        },
        py::arg("rate_vph"), py::arg("name") = "grid");

  m.def(
      "run_scenario",
      [](const std::string& config_json, std::uint64_t seed, const std::string& controller,
         double penetration) {
        const app::ScenarioConfig config =
            app::config_from_json(nlohmann::json::parse(config_json), "");
        std::optional<sim::ControllerKind> kind;
        if (!controller.empty()) kind = sim::controller_kind_from_name(controller);
        std::optional<double> pen;
        if (penetration >= 0.0) pen = penetration;
        const sim::RunConfig run = config.make_run(seed, kind, pen);
        const sim::RunResult result = sim::run_scenario(run);
        py::dict out;
        out["spawned"] = result.spawned;
        out["exited"] = result.exited;
        out["mean_delay_s"] = result.mean_delay_s();
        out["peak_queue_m"] = result.peak_queue_m;
        out["invariant_violations"] = result.invariant_violations;
        py::list windows;
        for (const auto& w : result.windows) {
          py::dict wd;
          wd["start"] = w.start;
          wd["end"] = w.end;
          wd["delay_s"] = w.avg_delay_s;
          wd["throughput"] = w.throughput;
          wd["max_queue_m"] = w.max_stopped_queue_m;
          windows.append(wd);
        }
        out["windows"] = windows;
        return out;
      },
      py::arg("config_json"), py::arg("seed") = 1, py::arg("controller") = "",
      py::arg("penetration") = -1.0,
      "Run one scenario from a config JSON string; returns metrics");

  m.def(
      "run_file",
      [](const std::string& config_path, std::uint64_t seed) {
        const app::ScenarioConfig config = app::load_config(config_path);
        const app::ResultTable table = app::run_single(config, seed);
        py::dict out;
        out["rows"] = rows_to_list(table);
        py::list summaries;
        for (const auto& s : table.summaries) summaries.append(summary_to_dict(s));
        out["summaries"] = summaries;
        return out;
      },
      py::arg("config_path"), py::arg("seed") = 1,
      "Load a scenario config file, run it, and return result rows");
}
