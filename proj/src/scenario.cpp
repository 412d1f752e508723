#include "bpeq/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <stdexcept>

namespace bpeq::app {

using nlohmann::json;

namespace {

double parse_speed_field(const json& value) {
  if (value.is_string()) return parse_speed(value.get<std::string>());
  return value.get<double>();
}

double parse_density_field(const json& value) {
  if (value.is_string()) return parse_density(value.get<std::string>());
  return value.get<double>();
}

std::string format_speed(double ms) {
  std::ostringstream out;
  out << ms_to_kmh(ms) << " km/h";
  return out.str();
}

std::string format_density(double vpm) {
  std::ostringstream out;
  out << veh_per_m_to_veh_per_km(vpm) << " veh/km";
  return out.str();
}

ControllerSpec parse_controller_spec(const json& doc, const ControllerSpec& base) {
  ControllerSpec spec = base;
  if (doc.contains("kind")) {
    spec.kind = sim::controller_kind_from_name(doc["kind"].get<std::string>());
  }
  spec.slot.slot_s = doc.value("slot_s", spec.slot.slot_s);
  spec.slot.yellow_s = doc.value("yellow_s", spec.slot.yellow_s);
  spec.slot.all_red_s = doc.value("all_red_s", spec.slot.all_red_s);
  spec.slot.validate();
  return spec;
}

} // namespace

ControllerSpec ScenarioConfig::controller_for(
    const std::string& intersection_id,
    std::optional<sim::ControllerKind> kind_override) const {
  ControllerSpec spec = default_controller;
  for (const auto& [id, override_spec] : controller_overrides) {
    if (id == intersection_id) spec = override_spec;
  }
  if (kind_override) spec.kind = *kind_override;
  return spec;
}

sim::RunConfig ScenarioConfig::make_run(std::uint64_t seed,
                                        std::optional<sim::ControllerKind> kind_override,
                                        std::optional<double> penetration_override,
                                        bool shadow_compare) const {
  sim::RunConfig run;
  run.network = &network;
  run.demand = demand;
  run.seed = seed;
  run.duration_s = duration_s;
  run.window_s = window_s;
  run.params.step_s = step_s;
  run.params.report_interval_s = report_interval_s;
  run.params.count_sample_s = count_sample_s;
  run.params.penetration = penetration_override.value_or(penetration);
  run.params.stop_speed_threshold = stop_threshold;
  run.params.probe_noise_std = probe_noise_std;
  run.params.check_invariants = check_invariants;
  run.params.shadow_compare = shadow_compare;
  run.params.estimator = estimator;
  if (!tau_explicit) {
    run.params.estimator.tau = report_interval_s / 2.0;
  }
  run.params.saturation = saturation;

  // Webster plans are computed once and shared by every fixed intersection.
  std::vector<ctl::FixedTimingPlan> webster;
  bool webster_ready = false;
  for (const auto& inter : network.intersections) {
    const ControllerSpec spec = controller_for(inter.id, kind_override);
    sim::ControllerAssignment assignment;
    assignment.kind = spec.kind;
    assignment.slot = spec.slot;
    if (spec.kind == sim::ControllerKind::kFixed && !inter.phases.empty()) {
      bool overridden = false;
      for (const auto& [id, plan] : fixed_plan_overrides) {
        if (id == inter.id) {
          assignment.plan = plan;
          overridden = true;
        }
      }
      if (!overridden) {
        if (!webster_ready) {
          webster = ctl::optimize_fixed_timing(network, demand.mean(network, duration_s),
                                               saturation, spec.slot,
                                               estimator.free_flow_speed);
          webster_ready = true;
        }
        assignment.plan = webster[static_cast<std::size_t>(
            network.intersection_index(inter.id))];
      }
    }
    run.controllers.push_back(std::move(assignment));
  }
  return run;
}

json ScenarioConfig::to_json() const {
  json doc;
  doc["name"] = name;
  if (!network_path.empty()) {
    doc["network"] = network_path;
  } else {
    doc["network"] = network_json;
  }
  json demand_doc;
  demand_doc["entries"] = json::array();
  for (const auto& entry : demand.entries) {
    json e;
    e["link"] = network.links[static_cast<std::size_t>(entry.link)].id;
    e["segments"] = json::array();
    for (const auto& seg : entry.segments) {
      e["segments"].push_back({{"t_start", seg.t_start}, {"rate_vph", seg.rate_vph}});
    }
    demand_doc["entries"].push_back(e);
  }
  demand_doc["turning"] = json::array();
  for (const auto& table : demand.turnings) {
    json t;
    t["from"] = network.links[static_cast<std::size_t>(table.from_link)].id;
    json ratios = json::object();
    for (const auto& [to, p] : table.branches) {
      ratios[network.links[static_cast<std::size_t>(to)].id] = p;
    }
    t["ratios"] = ratios;
    demand_doc["turning"].push_back(t);
  }
  doc["demand"] = demand_doc;

  json controllers;
  controllers["default"] = {{"kind", sim::controller_kind_name(default_controller.kind)},
                            {"slot_s", default_controller.slot.slot_s},
                            {"yellow_s", default_controller.slot.yellow_s},
                            {"all_red_s", default_controller.slot.all_red_s}};
  controllers["overrides"] = json::array();
  for (const auto& [id, spec] : controller_overrides) {
    controllers["overrides"].push_back({{"intersection", id},
                                        {"kind", sim::controller_kind_name(spec.kind)},
                                        {"slot_s", spec.slot.slot_s},
                                        {"yellow_s", spec.slot.yellow_s},
                                        {"all_red_s", spec.slot.all_red_s}});
  }
  doc["controllers"] = controllers;

  json estimator_doc;
  estimator_doc["sigma_m"] = estimator.sigma;
  if (tau_explicit) estimator_doc["tau_s"] = estimator.tau;
  estimator_doc["horizon_s"] = estimator.horizon;
  estimator_doc["free_flow"] = format_speed(estimator.free_flow_speed);
  estimator_doc["shockwave"] = format_speed(estimator.shockwave_speed);
  estimator_doc["jam_density"] = format_density(estimator.jam_density);
  estimator_doc["z_floor"] = estimator.z_floor;
  doc["estimator"] = estimator_doc;

  if (!fixed_plan_overrides.empty()) {
    json plans = json::array();
    for (const auto& [id, plan] : fixed_plan_overrides) {
      json p;
      p["intersection"] = id;
      p["offset_s"] = plan.offset_s;
      p["sequence"] = json::array();
      const net::Intersection& inter =
          network.intersections[static_cast<std::size_t>(network.intersection_index(id))];
      for (const auto& timing : plan.sequence) {
        p["sequence"].push_back(
            {{"phase", inter.phases[static_cast<std::size_t>(timing.phase)].id},
             {"green_s", timing.green_s},
             {"lost_s", timing.lost_s}});
      }
      plans.push_back(p);
    }
    doc["fixed_plans"] = plans;
  }

  doc["penetration"] = penetration;
  doc["seeds"] = seeds;
  doc["duration_s"] = duration_s;
  doc["metrics_window_s"] = window_s;
  doc["step_s"] = step_s;
  doc["report_interval_s"] = report_interval_s;
  doc["count_sample_s"] = count_sample_s;
  doc["saturation_flow_vphpl"] = saturation.sat_flow_vphpl;
  doc["stop_threshold"] = format_speed(stop_threshold);
  doc["probe_noise_std"] = probe_noise_std;
  doc["check_invariants"] = check_invariants;
  return doc;
}

ScenarioConfig config_from_json(const json& doc, const std::string& base_dir) {
  ScenarioConfig config;
  config.name = doc.value("name", std::string("scenario"));

  if (!doc.contains("network")) {
    throw std::invalid_argument("config needs a 'network' (path or inline document)");
  }
  if (doc["network"].is_string()) {
    config.network_path = doc["network"].get<std::string>();
    std::filesystem::path path(config.network_path);
    if (path.is_relative() && !base_dir.empty()) {
      path = std::filesystem::path(base_dir) / path;
    }
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open network file '" + path.string() + "'");
    config.network_json = json::parse(in);
  } else {
    config.network_json = doc["network"];
  }
  config.network = net::build_network(config.network_json.dump());

  if (doc.contains("demand")) {
    const json& demand_doc = doc["demand"];
    for (const auto& e : demand_doc.value("entries", json::array())) {
      sim::DemandProfile::Entry entry;
      const std::string link_id = e.at("link").get<std::string>();
      entry.link = config.network.link_index(link_id);
      if (entry.link == net::kNone) {
        throw std::invalid_argument("demand entry references unknown link '" + link_id + "'");
      }
      if (e.contains("rate_vph")) {
        entry.segments.push_back({0.0, e["rate_vph"].get<double>()});
      }
      for (const auto& seg : e.value("segments", json::array())) {
        entry.segments.push_back(
            {seg.at("t_start").get<double>(), seg.at("rate_vph").get<double>()});
      }
      config.demand.entries.push_back(std::move(entry));
    }
    for (const auto& t : demand_doc.value("turning", json::array())) {
      sim::TurningTable table;
      const std::string from_id = t.at("from").get<std::string>();
      table.from_link = config.network.link_index(from_id);
      if (table.from_link == net::kNone) {
        throw std::invalid_argument("turning table references unknown link '" + from_id + "'");
      }
      for (const auto& [to_id, p] : t.at("ratios").items()) {
        const net::Index to = config.network.link_index(to_id);
        if (to == net::kNone) {
          throw std::invalid_argument("turning ratio references unknown link '" + to_id + "'");
        }
        table.branches.emplace_back(to, p.get<double>());
      }
      std::sort(table.branches.begin(), table.branches.end());
      config.demand.turnings.push_back(std::move(table));
    }
  }

  if (doc.contains("controllers")) {
    const json& controllers = doc["controllers"];
    if (controllers.contains("default")) {
      config.default_controller =
          parse_controller_spec(controllers["default"], config.default_controller);
    }
    for (const auto& o : controllers.value("overrides", json::array())) {
      const std::string id = o.at("intersection").get<std::string>();
      if (config.network.intersection_index(id) == net::kNone) {
        throw std::invalid_argument("controller override references unknown intersection '" +
                                    id + "'");
      }
      config.controller_overrides.emplace_back(
          id, parse_controller_spec(o, config.default_controller));
    }
  }

  config.report_interval_s = doc.value("report_interval_s", config.report_interval_s);
  if (doc.contains("estimator")) {
    const json& e = doc["estimator"];
    config.estimator.sigma = e.value("sigma_m", config.estimator.sigma);
    if (e.contains("tau_s")) {
      config.estimator.tau = e["tau_s"].get<double>();
      config.tau_explicit = true;
    }
    config.estimator.horizon = e.value("horizon_s", config.estimator.horizon);
    if (e.contains("free_flow")) {
      config.estimator.free_flow_speed = parse_speed_field(e["free_flow"]);
    }
    if (e.contains("shockwave")) {
      config.estimator.shockwave_speed = parse_speed_field(e["shockwave"]);
    }
    if (e.contains("jam_density")) {
      config.estimator.jam_density = parse_density_field(e["jam_density"]);
    }
    config.estimator.z_floor = e.value("z_floor", config.estimator.z_floor);
  }
  if (!config.tau_explicit) config.estimator.tau = config.report_interval_s / 2.0;
  config.estimator.validate();

  config.penetration = doc.value("penetration", config.penetration);
  if (doc.contains("seeds")) {
    config.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
  }
  config.duration_s = doc.value("duration_s", config.duration_s);
  config.window_s = doc.value("metrics_window_s", config.window_s);
  config.step_s = doc.value("step_s", config.step_s);
  config.count_sample_s = doc.value("count_sample_s", config.count_sample_s);
  config.saturation.sat_flow_vphpl =
      doc.value("saturation_flow_vphpl", config.saturation.sat_flow_vphpl);
  if (doc.contains("stop_threshold")) {
    config.stop_threshold = parse_speed_field(doc["stop_threshold"]);
  }
  config.probe_noise_std = doc.value("probe_noise_std", config.probe_noise_std);
  config.check_invariants = doc.value("check_invariants", config.check_invariants);

  // Fixed-timing plan overrides need phases resolved, so they parse last.
  for (const auto& p : doc.value("fixed_plans", json::array())) {
    const std::string id = p.at("intersection").get<std::string>();
    const net::Index inter_idx = config.network.intersection_index(id);
    if (inter_idx == net::kNone) {
      throw std::invalid_argument("fixed plan references unknown intersection '" + id + "'");
    }
    const net::Intersection& inter =
        config.network.intersections[static_cast<std::size_t>(inter_idx)];
    ctl::FixedTimingPlan plan;
    plan.offset_s = p.value("offset_s", 0.0);
    for (const auto& s : p.at("sequence")) {
      ctl::PhaseTiming timing;
      const std::string phase_id = s.at("phase").get<std::string>();
      timing.phase = net::kNone;
      for (std::size_t i = 0; i < inter.phases.size(); ++i) {
        if (inter.phases[i].id == phase_id) timing.phase = static_cast<net::Index>(i);
      }
      if (timing.phase == net::kNone) {
        throw std::invalid_argument("fixed plan for '" + id + "' references unknown phase '" +
                                    phase_id + "'");
      }
      timing.green_s = s.at("green_s").get<double>();
      timing.lost_s = s.value("lost_s", config.default_controller.slot.lost_s());
      plan.sequence.push_back(timing);
    }
    plan.validate();
    config.fixed_plan_overrides.emplace_back(id, std::move(plan));
  }

  // Eager validation: everything the simulator would reject on day one.
  if (config.penetration < 0.0 || config.penetration > 1.0) {
    throw std::invalid_argument("penetration must be in [0, 1], got " +
                                std::to_string(config.penetration));
  }
  if (config.seeds.empty()) throw std::invalid_argument("config needs at least one seed");
  if (config.window_s > 0.0) {
    const double windows = config.duration_s / config.window_s;
    if (std::abs(windows - std::round(windows)) > 1e-9) {
      throw std::invalid_argument("metrics window (" + std::to_string(config.window_s) +
                                  " s) must divide the duration (" +
                                  std::to_string(config.duration_s) + " s)");
    }
  }
  config.demand.validate(config.network);
  {
    sim::SimParams probe_params;
    probe_params.step_s = config.step_s;
    probe_params.report_interval_s = config.report_interval_s;
    probe_params.penetration = config.penetration;
    probe_params.count_sample_s = config.count_sample_s;
    probe_params.estimator = config.estimator;
    probe_params.validate();
  }
  return config;
}

ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& err) {
    throw std::invalid_argument("config '" + path + "': " + err.what());
  }
  return config_from_json(doc, std::filesystem::path(path).parent_path().string());
}

SweepSpec load_sweep(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open sweep file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& err) {
    throw std::invalid_argument("sweep '" + path + "': " + err.what());
  }
  SweepSpec spec;
  const std::string base_dir = std::filesystem::path(path).parent_path().string();
  if (!doc.contains("base")) throw std::invalid_argument("sweep needs a 'base' scenario");
  if (doc["base"].is_string()) {
    std::filesystem::path base_path(doc["base"].get<std::string>());
    if (base_path.is_relative() && !base_dir.empty()) {
      base_path = std::filesystem::path(base_dir) / base_path;
    }
    spec.base = load_config(base_path.string());
  } else {
    spec.base = config_from_json(doc["base"], base_dir);
  }
  for (const auto& c : doc.value("controllers", json::array())) {
    spec.controllers.push_back(sim::controller_kind_from_name(c.get<std::string>()));
  }
  if (doc.contains("penetrations")) {
    spec.penetrations = doc["penetrations"].get<std::vector<double>>();
    for (double p : spec.penetrations) {
      if (p < 0.0 || p > 1.0) {
        throw std::invalid_argument("sweep penetration must be in [0, 1]");
      }
    }
  }
  if (doc.contains("seeds")) spec.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
  spec.max_runs = doc.value("max_runs", spec.max_runs);
  return spec;
}

namespace {

struct RunRequest {
  std::optional<sim::ControllerKind> kind;
  double penetration = 1.0;
  std::uint64_t seed = 0;
};

std::string controller_label(const ScenarioConfig& config,
                             std::optional<sim::ControllerKind> kind) {
  if (kind) return sim::controller_kind_name(*kind);
  return sim::controller_kind_name(config.default_controller.kind);
}

void append_run(const ScenarioConfig& config, const RunRequest& request,
                const sim::RunResult& result, bool fixed_used, ResultTable& table) {
  const std::string controller = controller_label(config, request.kind);
  for (const auto& window : result.windows) {
    ResultRow row;
    row.scenario = config.name;
    row.controller = controller;
    row.penetration = request.penetration;
    row.seed = request.seed;
    row.window_start = window.start;
    row.window_end = window.end;
    row.avg_delay_s = window.avg_delay_s;
    row.throughput = window.throughput;
    row.max_stopped_queue_m = window.max_stopped_queue_m;
    table.rows.push_back(std::move(row));
  }
  RunSummary summary;
  summary.scenario = config.name;
  summary.controller = controller;
  summary.penetration = request.penetration;
  summary.seed = request.seed;
  summary.mean_delay_s = result.mean_delay_s();
  summary.total_throughput = result.exited;
  summary.peak_queue_m = result.peak_queue_m;
  summary.invariant_violations = result.invariant_violations;
  summary.stale_warnings = result.stale_warnings;
  summary.fixed_timing_used = fixed_used;
  table.summaries.push_back(std::move(summary));
}

} // namespace

ResultTable run_single(const ScenarioConfig& config, std::uint64_t seed,
                       std::ostream* event_log, std::ostream* probe_log) {
  ResultTable table;
  sim::RunConfig run = config.make_run(seed);
  run.event_log = event_log;
  run.probe_log = probe_log;
  const sim::RunResult result = sim::run_scenario(run);
  RunRequest request{std::nullopt, config.penetration, seed};
  append_run(config, request, result, config.default_controller.kind == sim::ControllerKind::kFixed,
             table);
  return table;
}

ResultTable run_sweep(const SweepSpec& spec, int jobs) {
  std::vector<RunRequest> requests;
  const std::vector<std::optional<sim::ControllerKind>> kinds =
      spec.controllers.empty() ? std::vector<std::optional<sim::ControllerKind>>{std::nullopt}
                               : spec.controllers;
  const std::vector<double> penetrations =
      spec.penetrations.empty() ? std::vector<double>{spec.base.penetration} : spec.penetrations;
  const std::vector<std::uint64_t> seeds = spec.seeds.empty() ? spec.base.seeds : spec.seeds;
  for (const auto& kind : kinds) {
    for (double p : penetrations) {
      for (std::uint64_t seed : seeds) {
        requests.push_back(RunRequest{kind, p, seed});
      }
    }
  }
  if (requests.size() > spec.max_runs) {
    throw std::invalid_argument("sweep would launch " + std::to_string(requests.size()) +
                                " runs, above the cap of " + std::to_string(spec.max_runs));
  }

  struct RunOutcome {
    bool ok = true;
    std::string error;
    sim::RunResult result;
    bool fixed_used = false;
  };
  std::vector<RunOutcome> outcomes(requests.size());
  auto execute = [&](std::size_t i) {
    const RunRequest& request = requests[i];
    try {
      sim::RunConfig run = spec.base.make_run(request.seed, request.kind, request.penetration);
      outcomes[i].fixed_used = false;
      for (const auto& assignment : run.controllers) {
        if (assignment.kind == sim::ControllerKind::kFixed) outcomes[i].fixed_used = true;
      }
      outcomes[i].result = sim::run_scenario(run);
    } catch (const std::exception& err) {
      outcomes[i].ok = false;
      outcomes[i].error = err.what();
    }
  };

  if (jobs <= 1) {
    for (std::size_t i = 0; i < requests.size(); ++i) execute(i);
  } else {
    std::size_t next = 0;
    while (next < requests.size()) {
      std::vector<std::future<void>> batch;
      for (int j = 0; j < jobs && next < requests.size(); ++j, ++next) {
        batch.push_back(std::async(std::launch::async, execute, next));
      }
      for (auto& f : batch) f.get();
    }
  }

  ResultTable table;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (outcomes[i].ok) {
      append_run(spec.base, requests[i], outcomes[i].result, outcomes[i].fixed_used, table);
    } else {
      RunSummary summary;
      summary.scenario = spec.base.name;
      summary.controller = controller_label(spec.base, requests[i].kind);
      summary.penetration = requests[i].penetration;
      summary.seed = requests[i].seed;
      summary.ok = false;
      summary.error = outcomes[i].error;
      table.summaries.push_back(std::move(summary));
    }
  }
  return table;
}

} // namespace bpeq::app
