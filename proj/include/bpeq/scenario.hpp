#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "bpeq/control.hpp"
#include "bpeq/network.hpp"
#include "bpeq/simulation.hpp"

namespace bpeq::app {

struct ControllerSpec {
  sim::ControllerKind kind = sim::ControllerKind::kBpPerfect;
  ctl::ControlSlot slot;
};

// A fully validated scenario: network, demand, controller assignment,
// estimator parameters, penetration, seeds, duration and metrics window.
// Defaults follow the artifact's standard calibration (10 s slots, 10 s
// probe reporting with tau = half the reporting interval, sigma 20 m, 40 s
// horizon, 10 m cells, 60 km/h free flow, 25 km/h shockwave, 143 veh/km jam
// density, 1800 veh/h/lane saturation flow, 0.714 left-turn factor).
struct ScenarioConfig {
  std::string name = "scenario";
  std::string network_path;        // as written in the config; empty if inline
  nlohmann::json network_json;     // the resolved network document
  net::Network network;
  sim::DemandProfile demand;
  ControllerSpec default_controller;
  std::vector<std::pair<std::string, ControllerSpec>> controller_overrides;
  std::vector<std::pair<std::string, ctl::FixedTimingPlan>> fixed_plan_overrides;
  est::EstimatorParams estimator;
  bool tau_explicit = false;  // else tau tracks report_interval_s / 2
  double penetration = 1.0;
  std::vector<std::uint64_t> seeds{1};
  double duration_s = 3600.0;
  double window_s = 600.0;
  double step_s = 0.5;
  double report_interval_s = 10.0;
  double count_sample_s = 10.0;
  ctl::SaturationParams saturation;
  double stop_threshold = kmh_to_ms(5.0);
  double probe_noise_std = 0.0;
  bool check_invariants = true;

  // Effective controller spec for one intersection, after overrides and an
  // optional sweep-axis kind replacement.
  ControllerSpec controller_for(const std::string& intersection_id,
                                std::optional<sim::ControllerKind> kind_override) const;

  // Assembles a runnable configuration. Fixed-timing plans come from explicit
  // overrides or Webster optimization against the mean demand.
  sim::RunConfig make_run(std::uint64_t seed,
                          std::optional<sim::ControllerKind> kind_override = {},
                          std::optional<double> penetration_override = {},
                          bool shadow_compare = false) const;

  nlohmann::json to_json() const;
};

// Loads and validates a scenario config file. Relative network paths resolve
// against the config file's directory.
ScenarioConfig load_config(const std::string& path);
ScenarioConfig config_from_json(const nlohmann::json& doc, const std::string& base_dir);

struct SweepSpec {
  ScenarioConfig base;
  std::vector<std::optional<sim::ControllerKind>> controllers;  // empty = config as-is
  std::vector<double> penetrations;                             // empty = config value
  std::vector<std::uint64_t> seeds;                             // empty = config seeds
  std::size_t max_runs = 1024;
};

SweepSpec load_sweep(const std::string& path);

// One (controller, penetration, seed, window) observation.
struct ResultRow {
  std::string scenario;
  std::string controller;
  double penetration = 0.0;
  std::uint64_t seed = 0;
  double window_start = 0.0;
  double window_end = 0.0;
  double avg_delay_s = 0.0;
  long throughput = 0;
  double max_stopped_queue_m = 0.0;
};

struct RunSummary {
  std::string scenario;
  std::string controller;
  double penetration = 0.0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  double mean_delay_s = 0.0;
  long total_throughput = 0;
  double peak_queue_m = 0.0;
  long invariant_violations = 0;
  long stale_warnings = 0;
  bool fixed_timing_used = false;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<RunSummary> summaries;
};

ResultTable run_single(const ScenarioConfig& config, std::uint64_t seed,
                       std::ostream* event_log = nullptr, std::ostream* probe_log = nullptr);

// Runs every (controller, penetration, seed) combination; failures are
// recorded per run and the sweep continues. `jobs` > 1 dispatches runs
// concurrently; output order is independent of scheduling.
ResultTable run_sweep(const SweepSpec& spec, int jobs = 1);

enum class ReportFormat { kCsv, kJsonl };

// Persisted raw results; `report` consumes these.
void write_results_jsonl(const ResultTable& results, const std::string& path);
ResultTable read_results_jsonl(const std::string& path);

// Per-metric CSVs (window_start, controller, penetration, seed, value), a
// long-format file, and a ranking summary. Throws on empty results.
void emit_report(const ResultTable& results, const std::string& out_dir, ReportFormat format);

} // namespace bpeq::app
