#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "bpeq/fixtures.hpp"
#include "bpeq/scenario.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitRunFailure = 2;
constexpr int kExitReportFailure = 3;

namespace fs = std::filesystem;
namespace est = bpeq::est;
namespace net = bpeq::net;
using bpeq::app::ReportFormat;
using bpeq::app::ResultTable;
using bpeq::app::ScenarioConfig;

std::string default_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("BPEQ_OUT_DIR")) return env;
  return "out";
}

ReportFormat parse_format(const std::string& name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "jsonl") return ReportFormat::kJsonl;
  throw CLI::ValidationError("--format must be csv or jsonl");
}

void apply_overrides(ScenarioConfig& config, const std::optional<double>& penetration,
                     const std::optional<std::string>& controller,
                     const std::optional<double>& duration) {
  if (penetration) {
    if (*penetration < 0.0 || *penetration > 1.0) {
      throw std::invalid_argument("--penetration must be in [0, 1]");
    }
    config.penetration = *penetration;
  }
  if (controller) {
    config.default_controller.kind = bpeq::sim::controller_kind_from_name(*controller);
    config.controller_overrides.clear();
  }
  if (duration) {
    config.duration_s = *duration;
    const double windows = config.duration_s / config.window_s;
    if (std::abs(windows - std::round(windows)) > 1e-9) {
      throw std::invalid_argument("--duration must be a multiple of the metrics window");
    }
  }
}

void write_metrics_csv(const ResultTable& results, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "window_start,window_end,controller,penetration,seed,delay_s,throughput,max_queue_m\n";
  char buffer[256];
  for (const auto& row : results.rows) {
    std::snprintf(buffer, sizeof(buffer), "%.3f,%.3f,%s,%.4f,%llu,%.6f,%ld,%.6f",
                  row.window_start, row.window_end, row.controller.c_str(), row.penetration,
                  static_cast<unsigned long long>(row.seed), row.avg_delay_s, row.throughput,
                  row.max_stopped_queue_m);
    out << buffer << '\n';
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Traffic-network simulator with backpressure signal control from "
               "probe-estimated queues"};
  app.require_subcommand(1);

  std::string config_path;
  std::string sweep_path;
  std::string out_dir_flag;
  std::string format_name = "csv";
  std::string results_path;
  std::string probe_log_path;
  std::string link_id;
  std::optional<double> penetration;
  std::optional<std::string> controller;
  std::optional<double> duration;
  std::optional<std::uint64_t> seed;
  std::vector<double> eval_times;
  int jobs = 1;
  bool log_events = false;
  bool log_probes = false;

  auto* validate_cmd = app.add_subcommand("validate", "Validate a scenario config and network");
  validate_cmd->add_option("--config", config_path, "Scenario config file")->required();

  auto* run_cmd = app.add_subcommand("run", "Run a single scenario");
  run_cmd->add_option("--config", config_path, "Scenario config file")->required();
  run_cmd->add_option("--seed", seed, "Seed (default: first seed in config)");
  run_cmd->add_option("--out-dir", out_dir_flag, "Output directory (or $BPEQ_OUT_DIR)");
  run_cmd->add_option("--penetration", penetration, "Override connected-vehicle penetration");
  run_cmd->add_option("--controller", controller,
                      "Override controller kind (bp_perfect|bp_eq|fixed)");
  run_cmd->add_option("--duration", duration, "Override duration in seconds");
  run_cmd->add_option("--format", format_name, "Report format: csv or jsonl");
  run_cmd->add_flag("--log-events", log_events, "Write events.log");
  run_cmd->add_flag("--log-probes", log_probes, "Write probes.csv");

  auto* sweep_cmd = app.add_subcommand("sweep", "Run a sweep over controllers/penetrations/seeds");
  sweep_cmd->add_option("--sweep", sweep_path, "Sweep spec file")->required();
  sweep_cmd->add_option("--out-dir", out_dir_flag, "Output directory (or $BPEQ_OUT_DIR)");
  sweep_cmd->add_option("--format", format_name, "Report format: csv or jsonl");
  sweep_cmd->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  auto* report_cmd = app.add_subcommand("report", "Emit CSV/JSONL reports from stored results");
  report_cmd->add_option("--results", results_path, "results.jsonl (default: <out-dir>/results.jsonl)");
  report_cmd->add_option("--out-dir", out_dir_flag, "Output directory (or $BPEQ_OUT_DIR)");
  report_cmd->add_option("--format", format_name, "Report format: csv or jsonl");

  auto* replay_cmd = app.add_subcommand(
      "replay-estimate", "Run the queue estimation pipeline offline over a probe log");
  replay_cmd->add_option("--config", config_path, "Scenario config file (network + estimator)")
      ->required();
  replay_cmd->add_option("--probe-log", probe_log_path, "Probe log (vehicle,lane,x,t,v)")
      ->required();
  replay_cmd->add_option("--at", eval_times, "Evaluation times (default: end of log)");
  replay_cmd->add_option("--link", link_id, "Restrict output to one link");
  replay_cmd->add_option("--out-dir", out_dir_flag, "Output directory (or $BPEQ_OUT_DIR)");

  auto* fixtures_cmd = app.add_subcommand("fixtures", "Write the bundled reference scenarios");
  fixtures_cmd->add_option("--out-dir", out_dir_flag, "Output directory (or $BPEQ_OUT_DIR)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate_cmd->parsed()) {
      try {
        const ScenarioConfig config = bpeq::app::load_config(config_path);
        std::cout << "ok: scenario '" << config.name << "', "
                  << config.network.links.size() << " links, "
                  << config.network.intersections.size() << " intersections\n";
        return kExitOk;
      } catch (const std::exception& err) {
        std::cerr << "invalid: " << err.what() << '\n';
        return kExitConfigError;
      }
    }

    if (run_cmd->parsed()) {
      ScenarioConfig config;
      try {
        config = bpeq::app::load_config(config_path);
        apply_overrides(config, penetration, controller, duration);
      } catch (const std::exception& err) {
        std::cerr << "config error: " << err.what() << '\n';
        return kExitConfigError;
      }
      const fs::path out_dir = default_out_dir(out_dir_flag);
      try {
        fs::create_directories(out_dir);
        std::ofstream events;
        std::ofstream probes;
        if (log_events) events.open(out_dir / "events.log");
        if (log_probes) probes.open(out_dir / "probes.csv");
        const std::uint64_t run_seed = seed.value_or(config.seeds.front());
        const ResultTable results = bpeq::app::run_single(
            config, run_seed, log_events ? &events : nullptr, log_probes ? &probes : nullptr);
        bpeq::app::write_results_jsonl(results, (out_dir / "results.jsonl").string());
        write_metrics_csv(results, out_dir / "metrics.csv");
        bpeq::app::emit_report(results, out_dir.string(), parse_format(format_name));
        for (const auto& s : results.summaries) {
          std::cout << s.controller << " p=" << s.penetration << " seed=" << s.seed
                    << " mean_delay_s=" << s.mean_delay_s << " throughput=" << s.total_throughput
                    << " peak_queue_m=" << s.peak_queue_m << '\n';
          if (s.invariant_violations > 0) {
            std::cerr << "warning: " << s.invariant_violations << " invariant violations\n";
          }
        }
        return kExitOk;
      } catch (const std::exception& err) {
        std::cerr << "run failed: " << err.what() << '\n';
        return kExitRunFailure;
      }
    }

    if (sweep_cmd->parsed()) {
      bpeq::app::SweepSpec spec;
      try {
        spec = bpeq::app::load_sweep(sweep_path);
      } catch (const std::exception& err) {
        std::cerr << "config error: " << err.what() << '\n';
        return kExitConfigError;
      }
      const fs::path out_dir = default_out_dir(out_dir_flag);
      try {
        fs::create_directories(out_dir);
        const ResultTable results = bpeq::app::run_sweep(spec, jobs);
        bpeq::app::write_results_jsonl(results, (out_dir / "results.jsonl").string());
        bpeq::app::emit_report(results, out_dir.string(), parse_format(format_name));
        long failures = 0;
        for (const auto& s : results.summaries) {
          if (!s.ok) {
            ++failures;
            std::cerr << "run failed: " << s.controller << " p=" << s.penetration
                      << " seed=" << s.seed << ": " << s.error << '\n';
          }
        }
        std::cout << results.summaries.size() << " runs, " << failures << " failed; results in "
                  << out_dir.string() << '\n';
        return failures == 0 ? kExitOk : kExitRunFailure;
      } catch (const std::exception& err) {
        std::cerr << "sweep failed: " << err.what() << '\n';
        return kExitRunFailure;
      }
    }

    if (report_cmd->parsed()) {
      const fs::path out_dir = default_out_dir(out_dir_flag);
      try {
        const std::string in_path =
            results_path.empty() ? (out_dir / "results.jsonl").string() : results_path;
        const ResultTable results = bpeq::app::read_results_jsonl(in_path);
        bpeq::app::emit_report(results, out_dir.string(), parse_format(format_name));
        std::cout << "report written to " << out_dir.string() << '\n';
        return kExitOk;
      } catch (const std::exception& err) {
        std::cerr << "report failed: " << err.what() << '\n';
        return kExitReportFailure;
      }
    }

    if (replay_cmd->parsed()) {
      ScenarioConfig config;
      try {
        config = bpeq::app::load_config(config_path);
      } catch (const std::exception& err) {
        std::cerr << "config error: " << err.what() << '\n';
        return kExitConfigError;
      }
      try {
        std::ifstream in(probe_log_path);
        if (!in) throw std::runtime_error("cannot open probe log '" + probe_log_path + "'");
        const auto readings = bpeq::est::read_probe_log(in, config.network);
        bpeq::est::ProbeHistory history(config.network.lanes.size());
        history.ingest_batch(readings, readings.empty() ? 0.0 : readings.back().time);

        std::vector<double> times = eval_times;
        if (times.empty()) times.push_back(readings.empty() ? 0.0 : readings.back().time);

        const fs::path out_dir = default_out_dir(out_dir_flag);
        fs::create_directories(out_dir);
        std::ofstream field_out(out_dir / "cell_field.csv");
        std::ofstream queue_out(out_dir / "link_queues.csv");
        field_out << "t,link,lane,cell,x_m,speed_ms,density_veh_m\n";
        queue_out << "t,link,queue_veh\n";
        char buffer[256];
        for (double t : times) {
          est::ProbeHistory pruned = history;
          pruned.prune(t, config.estimator.horizon);
          const est::CellField field =
              est::estimate_cell_field(config.network, pruned, t, config.estimator);
          for (std::size_t li = 0; li < config.network.links.size(); ++li) {
            const auto& link = config.network.links[li];
            if (!link_id.empty() && link.id != link_id) continue;
            for (net::Index lane_idx : link.lanes) {
              const auto& lane = config.network.lanes[static_cast<std::size_t>(lane_idx)];
              for (std::size_t c = 0; c < lane.cells.size(); ++c) {
                const auto& cell = field.lanes[static_cast<std::size_t>(lane_idx)][c];
                std::snprintf(buffer, sizeof(buffer), "%.3f,%s,%s,%zu,%.2f,%.6f,%.8f", t,
                              link.id.c_str(), lane.id.c_str(), c, lane.cells[c].center,
                              cell.speed, cell.density);
                field_out << buffer << '\n';
              }
            }
            std::snprintf(buffer, sizeof(buffer), "%.3f,%s,%.6f", t, link.id.c_str(),
                          est::link_queue(config.network, static_cast<net::Index>(li), field));
            queue_out << buffer << '\n';
          }
        }
        std::cout << "cell field and link queues written to " << out_dir.string() << '\n';
        return kExitOk;
      } catch (const std::exception& err) {
        std::cerr << "replay failed: " << err.what() << '\n';
        return kExitRunFailure;
      }
    }

    if (fixtures_cmd->parsed()) {
      const fs::path out_dir = default_out_dir(out_dir_flag);
      bpeq::app::write_fixtures(out_dir.string());
      std::cout << "fixtures written to " << out_dir.string() << '\n';
      return kExitOk;
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitRunFailure;
  }
  return kExitOk;
}
