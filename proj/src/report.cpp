#include "bpeq/scenario.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace bpeq::app {

using nlohmann::json;

namespace {

std::string fmt(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.6f", value);
  return buffer;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

void write_metric_csv(const ResultTable& results, const std::filesystem::path& path,
                      const char* metric) {
  auto out = open_out(path);
  out << "window_start,controller,penetration,seed,value\n";
  for (const auto& row : results.rows) {
    double value = 0.0;
    if (std::string_view(metric) == "delay") value = row.avg_delay_s;
    if (std::string_view(metric) == "throughput") value = static_cast<double>(row.throughput);
    if (std::string_view(metric) == "max_queue") value = row.max_stopped_queue_m;
    out << fmt(row.window_start) << ',' << row.controller << ',' << fmt(row.penetration) << ','
        << row.seed << ',' << fmt(value) << '\n';
  }
}

struct GroupKey {
  std::string scenario;
  std::string controller;
  double penetration;
  bool operator<(const GroupKey& other) const {
    if (scenario != other.scenario) return scenario < other.scenario;
    if (controller != other.controller) return controller < other.controller;
    return penetration < other.penetration;
  }
};

} // namespace

void write_results_jsonl(const ResultTable& results, const std::string& path) {
  auto out = open_out(path);
  for (const auto& row : results.rows) {
    json j{{"type", "window"},
           {"scenario", row.scenario},
           {"controller", row.controller},
           {"penetration", row.penetration},
           {"seed", row.seed},
           {"window_start", row.window_start},
           {"window_end", row.window_end},
           {"delay", row.avg_delay_s},
           {"throughput", row.throughput},
           {"max_queue_m", row.max_stopped_queue_m}};
    out << j.dump() << '\n';
  }
  for (const auto& s : results.summaries) {
    json j{{"type", "summary"},
           {"scenario", s.scenario},
           {"controller", s.controller},
           {"penetration", s.penetration},
           {"seed", s.seed},
           {"ok", s.ok},
           {"error", s.error},
           {"mean_delay", s.mean_delay_s},
           {"total_throughput", s.total_throughput},
           {"peak_queue_m", s.peak_queue_m},
           {"invariant_violations", s.invariant_violations},
           {"stale_warnings", s.stale_warnings},
           {"fixed_timing_used", s.fixed_timing_used}};
    out << j.dump() << '\n';
  }
}

ResultTable read_results_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results file '" + path + "'");
  ResultTable table;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.at("type") == "window") {
      ResultRow row;
      row.scenario = j.at("scenario").get<std::string>();
      row.controller = j.at("controller").get<std::string>();
      row.penetration = j.at("penetration").get<double>();
      row.seed = j.at("seed").get<std::uint64_t>();
      row.window_start = j.at("window_start").get<double>();
      row.window_end = j.at("window_end").get<double>();
      row.avg_delay_s = j.at("delay").get<double>();
      row.throughput = j.at("throughput").get<long>();
      row.max_stopped_queue_m = j.at("max_queue_m").get<double>();
      table.rows.push_back(std::move(row));
    } else {
      RunSummary s;
      s.scenario = j.at("scenario").get<std::string>();
      s.controller = j.at("controller").get<std::string>();
      s.penetration = j.at("penetration").get<double>();
      s.seed = j.at("seed").get<std::uint64_t>();
      s.ok = j.at("ok").get<bool>();
      s.error = j.at("error").get<std::string>();
      s.mean_delay_s = j.at("mean_delay").get<double>();
      s.total_throughput = j.at("total_throughput").get<long>();
      s.peak_queue_m = j.at("peak_queue_m").get<double>();
      s.invariant_violations = j.at("invariant_violations").get<long>();
      s.stale_warnings = j.at("stale_warnings").get<long>();
      s.fixed_timing_used = j.value("fixed_timing_used", false);
      table.summaries.push_back(std::move(s));
    }
  }
  return table;
}

void emit_report(const ResultTable& results, const std::string& out_dir, ReportFormat format) {
  if (results.rows.empty() && results.summaries.empty()) {
    throw std::runtime_error("nothing to report");
  }
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);

  if (format == ReportFormat::kCsv) {
    write_metric_csv(results, dir / "delay.csv", "delay");
    write_metric_csv(results, dir / "throughput.csv", "throughput");
    write_metric_csv(results, dir / "max_queue.csv", "max_queue");
  }

  {
    // Plot-ready long format: one observation per line.
    if (format == ReportFormat::kCsv) {
      auto out = open_out(dir / "long.csv");
      out << "scenario,controller,penetration,seed,window_start,metric,value\n";
      for (const auto& row : results.rows) {
        const std::pair<const char*, double> metrics[] = {
            {"delay", row.avg_delay_s},
            {"throughput", static_cast<double>(row.throughput)},
            {"max_queue_m", row.max_stopped_queue_m}};
        for (const auto& [metric, value] : metrics) {
          out << row.scenario << ',' << row.controller << ',' << fmt(row.penetration) << ','
              << row.seed << ',' << fmt(row.window_start) << ',' << metric << ',' << fmt(value)
              << '\n';
        }
      }
    } else {
      auto out = open_out(dir / "long.jsonl");
      for (const auto& row : results.rows) {
        json j{{"scenario", row.scenario},     {"controller", row.controller},
               {"penetration", row.penetration}, {"seed", row.seed},
               {"window_start", row.window_start}, {"delay", row.avg_delay_s},
               {"throughput", row.throughput},  {"max_queue_m", row.max_stopped_queue_m}};
        out << j.dump() << '\n';
      }
    }
  }

  // Ranking summary: controllers ordered by mean delay within each scenario.
  auto out = open_out(dir / "summary.txt");
  struct Aggregate {
    double delay_sum = 0.0;
    long delay_n = 0;
    long throughput = 0;
    double peak_queue = 0.0;
    long failures = 0;
    bool fixed_used = false;
  };
  std::map<std::string, std::map<GroupKey, Aggregate>> scenarios;
  for (const auto& s : results.summaries) {
    Aggregate& agg = scenarios[s.scenario][GroupKey{s.scenario, s.controller, s.penetration}];
    if (!s.ok) {
      ++agg.failures;
      continue;
    }
    agg.delay_sum += s.mean_delay_s;
    agg.delay_n += 1;
    agg.throughput += s.total_throughput;
    agg.peak_queue = std::max(agg.peak_queue, s.peak_queue_m);
    agg.fixed_used |= s.fixed_timing_used;
  }
  for (const auto& [scenario, groups] : scenarios) {
    out << "scenario: " << scenario << "\n";
    std::vector<std::pair<GroupKey, Aggregate>> ranked(groups.begin(), groups.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      const double da = a.second.delay_n > 0 ? a.second.delay_sum / a.second.delay_n : 1e300;
      const double db = b.second.delay_n > 0 ? b.second.delay_sum / b.second.delay_n : 1e300;
      return da < db;
    });
    int rank = 1;
    bool any_fixed = false;
    for (const auto& [key, agg] : ranked) {
      const double mean_delay = agg.delay_n > 0 ? agg.delay_sum / agg.delay_n : 0.0;
      out << "  " << rank++ << ". " << key.controller << " p=" << fmt(key.penetration)
          << "  mean_delay_s=" << fmt(mean_delay) << "  total_throughput=" << agg.throughput
          << "  peak_queue_m=" << fmt(agg.peak_queue);
      if (agg.failures > 0) out << "  failed_runs=" << agg.failures;
      out << "\n";
      any_fixed |= agg.fixed_used;
    }
    if (any_fixed) {
      out << "  note: fixed-timing plans are Webster allocations with travel-time offsets\n";
    }
    out << "\n";
  }
}

} // namespace bpeq::app
