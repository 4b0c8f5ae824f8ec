// Gresho-Chan vortex runner.
#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "tasksph/driver.hpp"

namespace {

void setup_logging() {
  const char* env = std::getenv("TASKSPH_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else spdlog::set_level(spdlog::level::info);
  spdlog::set_pattern("[%l] %v");
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Task-parallel SPH solver on the Gresho-Chan vortex"};

  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::optional<int> resolution, workers, sp_self, sb_self, sp_pair, sb_pair, seed;
  std::optional<double> t_end;
  std::optional<std::string> mode, snapshot_out, timeline_out, trace_out, report_out;
  std::vector<std::string> device_model;
  std::vector<std::string> sets;

  app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--resolution", resolution, "particles per dimension");
  app.add_option("--mode", mode, "cpu, offload-host or offload-trace")
      ->check(CLI::IsMember({"cpu", "offload-host", "offload-trace"}));
  app.add_option("--workers", workers, "worker threads");
  app.add_option("--sp-self", sp_self, "pack size for self tasks");
  app.add_option("--sb-self", sb_self, "bundle size for self tasks");
  app.add_option("--sp-pair", sp_pair, "pack size for pair tasks");
  app.add_option("--sb-pair", sb_pair, "bundle size for pair tasks");
  app.add_option("--t-end", t_end, "end time");
  app.add_option("--snapshot-out", snapshot_out, "final particle snapshot");
  app.add_option("--timeline-out", timeline_out, "task timeline CSV (per-step summary goes next to it)");
  app.add_option("--trace-out", trace_out, "device operation trace CSV");
  app.add_option("--report-out", report_out, "radial error report");
  app.add_option("--device-model", device_model, "nvlink-like, pcie4-like or 'custom PATH'")->expected(1, 2);
  app.add_option("--seed", seed, "random seed (lattice jitter)");
  app.add_option("--set", sets, "extra key=value setting, repeatable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    auto add = [&](const char* key, const auto& v) {
      if (v) overrides.emplace_back(key, fmt::format("{}", *v));
    };
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw tasksph::ConfigError(fmt::format("--set expects key=value, got '{}'", s));
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    add("resolution", resolution);
    add("mode", mode);
    add("workers", workers);
    add("sp_self", sp_self);
    add("sb_self", sb_self);
    add("sp_pair", sp_pair);
    add("sb_pair", sb_pair);
    add("t_end", t_end);
    add("seed", seed);
    add("snapshot_out", snapshot_out);
    add("timeline_out", timeline_out);
    add("trace_out", trace_out);
    add("report_out", report_out);
    if (!device_model.empty()) {
      if (device_model[0] == "custom") {
        if (device_model.size() != 2) throw tasksph::ConfigError("--device-model custom needs a file path");
        overrides.emplace_back("device_model_file", device_model[1]);
      } else {
        if (device_model.size() != 1) throw tasksph::ConfigError("--device-model takes one preset name");
        overrides.emplace_back("device_model", device_model[0]);
      }
    }

    const tasksph::RunConfig cfg = tasksph::parse_config(config_path, overrides);
    spdlog::info("{}^3 particles, mode {}, {} workers, t_end {}", cfg.ic.resolution, tasksph::to_string(cfg.mode),
                 cfg.workers, cfg.t_end);
    const tasksph::RunResult r = tasksph::run_simulation(cfg);

    const auto& last = r.steps.back();
    fmt::print("steps={} time={:.6g} l1_v_theta={:.6g} plateau_p={:.6g} plateau_rel={:.4g} tasks_last_step={}\n",
               r.steps.size() - 1, r.time, r.report.l1_v, r.report.plateau_p, r.report.plateau_rel, last.tasks);
    if (r.sim) fmt::print("device_makespan={:.6e} overlap_fraction={:.4f}\n", r.sim->makespan, r.sim->overlap);
    return 0;
  } catch (const tasksph::Error& e) {
    spdlog::error("{}", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return 3;
  }
}
