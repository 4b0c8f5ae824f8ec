#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tasksph/ghost.hpp"
#include "tasksph/gresho.hpp"
#include "tasksph/offload.hpp"

namespace tasksph {

enum class RunMode { cpu, offload_host, offload_trace };
const char* to_string(RunMode m);

struct RunConfig {
  GreshoSetup ic;
  double t_end = 0.05;
  int max_steps = 0;  // 0: no limit
  RunMode mode = RunMode::cpu;
  int workers = 1;
  int device_threads = 2;
  OffloadConfig offload;

  int top_grid = 0;  // 0: max(3, resolution / 8)
  int split_threshold = 64;
  int rebuild_every = 10;
  double rebuild_displacement = 0.25;  // fraction of the smallest leaf width
  double plan_h_factor = 1.1;
  bool use_sorts = true;

  GhostParams physics;
  double beta = 3.0;

  std::string snapshot_out = "tasksph_snapshot.txt";
  std::string timeline_out = "tasksph_timeline.csv";
  std::string trace_out;     // offload modes; default tasksph_trace.csv
  std::string report_out;    // error report; empty: none
  std::string device_model;  // offload-trace only; preset name or model file
  bool device_model_is_file = false;

  int resolved_top_grid() const { return top_grid > 0 ? top_grid : std::max(3, ic.resolution / 8); }
  // Throws ConfigError naming the offending keys.
  void validate() const;
};

using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

// `key = value` lines, '#' comments. Defaults < file < overrides. An empty
// path means defaults only.
RunConfig parse_config(const std::string& path, const ConfigOverrides& overrides = {});
// Every accepted key, in documentation order.
const std::vector<std::string>& config_keys();

}  // namespace tasksph
