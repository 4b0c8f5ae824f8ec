#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tasksph/offload.hpp"

namespace tasksph {

struct DeviceModel {
  std::string name = "custom";
  double h2d_bandwidth = 50e9;  // bytes/s
  double d2h_bandwidth = 50e9;
  int h2d_engines = 1;
  int d2h_engines = 1;
  int kernel_slots = 1;
  double launch_overhead = 1e-6;    // s per kernel
  double per_interaction = 3e-11;   // s per pair evaluation
  double per_particle = 1e-10;      // s per particle record
  double latency = 1e-7;            // s per copy
  // A worker's next flush is released when its previous one completes in
  // simulated time, plus the host time the real run spent in between.
  bool closed_loop = true;

  void validate() const;
};

// "nvlink-like" or "pcie4-like".
DeviceModel device_preset(const std::string& name);
// key = value file; keys are the field names above, `preset` selects a base.
DeviceModel load_device_model(const std::string& path);

enum class SimResource { none, h2d, d2h, kernel };
const char* to_string(SimResource r);

struct SimOp {
  int row = 0;  // index into the input trace
  int worker = 0, stream = 0, flush = 0, bundle = 0;
  DeviceOpKind kind = DeviceOpKind::event;
  LoopKind loop = LoopKind::density;
  SimResource resource = SimResource::none;
  int unit = 0;
  double t_start = 0.0, t_end = 0.0;  // seconds from the first submission
};

struct SimTimeline {
  std::vector<SimOp> ops;  // in the order they were scheduled
  double makespan = 0.0;
  double busy_h2d = 0.0, busy_d2h = 0.0, busy_kernel = 0.0;
  double overlap = 0.0;
};

std::vector<DeviceTraceRow> read_device_trace(const std::string& path);
SimTimeline simulate(const std::vector<DeviceTraceRow>& trace, const DeviceModel& model);
double overlap_fraction(const SimTimeline& tl);

void write_sim_timeline(const std::string& path, const SimTimeline& tl);
void write_sim_metrics(const std::string& path, const SimTimeline& tl, const DeviceModel& model);

// Merge the bundles of each flush into groups of S_b tasks (per task kind)
// and lay them onto `pool` streams per worker. The input should have been
// recorded with one task per bundle so that every grouping is exact.
std::vector<DeviceTraceRow> rebundle_trace(const std::vector<DeviceTraceRow>& trace, int sb_self, int sb_pair,
                                           int pool);

struct SweepRow {
  int sp = 0, sb = 0;
  double makespan = 0.0;
  double overlap = 0.0;
};
using TraceGenerator = std::function<std::vector<DeviceTraceRow>(int sp, int sb)>;
std::vector<SweepRow> sweep(const TraceGenerator& gen, const std::vector<int>& sp_list,
                            const std::vector<int>& sb_list, const DeviceModel& model);
// CSV rows plus trailing '#' lines describing makespan monotonicity in S_b.
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

}  // namespace tasksph
