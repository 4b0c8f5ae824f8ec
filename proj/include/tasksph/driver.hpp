#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tasksph/cell_tree.hpp"
#include "tasksph/config.hpp"
#include "tasksph/device_sim.hpp"
#include "tasksph/gresho.hpp"
#include "tasksph/offload.hpp"
#include "tasksph/step_graph.hpp"

namespace tasksph {

struct StepRecord {
  int step = 0;  // 0 is the zero-length start-up pass
  double time = 0.0;
  double dt = 0.0;
  bool rebuilt = false;
  std::int64_t tasks = 0;
  std::array<std::int64_t, kNumTaskTypes> tasks_by_type{};
  std::int64_t graph_build_ns = 0;
  // graph construction plus the delay before the first task starts
  std::int64_t initial_task_management_ns = 0;
  // summed over workers: wall time not spent inside a task
  std::int64_t outside_task_ns = 0;
  std::int64_t wall_ns = 0;
  std::int64_t lock_failures = 0;
  std::int64_t steals = 0;

  std::int64_t newton_iterations = 0;
  std::int64_t max_newton_iterations = 0;  // worst particle, bisection steps included
  std::int64_t bisections = 0;
  double h_closure_max = 0.0;        // max |n h^3 - eta^3| / eta^3
  double h_closure_fraction = 0.0;   // share of particles within tolerance

  double mass = 0.0;
  double momentum_force = 0.0;   // |sum m a|
  double abs_force = 0.0;        // sum m |a|
  double momentum = 0.0;         // |sum m v|
  double abs_momentum = 0.0;     // sum m |v|
  std::int64_t clamped_u = 0;
};

struct RunResult {
  RunConfig config;
  ParticleSystem particles;
  ErrorReport report;
  std::vector<StepRecord> steps;
  std::vector<DeviceTraceRow> trace;
  std::optional<SimTimeline> sim;
  std::array<OffloadLoopStats, kNumLoops> offload{};
  int top_grid = 0;
  double time = 0.0;
};

// Steppable run. Output files are written as steps complete when their paths
// are non-empty.
class Simulation {
 public:
  explicit Simulation(const RunConfig& cfg);
  Simulation(const RunConfig& cfg, ParticleSystem ic);
  ~Simulation();

  // Zero-length pass computing densities and forces of the initial state.
  const StepRecord& startup();
  // One kick-drift-kick step, clipped to the end time.
  const StepRecord& step();
  bool finished() const;
  // Startup (if needed), then steps until finished().
  void run_to_end();
  RunResult finish();

  ParticleSystem& particles() { return ps_; }
  const CellTree& tree() const { return tree_; }
  double time() const { return time_; }
  const std::vector<StepRecord>& steps() const { return steps_; }

 private:
  const StepRecord& advance(double dt);
  bool needs_rebuild() const;
  void rebuild();
  void set_margins(double dt);

  RunConfig cfg_;
  ParticleSystem ps_;
  CellTree tree_;
  SphParams sph_;
  double time_ = 0.0;
  double dt_next_ = 0.0;
  int steps_since_build_ = 0;
  bool started_ = false;
  bool timeline_started_ = false;
  std::int64_t origin_ns_ = 0;
  std::vector<StepRecord> steps_;
  std::vector<DeviceTraceRow> trace_;
  std::array<OffloadLoopStats, kNumLoops> offload_totals_{};
  std::unique_ptr<HostExecutorBackend> backend_;
  std::unique_ptr<OffloadPipeline> pipeline_;
};

RunResult run_simulation(const RunConfig& cfg);

DeviceModel resolve_device_model(const RunConfig& cfg);

// Per-step task counts and overhead accounting next to the task timeline.
void write_steps_csv(const std::string& path, const std::vector<StepRecord>& steps);
std::string steps_csv_path(const std::string& timeline_path);

}  // namespace tasksph
