#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <vector>

#include "tasksph/cell_tree.hpp"
#include "tasksph/ghost.hpp"
#include "tasksph/offload.hpp"
#include "tasksph/particles.hpp"
#include "tasksph/scheduler.hpp"
#include "tasksph/sph_loops.hpp"

namespace tasksph {

enum class ExecMode { cpu, offload };

inline constexpr int kNumTaskTypes = 12;

// One time step's task graph. Interaction tasks (and pack tasks) keep their
// cell-level visits in `visits`, indexed by Task::payload.
struct StepGraph {
  ExecMode mode = ExecMode::cpu;
  Scheduler sched;
  std::vector<std::vector<Visit>> visits;
  std::vector<int> unpack_of;                // pack task -> its implicit unpack task
  std::vector<std::vector<int>> recursed;    // per top cell: subtree cells the plan descended through
  std::size_t max_visit_records = 0;
  std::int64_t build_ns = 0;

  std::array<std::int64_t, kNumTaskTypes> count_by_type() const;
  std::int64_t num_tasks() const { return std::int64_t(sched.tasks.size()); }
};

// Tasks per non-empty top-level cell: drift, sort (cpu mode, when needed),
// self + 13 pairs per loop (or one pack and one unpack per visit), ghost,
// extra_ghost, kick, timestep.
std::unique_ptr<StepGraph> build_step_graph(const CellTree& tree, ExecMode mode);

struct StepContext {
  ParticleSystem* ps = nullptr;
  CellTree* tree = nullptr;
  GhostParams ghost;
  SphParams sph;
  bool use_sorts = true;
  OffloadPipeline* offload = nullptr;
  double dt = 0.0;  // 0 on the start-up pass

  GhostStats ghost_stats;
  LoopStats loop_stats[kNumLoops];
  std::atomic<std::int64_t> clamped_u{0};
  std::vector<double> dt_top;  // per top cell, filled by the timestep tasks
};

struct StepResult {
  RunStats run;
  double dt_next = 0.0;
};

// Execute the graph on `workers` threads and reduce the next time step.
StepResult run_step(StepGraph& g, StepContext& ctx, int workers);

}  // namespace tasksph
