#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tasksph/common.hpp"

namespace tasksph {

enum class TaskType : std::uint8_t {
  self,
  pair,
  sub_self,
  sub_pair,
  sort,
  ghost,
  extra_ghost,
  kick,
  drift,
  timestep,
  pack,
  unpack_implicit,
};

enum class TaskSubtype : std::uint8_t { none, density, gradient, force };

const char* to_string(TaskType t);
const char* to_string(TaskSubtype s);
TaskSubtype subtype_of(LoopKind k);

struct Task {
  TaskType type = TaskType::self;
  TaskSubtype subtype = TaskSubtype::none;
  std::vector<int> cells;       // target cells, reported in the timeline
  std::vector<int> locks;       // ascending, unique
  std::vector<int> dependents;
  bool implicit = false;        // completed by a hook, never queued
  std::int64_t payload = -1;    // owner-defined index

  int worker = -1;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
  int times_run = 0;
};

// Monotonic nanoseconds shared by every worker.
std::int64_t now_ns();

struct RunStats {
  std::int64_t t_begin = 0;        // run() entry
  std::int64_t t_first_start = 0;  // first task start
  std::int64_t t_end = 0;          // last worker exit
  std::vector<std::int64_t> busy_ns;  // per worker, time inside tasks
  std::vector<std::int64_t> executed;  // per worker
  std::int64_t lock_failures = 0;
  std::int64_t steals = 0;
};

class Scheduler {
 public:
  struct Hooks {
    std::function<void(Task&, int worker)> execute;
    // Runs after a task's locks are released and its dependents unlocked.
    std::function<void(int worker)> after_task;
    // Called when a worker finds no task; returns true if it made progress.
    std::function<bool(int worker)> idle;
    // True while work outside the queues (e.g. staged offload tasks) is pending.
    std::function<bool()> outstanding;
  };

  struct Options {
    int workers = 1;
    // Queue for tasks that are ready at start; round-robin when empty.
    std::function<int(int task)> initial_queue;
  };

  int add_task(TaskType type, TaskSubtype subtype, std::vector<int> cells, std::vector<int> locks,
               bool implicit = false, std::int64_t payload = -1);
  void add_dependency(int before, int after);
  void set_num_locks(int n) { num_locks_ = n; }
  int num_locks() const { return num_locks_; }

  // Throws UsageError listing a cycle if the graph is not acyclic.
  void check_acyclic() const;
  std::optional<std::vector<int>> find_cycle() const;

  RunStats run(const Options& opt, const Hooks& hooks);

  // Completion of an implicit task from inside a hook running on `worker`.
  void complete_implicit(int task, int worker, std::int64_t t_start, std::int64_t t_end);

  // --- exposed for tests and instrumentation ---
  void prepare(int workers);
  void enqueue(int task, int worker);
  std::optional<int> pop(int worker);
  std::optional<int> steal(int worker);
  std::size_t queue_size(int worker) const;
  bool acquire_locks(const Task& t);
  void release_locks(const Task& t);
  // Blocking acquisition in ascending order (used by unpacking workers).
  void lock_blocking(const std::vector<int>& ids);
  void unlock(const std::vector<int>& ids);

  std::vector<Task> tasks;

 private:
  struct Queue {
    mutable std::mutex m;
    std::deque<int> q;
    std::atomic<std::size_t> size{0};
  };

  void worker_loop(int w, const Hooks& hooks, RunStats& stats);
  void finish(int task);
  void place(int task);

  int num_locks_ = 0;
  std::vector<std::unique_ptr<Queue>> queues_;
  std::unique_ptr<std::atomic<int>[]> wait_;
  std::unique_ptr<std::atomic<bool>[]> locks_;
  std::atomic<std::int64_t> pending_{0};
  std::atomic<std::int64_t> in_flight_{0};
  std::atomic<std::int64_t> completed_{0};
  std::atomic<int> in_hook_{0};
  std::atomic<std::uint64_t> rr_{0};
  std::atomic<bool> abort_{false};
  std::atomic<std::int64_t> first_start_{0};
  std::atomic<std::int64_t> lock_failures_{0};
  std::atomic<std::int64_t> steals_{0};
  std::mutex error_m_;
  std::exception_ptr error_;
  std::string deadlock_dump_;
};

// Timeline CSV: worker,task_type,subtype,cell_ids,t_start_ns,t_end_ns
void write_timeline_csv(const std::string& path, const std::vector<const Task*>& tasks, std::int64_t origin_ns,
                        bool append = false);

}  // namespace tasksph
