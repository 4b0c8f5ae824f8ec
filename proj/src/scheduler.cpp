#include "tasksph/scheduler.hpp"

#include <fmt/format.h>
#include <fmt/os.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <thread>

namespace tasksph {

const char* to_string(TaskType t) {
  switch (t) {
    case TaskType::self: return "self";
    case TaskType::pair: return "pair";
    case TaskType::sub_self: return "sub_self";
    case TaskType::sub_pair: return "sub_pair";
    case TaskType::sort: return "sort";
    case TaskType::ghost: return "ghost";
    case TaskType::extra_ghost: return "extra_ghost";
    case TaskType::kick: return "kick";
    case TaskType::drift: return "drift";
    case TaskType::timestep: return "timestep";
    case TaskType::pack: return "pack";
    case TaskType::unpack_implicit: return "unpack_implicit";
  }
  return "?";
}

const char* to_string(TaskSubtype s) {
  switch (s) {
    case TaskSubtype::none: return "none";
    case TaskSubtype::density: return "density";
    case TaskSubtype::gradient: return "gradient";
    case TaskSubtype::force: return "force";
  }
  return "?";
}

TaskSubtype subtype_of(LoopKind k) {
  switch (k) {
    case LoopKind::density: return TaskSubtype::density;
    case LoopKind::gradient: return TaskSubtype::gradient;
    case LoopKind::force: return TaskSubtype::force;
  }
  return TaskSubtype::none;
}

std::int64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

int Scheduler::add_task(TaskType type, TaskSubtype subtype, std::vector<int> cells, std::vector<int> locks,
                        bool implicit, std::int64_t payload) {
  std::sort(locks.begin(), locks.end());
  locks.erase(std::unique(locks.begin(), locks.end()), locks.end());
  if (!locks.empty()) num_locks_ = std::max(num_locks_, locks.back() + 1);
  Task t;
  t.type = type;
  t.subtype = subtype;
  t.cells = std::move(cells);
  t.locks = std::move(locks);
  t.implicit = implicit;
  t.payload = payload;
  tasks.push_back(std::move(t));
  return int(tasks.size()) - 1;
}

void Scheduler::add_dependency(int before, int after) {
  if (before < 0 || after < 0 || before >= int(tasks.size()) || after >= int(tasks.size()))
    throw UsageError("add_dependency: task id out of range");
  tasks[before].dependents.push_back(after);
}

std::optional<std::vector<int>> Scheduler::find_cycle() const {
  const int n = int(tasks.size());
  std::vector<std::uint8_t> state(n, 0);  // 0 new, 1 on stack, 2 done
  std::vector<int> parent(n, -1);
  for (int root = 0; root < n; ++root) {
    if (state[root]) continue;
    std::vector<std::pair<int, std::size_t>> stack{{root, 0}};
    state[root] = 1;
    while (!stack.empty()) {
      auto& [v, k] = stack.back();
      if (k < tasks[v].dependents.size()) {
        const int d = tasks[v].dependents[k++];
        if (state[d] == 1) {
          std::vector<int> cycle{d};
          for (int x = v; x != d; x = parent[x]) cycle.push_back(x);
          cycle.push_back(d);
          std::reverse(cycle.begin(), cycle.end());
          return cycle;
        }
        if (state[d] == 0) {
          state[d] = 1;
          parent[d] = v;
          stack.emplace_back(d, 0);
        }
      } else {
        state[v] = 2;
        stack.pop_back();
      }
    }
  }
  return std::nullopt;
}

void Scheduler::check_acyclic() const {
  if (auto cycle = find_cycle()) {
    std::string msg = "task graph has a cycle:";
    for (int t : *cycle) msg += fmt::format(" {}({})", t, to_string(tasks[t].type));
    throw UsageError(msg);
  }
}

void Scheduler::prepare(int workers) {
  if (workers < 1) throw UsageError("scheduler needs at least one worker");
  queues_.clear();
  for (int w = 0; w < workers; ++w) queues_.push_back(std::make_unique<Queue>());
  const std::size_t n = tasks.size();
  wait_ = std::make_unique<std::atomic<int>[]>(n);
  for (std::size_t i = 0; i < n; ++i) wait_[i].store(0);
  for (const Task& t : tasks)
    for (int d : t.dependents) wait_[d].fetch_add(1);
  locks_ = std::make_unique<std::atomic<bool>[]>(std::max(num_locks_, 1));
  for (int i = 0; i < std::max(num_locks_, 1); ++i) locks_[i].store(false);
  for (Task& t : tasks) {
    t.worker = -1;
    t.t_start = t.t_end = 0;
    t.times_run = 0;
  }
  pending_ = std::int64_t(n);
  in_flight_ = 0;
  completed_ = 0;
  in_hook_ = 0;
  rr_ = 0;
  abort_ = false;
  first_start_ = 0;
  lock_failures_ = 0;
  steals_ = 0;
  error_ = nullptr;
  deadlock_dump_.clear();
}

void Scheduler::enqueue(int task, int worker) {
  ++in_flight_;
  Queue& q = *queues_[worker];
  std::lock_guard lk(q.m);
  q.q.push_back(task);
  ++q.size;
}

void Scheduler::place(int task) {
  enqueue(task, int(rr_.fetch_add(1) % queues_.size()));
}

std::optional<int> Scheduler::pop(int worker) {
  Queue& q = *queues_[worker];
  std::lock_guard lk(q.m);
  if (q.q.empty()) return std::nullopt;
  const int t = q.q.front();
  q.q.pop_front();
  --q.size;
  return t;
}

std::optional<int> Scheduler::steal(int worker) {
  for (int attempt = 0; attempt < 4; ++attempt) {
    int victim = -1;
    std::size_t best = 0;
    for (int v = 0; v < int(queues_.size()); ++v) {
      if (v == worker) continue;
      const std::size_t s = queues_[v]->size.load();
      if (s > best) {
        best = s;
        victim = v;
      }
    }
    if (victim < 0) return std::nullopt;
    Queue& q = *queues_[victim];
    std::lock_guard lk(q.m);
    if (q.q.empty()) continue;
    const int t = q.q.back();
    q.q.pop_back();
    --q.size;
    ++steals_;
    return t;
  }
  return std::nullopt;
}

std::size_t Scheduler::queue_size(int worker) const { return queues_[worker]->size.load(); }

bool Scheduler::acquire_locks(const Task& t) {
  for (std::size_t k = 0; k < t.locks.size(); ++k) {
    if (locks_[t.locks[k]].exchange(true, std::memory_order_acquire)) {
      for (std::size_t j = 0; j < k; ++j) locks_[t.locks[j]].store(false, std::memory_order_release);
      return false;
    }
  }
  return true;
}

void Scheduler::release_locks(const Task& t) { unlock(t.locks); }

void Scheduler::lock_blocking(const std::vector<int>& ids) {
  for (int id : ids)
    while (locks_[id].exchange(true, std::memory_order_acquire)) std::this_thread::yield();
}

void Scheduler::unlock(const std::vector<int>& ids) {
  for (int id : ids) locks_[id].store(false, std::memory_order_release);
}

void Scheduler::finish(int task) {
  for (int d : tasks[task].dependents)
    if (wait_[d].fetch_sub(1) == 1 && !tasks[d].implicit) place(d);
  ++completed_;
  --pending_;
}

void Scheduler::complete_implicit(int task, int worker, std::int64_t t_start, std::int64_t t_end) {
  Task& t = tasks[task];
  if (!t.implicit) throw UsageError("complete_implicit on a regular task");
  if (wait_[task].load() != 0) throw InvariantError(fmt::format("implicit task {} completed before its inputs", task));
  t.worker = worker;
  t.t_start = t_start;
  t.t_end = t_end;
  ++t.times_run;
  finish(task);
}

void Scheduler::worker_loop(int w, const Hooks& hooks, RunStats& stats) {
  auto fail = [&] {
    std::lock_guard lk(error_m_);
    if (!error_) error_ = std::current_exception();
    abort_ = true;
  };
  auto guarded_hook = [&](auto&& fn) {
    ++in_hook_;
    try {
      fn();
    } catch (...) {
      fail();
    }
    --in_hook_;
  };

  while (!abort_ && pending_.load() > 0) {
    std::optional<int> id = pop(w);
    if (!id) id = steal(w);
    if (id) {
      Task& task = tasks[*id];
      if (!acquire_locks(task)) {
        ++lock_failures_;
        Queue& q = *queues_[w];
        {
          std::lock_guard lk(q.m);
          q.q.push_back(*id);
          ++q.size;
        }
        std::this_thread::yield();
        continue;
      }
      task.t_start = now_ns();
      std::int64_t expected = 0;
      first_start_.compare_exchange_strong(expected, task.t_start);
      try {
        if (hooks.execute) hooks.execute(task, w);
      } catch (...) {
        release_locks(task);
        fail();
        break;
      }
      task.t_end = now_ns();
      task.worker = w;
      ++task.times_run;
      stats.busy_ns[w] += task.t_end - task.t_start;
      ++stats.executed[w];
      release_locks(task);
      finish(*id);
      --in_flight_;
      if (hooks.after_task) guarded_hook([&] { hooks.after_task(w); });
      continue;
    }

    bool progress = false;
    if (hooks.idle) guarded_hook([&] { progress = hooks.idle(w); });
    if (progress) continue;

    auto stuck = [&] {
      return in_flight_.load() == 0 && in_hook_.load() == 0 && pending_.load() > 0 &&
             !(hooks.outstanding && hooks.outstanding());
    };
    if (stuck()) {
      const std::int64_t seen = completed_.load();
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      if (stuck() && completed_.load() == seen && !abort_.exchange(true)) {
        std::string dump = fmt::format("scheduler deadlock: {} tasks pending, none runnable. Blocked:", pending_.load());
        int shown = 0;
        for (std::size_t t = 0; t < tasks.size() && shown < 20; ++t)
          if (tasks[t].times_run == 0) {
            dump += fmt::format(" {}({}/{},wait={})", t, to_string(tasks[t].type), to_string(tasks[t].subtype),
                                wait_[t].load());
            ++shown;
          }
        std::lock_guard lk(error_m_);
        deadlock_dump_ = dump;
      }
      continue;
    }
    std::this_thread::yield();
  }
}

RunStats Scheduler::run(const Options& opt, const Hooks& hooks) {
  RunStats stats;
  stats.t_begin = now_ns();
  prepare(opt.workers);
  stats.busy_ns.assign(opt.workers, 0);
  stats.executed.assign(opt.workers, 0);
  for (int t = 0; t < int(tasks.size()); ++t) {
    if (wait_[t].load() != 0 || tasks[t].implicit) continue;
    if (opt.initial_queue) enqueue(t, opt.initial_queue(t) % opt.workers);
    else place(t);
  }
  // Implicit-task time is attributed by the hooks through complete_implicit;
  // per-worker busy accounting below picks it up from the task records.
  std::vector<std::thread> threads;
  for (int w = 0; w < opt.workers; ++w) threads.emplace_back([&, w] { worker_loop(w, hooks, stats); });
  for (auto& th : threads) th.join();
  stats.t_end = now_ns();
  stats.t_first_start = first_start_.load();
  stats.lock_failures = lock_failures_.load();
  stats.steals = steals_.load();
  for (const Task& t : tasks)
    if (t.implicit && t.worker >= 0) stats.busy_ns[t.worker] += t.t_end - t.t_start;
  if (error_) std::rethrow_exception(error_);
  if (!deadlock_dump_.empty()) throw InvariantError(deadlock_dump_);
  return stats;
}

void write_timeline_csv(const std::string& path, const std::vector<const Task*>& tasks, std::int64_t origin_ns,
                        bool append) {
  std::FILE* f = std::fopen(path.c_str(), append ? "a" : "w");
  if (!f) throw ConfigError(fmt::format("cannot open timeline file '{}'", path));
  if (!append) fmt::print(f, "worker,task_type,subtype,cell_ids,t_start_ns,t_end_ns\n");
  for (const Task* t : tasks) {
    fmt::print(f, "{},{},{},{},{},{}\n", t->worker, to_string(t->type), to_string(t->subtype),
               fmt::join(t->cells, ";"), t->t_start - origin_ns, t->t_end - origin_ns);
  }
  std::fclose(f);
}

}  // namespace tasksph
