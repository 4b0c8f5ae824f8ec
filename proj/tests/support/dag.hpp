// Random task graphs and an execution checker for the scheduler.
#pragma once

#include <algorithm>
#include <atomic>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tasksph/scheduler.hpp"

namespace dag {

using namespace tasksph;

// `n` tasks; each depends on up to 3 earlier tasks and holds up to 3 of
// `num_locks` locks.
inline void random_graph(Scheduler& s, int n, int num_locks, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int t = 0; t < n; ++t) {
    std::vector<int> locks;
    const int nl = int(rng() % 4);
    for (int k = 0; k < nl; ++k) locks.push_back(int(rng() % num_locks));
    std::sort(locks.begin(), locks.end());
    locks.erase(std::unique(locks.begin(), locks.end()), locks.end());
    s.add_task(TaskType::self, TaskSubtype::none, locks, locks);
  }
  s.set_num_locks(num_locks);
  for (int t = 1; t < n; ++t) {
    const int nd = int(rng() % 4);
    for (int k = 0; k < nd; ++k) s.add_dependency(int(rng() % t), t);
  }
}

struct Report {
  int ran_twice = 0, never_ran = 0, order_violations = 0, lock_overlaps = 0;
  bool ok() const { return ran_twice == 0 && never_ran == 0 && order_violations == 0 && lock_overlaps == 0; }
  std::string str() const {
    return "ran_twice=" + std::to_string(ran_twice) + " never_ran=" + std::to_string(never_ran) +
           " order_violations=" + std::to_string(order_violations) + " lock_overlaps=" + std::to_string(lock_overlaps);
  }
};

// Runs the graph with an execute hook that marks every held lock busy for a
// short spin and counts collisions, then checks dependency order.
inline Report run_and_check(Scheduler& s, int workers, int spin = 200) {
  Report r;
  const int nl = std::max(1, s.num_locks());
  auto holders = std::make_unique<std::atomic<int>[]>(nl);
  for (int i = 0; i < nl; ++i) holders[i] = 0;
  std::atomic<int> overlaps{0};
  std::vector<std::atomic<int>> order(s.tasks.size());
  std::atomic<int> clock{0};
  Scheduler::Hooks hooks;
  hooks.execute = [&](Task& t, int) {
    for (int l : t.locks)
      if (holders[l].fetch_add(1) != 0) ++overlaps;
    order[std::size_t(&t - s.tasks.data())] = ++clock;
    volatile double x = 0;
    for (int k = 0; k < spin; ++k) x = x + k;
    for (int l : t.locks) holders[l].fetch_sub(1);
  };
  Scheduler::Options opt;
  opt.workers = workers;
  s.run(opt, hooks);
  r.lock_overlaps = overlaps.load();
  for (std::size_t t = 0; t < s.tasks.size(); ++t) {
    if (s.tasks[t].times_run == 0) ++r.never_ran;
    if (s.tasks[t].times_run > 1) ++r.ran_twice;
    for (int d : s.tasks[t].dependents)
      if (order[std::size_t(d)] <= order[t] || s.tasks[std::size_t(d)].t_start < s.tasks[t].t_end) ++r.order_violations;
  }
  return r;
}

}  // namespace dag
