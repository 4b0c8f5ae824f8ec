#include <doctest.h>

#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "tasksph/gresho.hpp"
#include "tasksph/step_graph.hpp"

using namespace tasksph;

namespace {

CellTree lattice_tree(ParticleSystem& ps, int n, int g, int threshold = 1 << 30) {
  GreshoSetup s;
  s.resolution = n;
  ps = gresho_ic(s);
  return build_tree(ps, g, threshold, 2.0);
}

std::int64_t count(const StepGraph& g, TaskType t) { return g.count_by_type()[int(t)]; }

bool depends(const Scheduler& s, int before, int after) {
  const auto& d = s.tasks[before].dependents;
  return std::find(d.begin(), d.end(), after) != d.end();
}

}  // namespace

TEST_CASE("a single top cell") {
  ParticleSystem ps;
  CellTree tree = lattice_tree(ps, 8, 1);
  const auto g = build_step_graph(tree, ExecMode::cpu);
  // drift, sort, ghost, extra ghost, kick, timestep and one self per loop
  CHECK(g->num_tasks() == 9);
  CHECK(count(*g, TaskType::self) == 3);
  CHECK(count(*g, TaskType::sort) == 1);
  CHECK(count(*g, TaskType::pair) == 0);
  // the self interaction includes the periodic images of the cell
  for (const Task& t : g->sched.tasks)
    if (t.type == TaskType::self) CHECK(g->visits[std::size_t(t.payload)].size() == 14);
}

TEST_CASE("task counts on a periodic grid without recursion") {
  for (int grid : {3, 4}) {
    ParticleSystem ps;
    CellTree tree = lattice_tree(ps, 16, grid);
    const std::int64_t cells = std::int64_t(grid) * grid * grid;
    const auto cpu = build_step_graph(tree, ExecMode::cpu);
    CHECK(cpu->num_tasks() == cells * (3 + 3 * 13 + 6));
    CHECK(count(*cpu, TaskType::pair) == cells * 39);
    CHECK(count(*cpu, TaskType::sort) == cells);
    const auto off = build_step_graph(tree, ExecMode::offload);
    CHECK(off->num_tasks() == cells * (2 * 42 + 5));
    CHECK(count(*off, TaskType::pack) == count(*off, TaskType::unpack_implicit));
    CHECK(count(*off, TaskType::sort) == 0);
  }
}

TEST_CASE("closed-form count at 64^3 on a 16^3 grid") {
  ParticleSystem ps;
  CellTree tree = lattice_tree(ps, 64, 16);
  const auto g = build_step_graph(tree, ExecMode::cpu);
  CHECK(g->num_tasks() == 4096 * (3 + 39 + 6));
  CHECK(g->num_tasks() == 196608);
}

TEST_CASE("dependencies follow the loop order") {
  ParticleSystem ps;
  CellTree tree = lattice_tree(ps, 16, 3);
  const auto g = build_step_graph(tree, ExecMode::cpu);
  const Scheduler& s = g->sched;
  auto find = [&](TaskType t, int cell) {
    for (std::size_t i = 0; i < s.tasks.size(); ++i)
      if (s.tasks[i].type == t && s.tasks[i].cells[0] == cell) return int(i);
    return -1;
  };
  int checked = 0;
  for (std::size_t i = 0; i < s.tasks.size(); ++i) {
    const Task& t = s.tasks[i];
    if (t.type != TaskType::pair) continue;
    CHECK(t.locks.size() == 2);
    CHECK(std::is_sorted(t.locks.begin(), t.locks.end()));
    for (int c : t.cells) {
      switch (t.subtype) {
        case TaskSubtype::density:
          CHECK(depends(s, find(TaskType::drift, c), int(i)));
          CHECK(depends(s, find(TaskType::sort, c), int(i)));
          CHECK(depends(s, int(i), find(TaskType::ghost, c)));
          break;
        case TaskSubtype::gradient:
          CHECK(depends(s, find(TaskType::ghost, c), int(i)));
          CHECK(depends(s, int(i), find(TaskType::extra_ghost, c)));
          break;
        case TaskSubtype::force:
          CHECK(depends(s, find(TaskType::extra_ghost, c), int(i)));
          CHECK(depends(s, int(i), find(TaskType::kick, c)));
          break;
        default:
          FAIL("pair without a loop subtype");
      }
    }
    ++checked;
  }
  CHECK(checked == 27 * 39);
  for (int c = 0; c < 27; ++c) CHECK(depends(s, find(TaskType::kick, c), find(TaskType::timestep, c)));
  CHECK_FALSE(s.find_cycle().has_value());
}

TEST_CASE("recursion below the top level") {
  ParticleSystem ps;
  CellTree tree = lattice_tree(ps, 16, 3, 64);
  const auto cpu = build_step_graph(tree, ExecMode::cpu);
  CHECK(count(*cpu, TaskType::sub_self) + count(*cpu, TaskType::sub_pair) > 0);
  CHECK(cpu->num_tasks() == 27 * 48);
  const auto off = build_step_graph(tree, ExecMode::offload);
  // one pack per cell-level visit
  CHECK(off->num_tasks() > cpu->num_tasks());
  std::size_t visits = 0;
  for (const auto& v : cpu->visits) visits += v.size();
  CHECK(count(*off, TaskType::pack) == std::int64_t(visits));
  for (std::size_t i = 0; i < off->sched.tasks.size(); ++i)
    if (off->sched.tasks[i].type == TaskType::pack) {
      const int u = off->unpack_of[i];
      REQUIRE(u >= 0);
      CHECK(off->sched.tasks[u].implicit);
      CHECK(depends(off->sched, int(i), u));
    }
}

TEST_CASE("one start-up pass over the graph") {
  ParticleSystem ps;
  CellTree tree = lattice_tree(ps, 16, 3, 64);
  GhostParams gp;
  init_switches(ps, gp);
  tree.update_all_bounds(ps);
  const auto g = build_step_graph(tree, ExecMode::cpu);
  StepContext ctx;
  ctx.ps = &ps;
  ctx.tree = &tree;
  ctx.ghost = gp;
  const StepResult r = run_step(*g, ctx, 2);
  for (const Task& t : g->sched.tasks) CHECK(t.times_run == 1);
  CHECK(r.dt_next > 0.0);
  CHECK(std::isfinite(r.dt_next));
  CHECK(r.dt_next == doctest::Approx(compute_timestep(ps, 2.0, gp.c_cfl)));
  // every particle closed its neighbour number against a brute-force sum
  std::vector<oracle::P> all;
  for (std::size_t i = 0; i < ps.size(); ++i) all.push_back(oracle::load(ps, i));
  std::vector<std::size_t> js(ps.size());
  for (std::size_t i = 0; i < js.size(); ++i) js[i] = i;
  const double eta3 = std::pow(gp.kernel.eta, 3);
  double worst = 0.0;
  for (std::size_t i = 0; i < ps.size(); i += 17) {
    const auto o = oracle::density(all, i, js, true, 1.0);
    worst = std::max(worst, std::abs(o.wcount.v * std::pow(double(ps.h[i]), 3) - eta3) / eta3);
  }
  CHECK(worst <= 1.01e-4);
}

TEST_CASE("offload graphs need a pipeline") {
  ParticleSystem ps;
  CellTree tree = lattice_tree(ps, 8, 3);
  const auto g = build_step_graph(tree, ExecMode::offload);
  StepContext ctx;
  ctx.ps = &ps;
  ctx.tree = &tree;
  CHECK_THROWS_AS(run_step(*g, ctx, 1), UsageError);
}
