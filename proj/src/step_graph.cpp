#include "tasksph/step_graph.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>

namespace tasksph {

std::array<std::int64_t, kNumTaskTypes> StepGraph::count_by_type() const {
  std::array<std::int64_t, kNumTaskTypes> n{};
  for (const Task& t : sched.tasks) ++n[int(t.type)];
  return n;
}

namespace {

struct Interaction {
  int a, b;  // top cells, b = -1 for self
  bool sub;  // the plan descended below the top level
  std::vector<Visit> visits;
};

std::vector<int> tops_of(const Interaction& in) {
  if (in.b < 0 || in.b == in.a) return {in.a};
  return {std::min(in.a, in.b), std::max(in.a, in.b)};
}

}  // namespace

std::unique_ptr<StepGraph> build_step_graph(const CellTree& tree, ExecMode mode) {
  const std::int64_t t0 = now_ns();
  auto gp = std::make_unique<StepGraph>();
  StepGraph& g = *gp;
  g.mode = mode;
  Scheduler& s = g.sched;
  const int ntop = tree.num_top();
  const int grid = tree.top_grid;
  const float L = float(tree.box);
  g.recursed.assign(ntop, {});

  // top-level interactions, shared by the three loops
  std::vector<Interaction> inter;
  std::vector<char> needs_sort(ntop, 0);
  std::vector<int> rec;
  for (int c = 0; c < ntop; ++c) {
    if (tree.cells[c].count == 0) continue;
    Interaction self{c, -1, false, {}};
    rec.clear();
    enumerate_self(tree, c, self.visits, &rec);
    self.sub = !rec.empty();
    for (int x : rec) g.recursed[tree.cells[x].top].push_back(x);
    if (!self.visits.empty()) inter.push_back(std::move(self));
    if (grid == 1) continue;
    const Vec3<int> cc = tree.top_coords(c);
    for (const auto& o : pair_axis_offsets()) {
      Vec3<int> nb{cc.x + o.x, cc.y + o.y, cc.z + o.z};
      Vec3f shift{};
      for (int k = 0; k < 3; ++k) {
        if (nb[k] >= grid) {
          nb[k] -= grid;
          shift[k] = L;
        } else if (nb[k] < 0) {
          nb[k] += grid;
          shift[k] = -L;
        }
      }
      const int b = tree.top_index(nb.x, nb.y, nb.z);
      if (tree.cells[b].count == 0) continue;
      Interaction pair{c, b, false, {}};
      rec.clear();
      enumerate_pair(tree, c, b, shift, pair.visits, &rec);
      pair.sub = !rec.empty();
      for (int x : rec) g.recursed[tree.cells[x].top].push_back(x);
      if (!pair.visits.empty()) inter.push_back(std::move(pair));
    }
  }
  for (auto& r : g.recursed) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
  }
  for (const auto& in : inter)
    for (const Visit& v : in.visits) {
      g.max_visit_records = std::max<std::size_t>(
          g.max_visit_records, std::size_t(tree.cells[v.a].count) + (v.b >= 0 ? std::size_t(tree.cells[v.b].count) : 0));
      if (v.b >= 0) {
        needs_sort[in.a] = 1;
        if (in.b >= 0) needs_sort[in.b] = 1;
      }
    }

  // per-cell tasks
  std::vector<int> drift(ntop, -1), sort(ntop, -1), ghost(ntop, -1), extra(ntop, -1), kick(ntop, -1), tstep(ntop, -1);
  for (int c = 0; c < ntop; ++c) {
    if (tree.cells[c].count == 0) continue;
    drift[c] = s.add_task(TaskType::drift, TaskSubtype::none, {c}, {c});
    if (mode == ExecMode::cpu && needs_sort[c]) {
      sort[c] = s.add_task(TaskType::sort, TaskSubtype::none, {c}, {c});
      s.add_dependency(drift[c], sort[c]);
    }
    ghost[c] = s.add_task(TaskType::ghost, TaskSubtype::none, {c}, {c});
    extra[c] = s.add_task(TaskType::extra_ghost, TaskSubtype::none, {c}, {c});
    kick[c] = s.add_task(TaskType::kick, TaskSubtype::none, {c}, {c});
    tstep[c] = s.add_task(TaskType::timestep, TaskSubtype::none, {c}, {c});
    s.add_dependency(kick[c], tstep[c]);
  }

  for (int l = 0; l < kNumLoops; ++l) {
    const LoopKind loop = LoopKind(l);
    const TaskSubtype sub = subtype_of(loop);
    for (const auto& in : inter) {
      const std::vector<int> tops = tops_of(in);
      std::vector<int> pre, post;
      for (int t : tops) {
        switch (loop) {
          case LoopKind::density:
            pre.push_back(drift[t]);
            if (sort[t] >= 0) pre.push_back(sort[t]);
            post.push_back(ghost[t]);
            break;
          case LoopKind::gradient:
            pre.push_back(ghost[t]);
            post.push_back(extra[t]);
            break;
          case LoopKind::force:
            pre.push_back(extra[t]);
            post.push_back(kick[t]);
            break;
        }
      }
      if (mode == ExecMode::cpu) {
        TaskType type = in.b < 0 ? (in.sub ? TaskType::sub_self : TaskType::self)
                                 : (in.sub ? TaskType::sub_pair : TaskType::pair);
        const int id = s.add_task(type, sub, tops, tops, false, std::int64_t(g.visits.size()));
        g.visits.push_back(in.visits);
        for (int p : pre) s.add_dependency(p, id);
        for (int q : post) s.add_dependency(id, q);
      } else {
        for (const Visit& v : in.visits) {
          const int id = s.add_task(TaskType::pack, sub, tops, tops, false, std::int64_t(g.visits.size()));
          g.visits.push_back({v});
          const int u = s.add_task(TaskType::unpack_implicit, sub, tops, {}, true);
          if (int(g.unpack_of.size()) <= id) g.unpack_of.resize(id + 1, -1);
          g.unpack_of[id] = u;
          for (int p : pre) s.add_dependency(p, id);
          s.add_dependency(id, u);
          for (int q : post) s.add_dependency(u, q);
        }
      }
    }
  }
  g.unpack_of.resize(s.tasks.size(), -1);
  s.check_acyclic();
  g.build_ns = now_ns() - t0;
  return gp;
}

namespace {

void execute_task(StepGraph& g, StepContext& ctx, Task& t, int worker) {
  ParticleSystem& ps = *ctx.ps;
  CellTree& tree = *ctx.tree;
  const int c = t.cells.empty() ? -1 : t.cells[0];
  const std::int32_t first = c >= 0 ? tree.cells[c].first : 0;
  const std::int32_t last = c >= 0 ? first + tree.cells[c].count : 0;
  const LoopKind loop = t.subtype == TaskSubtype::gradient ? LoopKind::gradient
                        : t.subtype == TaskSubtype::force  ? LoopKind::force
                                                           : LoopKind::density;
  switch (t.type) {
    case TaskType::drift:
      if (ctx.dt > 0.0) {
        ctx.clamped_u += kick(ps, first, last, 0.5 * ctx.dt, ctx.ghost.gamma);
      }
      drift_positions(tree, ps, c, ctx.dt);
      ps.clear_density_acc(std::size_t(first), std::size_t(last));
      break;
    case TaskType::sort:
      tree.sort_subtree(ps, c);
      break;
    case TaskType::self:
    case TaskType::pair:
    case TaskType::sub_self:
    case TaskType::sub_pair: {
      VisitOptions opt{ctx.sph, ctx.use_sorts, &ctx.loop_stats[int(loop)]};
      for (const Visit& v : g.visits[std::size_t(t.payload)]) run_visit(loop, ps, tree, v, opt);
      break;
    }
    case TaskType::pack: {
      const int id = int(&t - g.sched.tasks.data());
      ctx.offload->pack(worker, loop, g.visits[std::size_t(t.payload)][0], id, g.unpack_of[id], t.locks);
      break;
    }
    case TaskType::ghost:
      ghost_density(ps, tree, c, ctx.ghost, &ctx.ghost_stats);
      for (int d : g.recursed[c]) {
        const Cell& cell = tree.cells[d];
        if (!tree.can_recurse(cell))
          throw InvariantError(fmt::format(
              "cell {} no longer satisfies the recursion criterion after the h update "
              "(gamma*h_max = {:.6g}, drift = {:.6g}, width = {:.6g})",
              d, tree.gamma_k * cell.h_max, cell.dx_max, cell.width));
      }
      break;
    case TaskType::extra_ghost:
      if (ctx.dt > 0.0) ghost_gradient(ps, first, last, ctx.dt, ctx.ghost);
      else store_gradient_state(ps, first, last);
      break;
    case TaskType::kick:
      finalize_force(ps, first, last);
      ctx.clamped_u += kick(ps, first, last, 0.5 * ctx.dt, ctx.ghost.gamma);
      break;
    case TaskType::timestep:
      ctx.dt_top[std::size_t(c)] = timestep_range(ps, first, last, ctx.ghost.kernel.gamma_k, ctx.ghost.c_cfl);
      break;
    case TaskType::unpack_implicit:
      throw InvariantError("implicit unpack task was queued");
  }
}

}  // namespace

StepResult run_step(StepGraph& g, StepContext& ctx, int workers) {
  if (g.mode == ExecMode::offload && !ctx.offload) throw UsageError("offload graph needs an offload pipeline");
  ctx.dt_top.assign(std::size_t(ctx.tree->num_top()), std::numeric_limits<double>::infinity());
  if (ctx.offload) ctx.offload->begin_step(g.sched, *ctx.ps, *ctx.tree, g.max_visit_records);

  Scheduler::Hooks hooks;
  hooks.execute = [&](Task& t, int w) { execute_task(g, ctx, t, w); };
  if (ctx.offload && g.mode == ExecMode::offload) {
    OffloadPipeline* off = ctx.offload;
    hooks.after_task = [off](int w) { off->after_task(w); };
    hooks.idle = [off](int w) { return off->idle(w); };
    hooks.outstanding = [off] { return off->outstanding(); };
  }
  Scheduler::Options opt;
  opt.workers = workers;

  StepResult r;
  r.run = g.sched.run(opt, hooks);
  r.dt_next = *std::min_element(ctx.dt_top.begin(), ctx.dt_top.end());
  if (!std::isfinite(r.dt_next) || r.dt_next <= 0.0)
    throw NumericalError(fmt::format("no admissible time step (min over cells = {})", r.dt_next));
  return r;
}

}  // namespace tasksph
