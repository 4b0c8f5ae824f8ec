#include "tasksph/driver.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace tasksph {

namespace {

std::vector<const Task*> task_pointers(const Scheduler& s) {
  std::vector<const Task*> out;
  out.reserve(s.tasks.size());
  for (const Task& t : s.tasks) out.push_back(&t);
  return out;
}

double min_leaf_width(const CellTree& tree) {
  double w = std::numeric_limits<double>::infinity();
  for (const Cell& c : tree.cells)
    if (!c.split()) w = std::min(w, c.width);
  return w;
}

float max_displacement(const CellTree& tree) {
  float d = 0.0f;
  for (int t = 0; t < tree.num_top(); ++t) d = std::max(d, tree.cells[t].dx_max);
  return d;
}

bool is_offload(RunMode m) { return m != RunMode::cpu; }

}  // namespace

DeviceModel resolve_device_model(const RunConfig& cfg) {
  if (cfg.device_model.empty()) return device_preset("nvlink-like");
  return cfg.device_model_is_file ? load_device_model(cfg.device_model) : device_preset(cfg.device_model);
}

std::string steps_csv_path(const std::string& timeline_path) { return timeline_path + ".steps.csv"; }

Simulation::Simulation(const RunConfig& cfg) : Simulation(cfg, gresho_ic(cfg.ic)) {}

Simulation::Simulation(const RunConfig& cfg, ParticleSystem ic) : cfg_(cfg), ps_(std::move(ic)) {
  cfg_.validate();
  sph_.gamma_k = cfg_.physics.kernel.gamma_k;
  sph_.beta = cfg_.beta;
  init_switches(ps_, cfg_.physics);
  rebuild();
  origin_ns_ = now_ns();

  if (is_offload(cfg_.mode)) {
    if (cfg_.trace_out.empty()) cfg_.trace_out = "tasksph_trace.csv";
    // Per-thread buffer sizing, widened so that S_p of the largest planned visits fit.
    const double h0 = cfg_.ic.eta * cfg_.ic.box / cfg_.ic.resolution;
    const std::uint64_t n_c = std::max<std::uint64_t>(1, uniform_cell_count(cfg_.ic.box, h0));
    const int sp_max = std::max(cfg_.offload.sp_self, cfg_.offload.sp_pair);
    const DeviceSizing sz = device_sizing(ps_.size(), std::uint64_t(sp_max), n_c);
    set_margins(0.0);
    const auto probe = build_step_graph(tree_, ExecMode::offload);
    const std::size_t capacity =
        std::max<std::size_t>(2 * sz.n_offload, std::size_t(sp_max) * std::max<std::size_t>(1, probe->max_visit_records));
    backend_ = std::make_unique<HostExecutorBackend>(cfg_.device_threads, sph_);
    pipeline_ = std::make_unique<OffloadPipeline>(cfg_.offload, *backend_, cfg_.workers, capacity,
                                                  cfg_.physics.kernel.gamma_k);
    spdlog::info("offload buffers: {} records per pack buffer (sizing estimate {} particles, {} bytes per thread)",
                 capacity, sz.n_offload, sz.m_t);
  }
}

Simulation::~Simulation() = default;

void Simulation::rebuild() {
  tree_ = build_tree(ps_, cfg_.resolved_top_grid(), cfg_.split_threshold, cfg_.physics.kernel.gamma_k);
  ps_.x_build = ps_.x;
  tree_.update_all_bounds(ps_);
  steps_since_build_ = 0;
  for (int t = 0; t < tree_.num_top(); ++t) (void)tree_.interaction_level(t);  // ConfigError when too coarse
  const auto levels = tree_.cells_per_level();
  std::string desc;
  for (std::size_t l = 0; l < levels.size(); ++l) desc += fmt::format(" L{}={}", l, levels[l]);
  spdlog::debug("tree rebuilt: top grid {}, cells per level:{}", tree_.top_grid, desc);
}

void Simulation::set_margins(double dt) {
  double vmax = 0.0;
  if (dt > 0.0)
    for (std::size_t i = 0; i < ps_.size(); ++i) {
      const Vec3d v = ps_.v[i].as<double>() + ps_.a[i].as<double>() * (0.5 * dt);
      vmax = std::max(vmax, norm(v));
    }
  tree_.plan_h_factor = cfg_.plan_h_factor;
  tree_.plan_dx_pad = 1.01 * vmax * dt;
}

bool Simulation::needs_rebuild() const {
  if (steps_since_build_ >= cfg_.rebuild_every) return true;
  if (max_displacement(tree_) > cfg_.rebuild_displacement * min_leaf_width(tree_)) return true;
  for (int t = 0; t < tree_.num_top(); ++t) {
    const Cell& c = tree_.cells[t];
    if (c.count == 0) continue;
    if (tree_.gamma_k * tree_.plan_h_factor * c.h_max + 2.0 * (c.dx_max + tree_.plan_dx_pad) > c.width) return true;
  }
  return false;
}

const StepRecord& Simulation::startup() {
  if (started_) throw UsageError("startup() called twice");
  started_ = true;
  return advance(0.0);
}

bool Simulation::finished() const {
  if (!started_) return false;
  if (cfg_.max_steps > 0 && int(steps_.size()) - 1 >= cfg_.max_steps) return true;
  return time_ >= cfg_.t_end * (1.0 - 1e-12);
}

const StepRecord& Simulation::step() {
  if (!started_) startup();
  if (finished()) throw UsageError("step() after the end time");
  double dt = dt_next_;
  if (time_ + dt > cfg_.t_end) dt = cfg_.t_end - time_;
  return advance(dt);
}

void Simulation::run_to_end() {
  if (!started_) startup();
  while (!finished()) step();
}

const StepRecord& Simulation::advance(double dt) {
  StepRecord rec;
  rec.step = int(steps_.size());
  rec.dt = dt;

  set_margins(dt);
  if (dt > 0.0 && needs_rebuild()) {
    rebuild();
    set_margins(dt);
    rec.rebuilt = true;
  }

  const ExecMode mode = is_offload(cfg_.mode) ? ExecMode::offload : ExecMode::cpu;
  const std::int64_t t_graph = now_ns();
  auto graph = build_step_graph(tree_, mode);

  StepContext ctx;
  ctx.ps = &ps_;
  ctx.tree = &tree_;
  ctx.ghost = cfg_.physics;
  ctx.sph = sph_;
  ctx.use_sorts = cfg_.use_sorts;
  ctx.offload = pipeline_.get();
  ctx.dt = dt;
  if (pipeline_) pipeline_->reset_stats();

  const StepResult res = run_step(*graph, ctx, cfg_.workers);
  ++steps_since_build_;
  time_ += dt;
  dt_next_ = res.dt_next;

  // accounting
  rec.time = time_;
  rec.tasks = graph->num_tasks();
  rec.tasks_by_type = graph->count_by_type();
  rec.graph_build_ns = graph->build_ns;
  rec.initial_task_management_ns = (res.run.t_begin - t_graph) + (res.run.t_first_start - res.run.t_begin);
  rec.wall_ns = res.run.t_end - t_graph;
  const std::int64_t run_wall = res.run.t_end - res.run.t_begin;
  for (std::size_t w = 0; w < res.run.busy_ns.size(); ++w)
    rec.outside_task_ns += std::max<std::int64_t>(0, run_wall - res.run.busy_ns[w]);
  rec.lock_failures = res.run.lock_failures;
  rec.steals = res.run.steals;
  rec.newton_iterations = ctx.ghost_stats.newton_iterations.load();
  rec.max_newton_iterations = ctx.ghost_stats.max_particle_iterations.load();
  rec.bisections = ctx.ghost_stats.bisections.load();
  rec.clamped_u = ctx.clamped_u.load();

  const double eta3 = std::pow(cfg_.physics.kernel.eta, 3);
  std::int64_t ok = 0;
  Vec3d ma{}, mv{};
  for (std::size_t i = 0; i < ps_.size(); ++i) {
    const double h = ps_.h[i];
    const double rel = std::abs(double(ps_.wcount[i]) * h * h * h - eta3) / eta3;
    rec.h_closure_max = std::max(rec.h_closure_max, rel);
    if (rel <= cfg_.physics.hsolve.tolerance) ++ok;
    const double m = ps_.m[i];
    rec.mass += m;
    ma += ps_.a[i].as<double>() * m;
    mv += ps_.v[i].as<double>() * m;
    rec.abs_force += m * norm(ps_.a[i].as<double>());
    rec.abs_momentum += m * norm(ps_.v[i].as<double>());
  }
  rec.h_closure_fraction = ps_.size() ? double(ok) / double(ps_.size()) : 1.0;
  rec.momentum_force = norm(ma);
  rec.momentum = norm(mv);

  if (pipeline_) {
    for (int l = 0; l < kNumLoops; ++l) {
      const OffloadLoopStats& s = pipeline_->stats(LoopKind(l));
      if (s.bytes_h2d != s.records * std::int64_t(send_record_size(LoopKind(l))) ||
          s.bytes_d2h != s.records * std::int64_t(recv_record_size(LoopKind(l))))
        throw InvariantError(fmt::format("{} loop moved {} / {} bytes for {} records", to_string(LoopKind(l)),
                                         s.bytes_h2d, s.bytes_d2h, s.records));
      auto& tot = offload_totals_[l];
      tot.tasks += s.tasks;
      tot.records += s.records;
      tot.bytes_h2d += s.bytes_h2d;
      tot.bytes_d2h += s.bytes_d2h;
      tot.flushes += s.flushes;
      tot.bundles += s.bundles;
      tot.partial_flushes += s.partial_flushes;
    }
    auto rows = backend_->take_trace();
    trace_.insert(trace_.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
  }

  if (!cfg_.timeline_out.empty()) {
    write_timeline_csv(cfg_.timeline_out, task_pointers(graph->sched), origin_ns_, timeline_started_);
    timeline_started_ = true;
  }

  const std::int64_t coincident = ctx.ghost_stats.coincident.load() + ctx.loop_stats[0].coincident.load() +
                                  ctx.loop_stats[1].coincident.load() + ctx.loop_stats[2].coincident.load();
  if (coincident > 0) spdlog::warn("step {}: {} coincident particle pairs skipped", rec.step, coincident);
  spdlog::info("step {:4d} t={:.5f} dt={:.3e} tasks={} newton<= {} h-closure {:.2e} |sum ma|/sum m|a|={:.2e}{}",
               rec.step, rec.time, rec.dt, rec.tasks, rec.max_newton_iterations, rec.h_closure_max,
               rec.abs_force > 0 ? rec.momentum_force / rec.abs_force : 0.0, rec.rebuilt ? " (rebuilt)" : "");
  ps_.check_invariants();
  steps_.push_back(rec);
  return steps_.back();
}

RunResult Simulation::finish() {
  run_to_end();
  RunResult r;
  r.config = cfg_;
  r.report = error_report(ps_, cfg_.ic.box);
  r.steps = steps_;
  r.trace = trace_;
  r.offload = offload_totals_;
  r.top_grid = tree_.top_grid;
  r.time = time_;

  if (!cfg_.timeline_out.empty()) write_steps_csv(steps_csv_path(cfg_.timeline_out), steps_);
  if (!cfg_.snapshot_out.empty()) write_snapshot(cfg_.snapshot_out, ps_);
  if (!cfg_.report_out.empty()) write_error_report(cfg_.report_out, r.report);
  if (is_offload(cfg_.mode) && !cfg_.trace_out.empty()) write_device_trace(cfg_.trace_out, trace_);
  if (cfg_.mode == RunMode::offload_trace) {
    const DeviceModel model = resolve_device_model(cfg_);
    r.sim = simulate(trace_, model);
    if (!cfg_.trace_out.empty()) {
      write_sim_timeline(cfg_.trace_out + ".sim.csv", *r.sim);
      write_sim_metrics(cfg_.trace_out + ".metrics.txt", *r.sim, model);
    }
    spdlog::info("device model {}: makespan {:.4e} s, overlap fraction {:.3f}", model.name, r.sim->makespan,
                 r.sim->overlap);
  }
  r.particles = ps_;
  return r;
}

RunResult run_simulation(const RunConfig& cfg) {
  Simulation sim(cfg);
  return sim.finish();
}

void write_steps_csv(const std::string& path, const std::vector<StepRecord>& steps) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ConfigError(fmt::format("cannot open '{}'", path));
  fmt::print(f, "step,time,dt,total_tasks");
  for (int t = 0; t < kNumTaskTypes; ++t) fmt::print(f, ",tasks_{}", to_string(TaskType(t)));
  fmt::print(f, ",initial_task_management_ns,outside_task_ns,wall_ns,graph_build_ns,lock_failures,steals,rebuilt\n");
  for (const auto& s : steps) {
    fmt::print(f, "{},{:.9g},{:.9g},{}", s.step, s.time, s.dt, s.tasks);
    for (auto n : s.tasks_by_type) fmt::print(f, ",{}", n);
    fmt::print(f, ",{},{},{},{},{},{},{}\n", s.initial_task_management_ns, s.outside_task_ns, s.wall_ns,
               s.graph_build_ns, s.lock_failures, s.steals, int(s.rebuilt));
  }
  std::fclose(f);
}

}  // namespace tasksph
