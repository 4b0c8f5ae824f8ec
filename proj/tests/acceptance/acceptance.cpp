// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit on any failure.
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>

#include "dag.hpp"
#include "fixtures.hpp"
#include "tasksph/config.hpp"
#include "tasksph/device_sim.hpp"
#include "tasksph/driver.hpp"
#include "tasksph/gresho.hpp"

using namespace tasksph;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

RunConfig base_config(const std::string& tag, int resolution, double t_end, RunMode mode, int workers) {
  RunConfig c;
  c.ic.resolution = resolution;
  c.t_end = t_end;
  c.mode = mode;
  c.workers = workers;
  c.snapshot_out = tag + "_snapshot.txt";
  c.timeline_out = tag + "_timeline.csv";
  if (mode != RunMode::cpu) c.trace_out = tag + "_trace.csv";
  return c;
}

// The 32^3 reference run shared by criteria 1, 2 and 8.
struct Reference {
  RunResult run;
  double wall = 0.0;
  double oracle_closure = 0.0;  // brute-force check on the final state
};

Reference& reference() {
  static Reference ref = [] {
    Reference r;
    const auto t0 = Clock::now();
    r.run = run_simulation(base_config("gresho32", 32, 0.05, RunMode::cpu, 2));
    r.wall = seconds_since(t0);
    const ParticleSystem& ps = r.run.particles;
    std::vector<oracle::P> all;
    for (std::size_t i = 0; i < ps.size(); ++i) all.push_back(oracle::load(ps, i));
    std::vector<std::size_t> js(ps.size());
    for (std::size_t i = 0; i < js.size(); ++i) js[i] = i;
    const double eta3 = std::pow(r.run.config.physics.kernel.eta, 3);
    for (std::size_t i = 0; i < ps.size(); i += 61) {
      const auto o = oracle::density(all, i, js, true, ps.box);
      r.oracle_closure =
          std::max(r.oracle_closure, std::abs(o.wcount.v * std::pow(double(ps.h[i]), 3) - eta3) / eta3);
    }
    return r;
  }();
  return ref;
}

std::map<std::string, double> read_baseline(const std::string& path) {
  std::map<std::string, double> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = std::stod(line.substr(eq + 1));
  }
  return out;
}

Outcome criterion1(const std::string& baseline_path, bool& froze) {
  Reference& r = reference();
  const ErrorReport& e = r.run.report;
  Outcome o;
  o.pass = e.l1_v <= 0.05 && e.plateau_rel <= 0.05 && r.wall <= 300.0;
  o.detail = fmt::format("l1_v_theta={:.5f} (<=0.05) plateau_rel={:.5f} (<=0.05) wall={:.1f}s steps={}", e.l1_v,
                         e.plateau_rel, r.wall, r.run.steps.size() - 1);
  if (baseline_path.empty()) return o;
  auto base = read_baseline(baseline_path);
  if (base.empty()) {
    if (o.pass) {
      std::ofstream out(baseline_path);
      out << "# frozen from the first passing run of criterion 1\n";
      out << fmt::format("l1_v={:.9g}\nplateau_rel={:.9g}\n", e.l1_v, e.plateau_rel);
      froze = true;
      o.detail += " baseline frozen";
    }
    return o;
  }
  const bool l1_ok = e.l1_v <= 1.1 * base["l1_v"];
  const bool plateau_ok = e.plateau_rel <= 1.1 * base["plateau_rel"];
  o.pass = o.pass && l1_ok && plateau_ok;
  o.detail += fmt::format(" vs baseline l1_v={:.5f} plateau_rel={:.5f} (10% regression allowed)", base["l1_v"],
                          base["plateau_rel"]);
  return o;
}

Outcome criterion2() {
  Reference& r = reference();
  double worst = 0.0, min_fraction = 1.0;
  for (const auto& s : r.run.steps) {
    worst = std::max(worst, s.h_closure_max);
    min_fraction = std::min(min_fraction, s.h_closure_fraction);
  }
  // start from h scaled by 1.5 and let the start-up pass converge it
  RunConfig c = base_config("perturbed", 32, 0.0, RunMode::cpu, 2);
  ParticleSystem ic = gresho_ic(c.ic);
  for (auto& h : ic.h) h *= 1.5f;
  Simulation sim(c, std::move(ic));
  const StepRecord& s0 = sim.startup();
  Outcome o;
  o.pass = min_fraction == 1.0 && worst <= 1e-4 && r.oracle_closure <= 1.01e-4 && s0.max_newton_iterations <= 10 &&
           s0.h_closure_fraction == 1.0;
  o.detail = fmt::format(
      "every step: fraction={:.4f} max={:.2e}; brute-force final max={:.2e}; perturbed x1.5: max iterations={} "
      "bisections={} closure max={:.2e}",
      min_fraction, worst, r.oracle_closure, s0.max_newton_iterations, s0.bisections, s0.h_closure_max);
  return o;
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  const int pairs[][2] = {{21, 22}, {21, 25}, {21, 26}, {21, 37}, {21, 42}, {21, 38}, {21, 41}, {22, 26}, {25, 42},
                          {26, 41}};
  double worst = 0.0;
  int cases = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const bool self = trial < 10;
    const int a = self ? 21 : pairs[trial - 10][0];
    const int b = self ? -1 : pairs[trial - 10][1];
    std::vector<std::pair<int, int>> cc{{a, 8 + (trial * 11) % 57}};
    if (!self) cc.push_back({b, 64 - (trial * 7) % 50});
    auto s = fixtures::random_cells(5000 + std::uint64_t(trial), 4, cc);
    for (LoopKind loop : {LoopKind::density, LoopKind::gradient, LoopKind::force})
      for (auto path : {fixtures::Path::naive, fixtures::Path::sorted, fixtures::Path::records}) {
        fixtures::run(loop, s, {a, b, {}}, path);
        worst = std::max(worst, fixtures::deviation(loop, s, {a, b, {}}));
      }
    ++cases;
  }
  Outcome o;
  o.pass = worst <= 1.0 && cases == 20;
  o.detail = fmt::format("{} cells/pairs x 3 loops x naive/sorted/records: worst deviation {:.3g}e-6 relative, {:.2f}s",
                         cases, worst, seconds_since(t0));
  return o;
}

Outcome criterion4() {
  const auto t0 = Clock::now();
  int failures = 0;
  dag::Report total;
  for (int workers : {1, 2, 8})
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      Scheduler s;
      dag::random_graph(s, 1000, 32, seed * 7919 + std::uint64_t(workers));
      const auto r = dag::run_and_check(s, workers, 50);
      total.ran_twice += r.ran_twice;
      total.never_ran += r.never_ran;
      total.order_violations += r.order_violations;
      total.lock_overlaps += r.lock_overlaps;
      if (!r.ok()) ++failures;
    }
  const double wall = seconds_since(t0);
  Outcome o;
  o.pass = failures == 0 && wall <= 120.0;
  o.detail = fmt::format("300 runs of 1000 tasks: {} ({} failing runs), {:.1f}s", total.str(), failures, wall);
  return o;
}

double state_deviation(const ParticleSystem& a, const ParticleSystem& b) {
  double vmax = 0.0;
  for (const auto& v : a.v) vmax = std::max(vmax, double(norm(v.as<double>())));
  double worst = 0.0;
  auto rel = [&](double x, double y, double floor) {
    worst = std::max(worst, std::abs(x - y) / std::max(std::abs(y), floor));
  };
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.id[i] != b.id[i]) return 1e30;
    for (int k = 0; k < 3; ++k) {
      rel(a.x[i][k], b.x[i][k], a.box);
      rel(a.v[i][k], b.v[i][k], 0.1 * vmax);
    }
    rel(a.rho[i], b.rho[i], 0.0);
    rel(a.u[i], b.u[i], 0.0);
    rel(a.h[i], b.h[i], 0.0);
  }
  return worst;
}

struct ModeRuns {
  RunResult cpu;
  std::vector<std::pair<std::string, RunResult>> offload;
};

ModeRuns& mode_runs() {
  static ModeRuns m = [] {
    ModeRuns r;
    r.cpu = run_simulation(base_config("mode_cpu", 16, 0.02, RunMode::cpu, 2));
    const int configs[][2] = {{4, 4}, {64, 16}, {256, 64}};
    for (const auto& sp_sb : configs) {
      RunConfig c = base_config(fmt::format("mode_off_{}_{}", sp_sb[0], sp_sb[1]), 16, 0.02, RunMode::offload_host, 2);
      c.offload.sp_self = c.offload.sp_pair = sp_sb[0];
      c.offload.sb_self = c.offload.sb_pair = sp_sb[1];
      r.offload.emplace_back(fmt::format("({},{})", sp_sb[0], sp_sb[1]), run_simulation(c));
    }
    return r;
  }();
  return m;
}

Outcome criterion5() {
  const auto t0 = Clock::now();
  ModeRuns& m = mode_runs();
  Outcome o;
  o.pass = true;
  o.detail = fmt::format("16^3, {} steps:", m.cpu.steps.size() - 1);
  for (const auto& [name, run] : m.offload) {
    const double d = state_deviation(run.particles, m.cpu.particles);
    const bool same_steps = run.steps.size() == m.cpu.steps.size();
    o.pass = o.pass && d <= 1e-6 && same_steps;
    o.detail += fmt::format(" {} max rel dev {:.2e}", name, d);
  }
  o.detail += fmt::format(", {:.1f}s", seconds_since(t0));
  o.pass = o.pass && seconds_since(t0) <= 300.0;
  return o;
}

Outcome criterion6() {
  const auto s = device_sizing(256ull * 256 * 256, 2048, 262144);
  const bool sizes = send_record_size(LoopKind::density) == 40 && recv_record_size(LoopKind::density) == 32;
  Outcome o;
  o.pass = s.n_offload == 131072 && s.m_t == 69206016ull && sizes;
  o.detail = fmt::format("N_offload={} M_t={} density records {}B/{}B", s.n_offload, s.m_t,
                         send_record_size(LoopKind::density), recv_record_size(LoopKind::density));
  return o;
}

Outcome criterion7() {
  const auto t0 = Clock::now();
  constexpr int sp = 16;
  RunConfig c = base_config("overlap", 16, 0.01, RunMode::offload_trace, 2);
  c.offload.sp_self = c.offload.sp_pair = sp;
  c.offload.sb_self = c.offload.sb_pair = 1;  // one task per bundle, regrouped below
  c.device_model = "nvlink-like";
  const RunResult r = run_simulation(c);
  auto sim = [&](int sb, const DeviceModel& m) { return simulate(rebundle_trace(r.trace, sb, sb, sp / sb), m); };
  const DeviceModel nv = device_preset("nvlink-like");
  const auto whole = sim(sp, nv);
  const auto split = sim(sp / 4, nv);
  DeviceModel slow = nv;
  slow.launch_overhead *= 100.0;
  const auto whole_slow = sim(sp, slow);
  const auto split_slow = sim(sp / 4, slow);
  // diagnostic only: the same comparison on each worker's ops in isolation
  std::string per_worker;
  for (int w = 0; w < 2; ++w) {
    std::vector<DeviceTraceRow> mine;
    for (const auto& row : r.trace)
      if (row.worker == w) mine.push_back(row);
    per_worker += fmt::format(" w{} {:.3f}/{:.3f}", w, simulate(rebundle_trace(mine, sp, sp, 1), nv).overlap,
                              simulate(rebundle_trace(mine, sp / 4, sp / 4, 4), nv).overlap);
  }
  Outcome o;
  o.pass = whole.overlap == 0.0 && split.overlap > 0.2 && split.makespan < whole.makespan &&
           split_slow.makespan > whole_slow.makespan;
  o.detail = fmt::format(
      "S_p={}: S_b=S_p overlap={:.3f} makespan={:.4e}s; S_b=S_p/4 overlap={:.3f} makespan={:.4e}s; launch x100: "
      "S_b=S_p {:.4e}s vs S_b=S_p/4 {:.4e}s; single-worker overlap (S_p, S_p/4):{}; {:.1f}s",
      sp, whole.overlap, whole.makespan, split.overlap, split.makespan, whole_slow.makespan, split_slow.makespan,
      per_worker, seconds_since(t0));
  return o;
}

Outcome criterion8() {
  Reference& r = reference();
  double mass_dev = 0.0, worst = 0.0;
  const double m0 = r.run.steps.front().mass;
  for (const auto& s : r.run.steps) {
    mass_dev = std::max(mass_dev, std::abs(s.mass - m0) / m0);
    worst = std::max(worst, s.abs_force > 0 ? s.momentum_force / s.abs_force : 0.0);
  }
  Outcome o;
  o.pass = mass_dev <= 1e-12 && worst <= 1e-4;
  o.detail = fmt::format("mass drift {:.1e}, max |sum m a| / sum m|a| = {:.2e} over {} steps", mass_dev, worst,
                         r.run.steps.size());
  return o;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  return out;
}

Outcome criterion9() {
  ModeRuns& m = mode_runs();
  Outcome o;
  // timeline rows against the per-step task counts of the cpu run
  std::ifstream tl("mode_cpu_timeline.csv");
  std::string line;
  std::getline(tl, line);
  const bool tl_header = line == "worker,task_type,subtype,cell_ids,t_start_ns,t_end_ns";
  std::int64_t rows = 0;
  while (std::getline(tl, line)) ++rows;
  std::int64_t tasks = 0;
  for (const auto& s : m.cpu.steps) tasks += s.tasks;
  std::ifstream st(steps_csv_path("mode_cpu_timeline.csv"));
  std::getline(st, line);
  const auto cols = split_csv(line);
  auto has = [&](const std::string& c) { return std::find(cols.begin(), cols.end(), c) != cols.end(); };
  const bool columns = has("initial_task_management_ns") && has("outside_task_ns") && has("total_tasks") &&
                       has("tasks_self") && has("tasks_pair") && has("tasks_pack");
  std::int64_t step_rows = 0;
  bool positive = true;
  while (std::getline(st, line)) {
    ++step_rows;
    const auto f = split_csv(line);
    for (std::size_t k = 0; k < cols.size() && k < f.size(); ++k)
      if ((cols[k] == "initial_task_management_ns" || cols[k] == "wall_ns") && std::stoll(f[k]) <= 0) positive = false;
  }
  const std::int64_t cpu_tasks = m.cpu.steps.back().tasks;
  const std::int64_t off_tasks = m.offload[1].second.steps.back().tasks;
  o.pass = tl_header && rows == tasks && columns && step_rows == std::int64_t(m.cpu.steps.size()) && positive &&
           off_tasks > cpu_tasks;
  o.detail = fmt::format("timeline rows {} = sum of step tasks {}; steps.csv columns {}; tasks per step cpu {} < offload {}",
                         rows, tasks, columns ? "ok" : "missing", cpu_tasks, off_tasks);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string baseline;
  std::vector<int> only;
  app.add_option("--baseline", baseline, "criterion 1 baseline file (written on the first passing run)");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  bool froze = false;
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, [&] { return criterion1(baseline, froze); }},
      {2, criterion2},
      {3, criterion3},
      {4, criterion4},
      {5, criterion5},
      {6, criterion6},
      {7, criterion7},
      {8, criterion8},
      {9, criterion9},
  };
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    fmt::print("criterion {}: {} | {}\n", id, o.pass ? "PASS" : "FAIL", o.detail);
    std::fflush(stdout);
  }
  if (froze) fmt::print("baseline written to {}\n", baseline);
  return failed == 0 ? 0 : 1;
}
