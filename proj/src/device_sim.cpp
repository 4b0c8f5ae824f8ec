#include "tasksph/device_sim.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace tasksph {

void DeviceModel::validate() const {
  auto pos = [&](double v, const char* key) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(fmt::format("device model: {} must be positive", key));
  };
  pos(h2d_bandwidth, "h2d_bandwidth");
  pos(d2h_bandwidth, "d2h_bandwidth");
  auto nonneg = [&](double v, const char* key) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(fmt::format("device model: {} must be non-negative", key));
  };
  nonneg(launch_overhead, "launch_overhead");
  nonneg(per_interaction, "per_interaction");
  nonneg(per_particle, "per_particle");
  nonneg(latency, "latency");
  if (h2d_engines < 1 || d2h_engines < 1 || kernel_slots < 1)
    throw ConfigError("device model: engine and slot counts must be at least 1");
}

DeviceModel device_preset(const std::string& name) {
  DeviceModel m;
  if (name == "nvlink-like") {
    m.name = name;
    m.h2d_bandwidth = m.d2h_bandwidth = 50e9;
  } else if (name == "pcie4-like") {
    m.name = name;
    m.h2d_bandwidth = m.d2h_bandwidth = 32e9;
  } else {
    throw ConfigError(fmt::format("unknown device model preset '{}'", name));
  }
  return m;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{}: malformed number '{}'", where, v));
  }
}

std::int64_t parse_int(const std::string& v, const std::string& where) {
  std::int64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError(fmt::format("{}: malformed integer '{}'", where, v));
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

DeviceModel load_device_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open device model '{}'", path));
  DeviceModel m;
  m.name = "custom";
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = fmt::format("{}:{}", path, lineno);
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}: expected key = value", where));
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "preset") {
      const std::string keep = m.name;
      m = device_preset(val);
      m.name = keep == "custom" ? val : keep;
    } else if (key == "name") m.name = val;
    else if (key == "h2d_bandwidth") m.h2d_bandwidth = parse_double(val, where);
    else if (key == "d2h_bandwidth") m.d2h_bandwidth = parse_double(val, where);
    else if (key == "h2d_engines") m.h2d_engines = int(parse_int(val, where));
    else if (key == "d2h_engines") m.d2h_engines = int(parse_int(val, where));
    else if (key == "kernel_slots") m.kernel_slots = int(parse_int(val, where));
    else if (key == "launch_overhead") m.launch_overhead = parse_double(val, where);
    else if (key == "per_interaction") m.per_interaction = parse_double(val, where);
    else if (key == "per_particle") m.per_particle = parse_double(val, where);
    else if (key == "latency") m.latency = parse_double(val, where);
    else if (key == "closed_loop") m.closed_loop = parse_int(val, where) != 0;
    else throw ConfigError(fmt::format("{}: unknown device model key '{}'", where, key));
  }
  m.validate();
  return m;
}

const char* to_string(SimResource r) {
  switch (r) {
    case SimResource::none: return "none";
    case SimResource::h2d: return "h2d_engine";
    case SimResource::d2h: return "d2h_engine";
    case SimResource::kernel: return "kernel_slot";
  }
  return "?";
}

std::vector<DeviceTraceRow> read_device_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open trace '{}'", path));
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(fmt::format("{}:1: empty trace", path));
  const auto header = split_csv(trim(line));
  std::map<std::string, int> col;
  for (int i = 0; i < int(header.size()); ++i) col[header[i]] = i;
  for (const char* need : {"worker", "stream", "op", "loop", "bundle_id", "bytes_or_tasks", "t_submit", "t_start",
                           "t_end"})
    if (!col.count(need)) throw ConfigError(fmt::format("{}:1: missing column '{}'", path, need));

  std::vector<DeviceTraceRow> rows;
  std::map<int, std::int64_t> last_submit;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = fmt::format("{}:{}", path, lineno);
    if (f.size() != header.size())
      throw ConfigError(fmt::format("{}: expected {} fields, found {}", where, header.size(), f.size()));
    auto get = [&](const char* k) -> const std::string& { return f[col.at(k)]; };
    DeviceTraceRow r;
    r.worker = int(parse_int(get("worker"), where));
    r.stream = int(parse_int(get("stream"), where));
    if (r.stream < 0) throw ConfigError(fmt::format("{}: unknown stream {}", where, r.stream));
    const std::string& op = get("op");
    if (op == "H2D") r.op = DeviceOpKind::h2d;
    else if (op == "KERNEL") r.op = DeviceOpKind::kernel;
    else if (op == "D2H") r.op = DeviceOpKind::d2h;
    else if (op == "EVENT") r.op = DeviceOpKind::event;
    else throw ConfigError(fmt::format("{}: unknown op '{}'", where, op));
    const std::string& loop = get("loop");
    if (loop == "density") r.loop = LoopKind::density;
    else if (loop == "gradient") r.loop = LoopKind::gradient;
    else if (loop == "force") r.loop = LoopKind::force;
    else throw ConfigError(fmt::format("{}: unknown loop '{}'", where, loop));
    r.bundle = int(parse_int(get("bundle_id"), where));
    r.bytes_or_tasks = parse_int(get("bytes_or_tasks"), where);
    r.t_submit = parse_int(get("t_submit"), where);
    r.t_start = parse_int(get("t_start"), where);
    r.t_end = parse_int(get("t_end"), where);
    r.particles = col.count("particles") ? parse_int(get("particles"), where) : 0;
    r.interactions = col.count("interactions") ? parse_int(get("interactions"), where) : 0;
    r.flush = col.count("flush") ? int(parse_int(get("flush"), where)) : -1;
    r.pair = col.count("kind") ? get("kind") == "pair" : false;
    if (r.bytes_or_tasks < 0) throw ConfigError(fmt::format("{}: negative size", where));
    auto it = last_submit.find(r.worker);
    if (it != last_submit.end() && r.t_submit < it->second)
      throw ConfigError(fmt::format("{}: submission time goes backwards for worker {}", where, r.worker));
    last_submit[r.worker] = r.t_submit;
    rows.push_back(r);
  }
  return rows;
}

namespace {

double op_duration(const DeviceTraceRow& r, const DeviceModel& m) {
  switch (r.op) {
    case DeviceOpKind::h2d: return m.latency + double(r.bytes_or_tasks) / m.h2d_bandwidth;
    case DeviceOpKind::d2h: return m.latency + double(r.bytes_or_tasks) / m.d2h_bandwidth;
    case DeviceOpKind::kernel:
      return m.launch_overhead + m.per_particle * double(r.particles) + m.per_interaction * double(r.interactions);
    case DeviceOpKind::event: return 0.0;
  }
  return 0.0;
}

SimResource resource_of(DeviceOpKind k) {
  switch (k) {
    case DeviceOpKind::h2d: return SimResource::h2d;
    case DeviceOpKind::d2h: return SimResource::d2h;
    case DeviceOpKind::kernel: return SimResource::kernel;
    case DeviceOpKind::event: return SimResource::none;
  }
  return SimResource::none;
}

using Interval = std::pair<double, double>;

std::vector<Interval> merge(std::vector<Interval> v) {
  std::sort(v.begin(), v.end());
  std::vector<Interval> out;
  for (const auto& iv : v) {
    if (iv.second <= iv.first) continue;
    if (!out.empty() && iv.first <= out.back().second) out.back().second = std::max(out.back().second, iv.second);
    else out.push_back(iv);
  }
  return out;
}

double length(const std::vector<Interval>& v) {
  double s = 0.0;
  for (const auto& iv : v) s += iv.second - iv.first;
  return s;
}

double intersection(const std::vector<Interval>& a, const std::vector<Interval>& b) {
  double s = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double lo = std::max(a[i].first, b[j].first);
    const double hi = std::min(a[i].second, b[j].second);
    if (hi > lo) s += hi - lo;
    if (a[i].second < b[j].second) ++i;
    else ++j;
  }
  return s;
}

}  // namespace

SimTimeline simulate(const std::vector<DeviceTraceRow>& trace, const DeviceModel& model) {
  model.validate();
  SimTimeline tl;
  const int n = int(trace.size());
  if (n == 0) return tl;

  std::vector<int> seq(n);
  std::iota(seq.begin(), seq.end(), 0);
  std::stable_sort(seq.begin(), seq.end(), [&](int a, int b) {
    const auto& x = trace[a];
    const auto& y = trace[b];
    if (x.t_submit != y.t_submit) return x.t_submit < y.t_submit;
    if (x.worker != y.worker) return x.worker < y.worker;
    if (x.bundle != y.bundle) return x.bundle < y.bundle;
    return int(x.op) < int(y.op);
  });
  std::vector<int> rank(n);
  for (int k = 0; k < n; ++k) rank[seq[k]] = k;
  std::int64_t t0 = trace[seq[0]].t_submit;

  // release groups: one per (worker, flush) in closed-loop mode, else one per op
  std::map<std::pair<int, int>, int> group_id;
  std::vector<int> group_of(n);
  struct Group {
    int worker;
    std::int64_t submit = std::numeric_limits<std::int64_t>::max();
    std::int64_t real_done = std::numeric_limits<std::int64_t>::min();
    int remaining = 0;
    double release = std::numeric_limits<double>::quiet_NaN();
    double done = 0.0;
    int next = -1;  // following group of the same worker
  };
  std::vector<Group> groups;
  for (int k = 0; k < n; ++k) {
    const int i = seq[k];
    const auto& r = trace[i];
    int g;
    if (model.closed_loop && r.flush >= 0) {
      auto [it, fresh] = group_id.try_emplace({r.worker, r.flush}, int(groups.size()));
      if (fresh) groups.push_back({r.worker});
      g = it->second;
    } else {
      g = int(groups.size());
      groups.push_back({r.worker});
    }
    group_of[i] = g;
    groups[g].submit = std::min(groups[g].submit, r.t_submit);
    groups[g].real_done = std::max(groups[g].real_done, std::max(r.t_end, r.t_submit));
    ++groups[g].remaining;
  }
  {
    std::map<int, int> last_of_worker;
    std::vector<int> gorder(groups.size());
    std::iota(gorder.begin(), gorder.end(), 0);
    std::stable_sort(gorder.begin(), gorder.end(), [&](int a, int b) { return groups[a].submit < groups[b].submit; });
    for (int g : gorder) {
      const bool chained = model.closed_loop && trace[seq[0]].flush >= 0;
      auto it = last_of_worker.find(groups[g].worker);
      if (chained && it != last_of_worker.end()) groups[it->second].next = g;
      else groups[g].release = 1e-9 * double(groups[g].submit - t0);
      if (chained) last_of_worker[groups[g].worker] = g;
    }
  }

  std::map<int, std::vector<int>> stream_ops;
  for (int k = 0; k < n; ++k) stream_ops[trace[seq[k]].stream].push_back(seq[k]);
  struct StreamState {
    std::vector<int> ops;
    std::size_t next = 0;
    double ready = 0.0;
  };
  std::vector<StreamState> streams;
  std::vector<int> stream_ids;
  for (auto& [id, ops] : stream_ops) {
    streams.push_back({std::move(ops)});
    stream_ids.push_back(id);
  }
  std::vector<double> free_h2d(model.h2d_engines, 0.0), free_d2h(model.d2h_engines, 0.0),
      free_k(model.kernel_slots, 0.0);
  auto units = [&](SimResource r) -> std::vector<double>* {
    switch (r) {
      case SimResource::h2d: return &free_h2d;
      case SimResource::d2h: return &free_d2h;
      case SimResource::kernel: return &free_k;
      case SimResource::none: return nullptr;
    }
    return nullptr;
  };

  for (int scheduled = 0; scheduled < n; ++scheduled) {
    int best_s = -1, best_unit = 0;
    double best_start = 0.0, best_ready = 0.0;
    for (int s = 0; s < int(streams.size()); ++s) {
      auto& st = streams[s];
      if (st.next >= st.ops.size()) continue;
      const int i = st.ops[st.next];
      const Group& g = groups[group_of[i]];
      if (std::isnan(g.release)) continue;
      const double ready = std::max(g.release, st.ready);
      double start = ready;
      int unit = 0;
      if (auto* u = units(resource_of(trace[i].op))) {
        unit = int(std::min_element(u->begin(), u->end()) - u->begin());
        start = std::max(ready, (*u)[unit]);
      }
      const bool better = best_s < 0 || start < best_start ||
                          (start == best_start && (ready < best_ready ||
                                                   (ready == best_ready && rank[i] < rank[streams[best_s].ops[streams[best_s].next]])));
      if (better) {
        best_s = s;
        best_start = start;
        best_ready = ready;
        best_unit = unit;
      }
    }
    if (best_s < 0) throw InvariantError("device simulation stalled: no releasable operation");
    auto& st = streams[best_s];
    const int i = st.ops[st.next++];
    const auto& r = trace[i];
    SimOp op;
    op.row = i;
    op.worker = r.worker;
    op.stream = stream_ids[best_s];
    op.flush = r.flush;
    op.bundle = r.bundle;
    op.kind = r.op;
    op.loop = r.loop;
    op.resource = resource_of(r.op);
    op.unit = best_unit;
    op.t_start = best_start;
    op.t_end = best_start + op_duration(r, model);
    if (auto* u = units(op.resource)) (*u)[best_unit] = op.t_end;
    st.ready = op.t_end;
    switch (op.resource) {
      case SimResource::h2d: tl.busy_h2d += op.t_end - op.t_start; break;
      case SimResource::d2h: tl.busy_d2h += op.t_end - op.t_start; break;
      case SimResource::kernel: tl.busy_kernel += op.t_end - op.t_start; break;
      case SimResource::none: break;
    }
    tl.makespan = std::max(tl.makespan, op.t_end);
    Group& g = groups[group_of[i]];
    g.done = std::max(g.done, op.t_end);
    if (--g.remaining == 0 && g.next >= 0) {
      Group& nx = groups[g.next];
      nx.release = g.done + std::max(0.0, 1e-9 * double(nx.submit - g.real_done));
    }
    tl.ops.push_back(op);
  }
  tl.overlap = overlap_fraction(tl);
  return tl;
}

double overlap_fraction(const SimTimeline& tl) {
  std::vector<Interval> k, c;
  for (const auto& op : tl.ops) {
    if (op.resource == SimResource::kernel) k.push_back({op.t_start, op.t_end});
    else if (op.resource == SimResource::h2d || op.resource == SimResource::d2h) c.push_back({op.t_start, op.t_end});
  }
  const auto K = merge(std::move(k));
  const auto C = merge(std::move(c));
  const double kb = length(K);
  if (kb <= 0.0 || C.empty()) return 0.0;
  return intersection(K, C) / kb;
}

void write_sim_timeline(const std::string& path, const SimTimeline& tl) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ConfigError(fmt::format("cannot open '{}'", path));
  fmt::print(f, "op,stream,t_start,t_end,resource,worker,bundle_id,loop\n");
  for (const auto& op : tl.ops)
    fmt::print(f, "{},{},{:.9e},{:.9e},{},{},{},{}\n", to_string(op.kind), op.stream, op.t_start, op.t_end,
               to_string(op.resource), op.worker, op.bundle, to_string(op.loop));
  std::fclose(f);
}

void write_sim_metrics(const std::string& path, const SimTimeline& tl, const DeviceModel& model) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ConfigError(fmt::format("cannot open '{}'", path));
  fmt::print(f, "model={}\nops={}\nmakespan={:.9e}\noverlap_fraction={:.6f}\n", model.name, tl.ops.size(), tl.makespan,
             tl.overlap);
  fmt::print(f, "busy_h2d={:.9e}\nbusy_d2h={:.9e}\nbusy_kernel={:.9e}\n", tl.busy_h2d, tl.busy_d2h, tl.busy_kernel);
  std::fclose(f);
}

std::vector<DeviceTraceRow> rebundle_trace(const std::vector<DeviceTraceRow>& trace, int sb_self, int sb_pair,
                                           int pool) {
  if (sb_self < 1 || sb_pair < 1 || pool < 1) throw UsageError("rebundle_trace: sizes must be positive");
  struct Bundle {
    LoopKind loop;
    bool pair;
    std::int64_t h2d = 0, d2h = 0, tasks = 0, particles = 0, interactions = 0;
  };
  struct Flush {
    int worker, flush;
    std::int64_t submit = std::numeric_limits<std::int64_t>::max();
    std::int64_t done = std::numeric_limits<std::int64_t>::min();
    std::map<int, Bundle> bundles;
  };
  std::map<std::pair<int, int>, Flush> flushes;
  for (const auto& r : trace) {
    if (r.flush < 0) throw UsageError("rebundle_trace: trace rows carry no flush ids");
    auto [it, fresh] = flushes.try_emplace({r.worker, r.flush});
    Flush& f = it->second;
    if (fresh) {
      f.worker = r.worker;
      f.flush = r.flush;
    }
    f.submit = std::min(f.submit, r.t_submit);
    f.done = std::max(f.done, r.t_end);
    auto [bt, bfresh] = f.bundles.try_emplace(r.bundle, Bundle{r.loop, r.pair});
    Bundle& b = bt->second;
    switch (r.op) {
      case DeviceOpKind::h2d: b.h2d += r.bytes_or_tasks; break;
      case DeviceOpKind::d2h: b.d2h += r.bytes_or_tasks; break;
      case DeviceOpKind::kernel:
        b.tasks += r.bytes_or_tasks;
        b.particles += r.particles;
        b.interactions += r.interactions;
        break;
      case DeviceOpKind::event: break;
    }
  }
  std::vector<DeviceTraceRow> out;
  std::map<int, int> next_bundle;
  std::vector<const Flush*> order;
  for (const auto& [key, f] : flushes) order.push_back(&f);
  std::stable_sort(order.begin(), order.end(), [](const Flush* a, const Flush* b) { return a->submit < b->submit; });
  for (const Flush* f : order) {
    std::vector<Bundle> merged;
    for (const auto& [id, b] : f->bundles) {
      const int sb = b.pair ? sb_pair : sb_self;
      if (merged.empty() || merged.back().tasks + b.tasks > sb) {
        merged.push_back(b);
      } else {
        Bundle& m = merged.back();
        m.h2d += b.h2d;
        m.d2h += b.d2h;
        m.tasks += b.tasks;
        m.particles += b.particles;
        m.interactions += b.interactions;
      }
    }
    for (std::size_t k = 0; k < merged.size(); ++k) {
      const Bundle& b = merged[k];
      DeviceTraceRow r;
      r.worker = f->worker;
      r.stream = f->worker * pool + int(k % std::size_t(pool));
      r.loop = b.loop;
      r.pair = b.pair;
      r.bundle = next_bundle[f->worker]++;
      r.t_submit = f->submit;
      r.t_start = f->submit;
      r.t_end = f->done;
      r.particles = b.particles;
      r.flush = f->flush;
      r.op = DeviceOpKind::h2d;
      r.bytes_or_tasks = b.h2d;
      out.push_back(r);
      r.op = DeviceOpKind::kernel;
      r.bytes_or_tasks = b.tasks;
      r.interactions = b.interactions;
      out.push_back(r);
      r.op = DeviceOpKind::d2h;
      r.bytes_or_tasks = b.d2h;
      r.interactions = 0;
      out.push_back(r);
      r.op = DeviceOpKind::event;
      r.bytes_or_tasks = 0;
      out.push_back(r);
    }
  }
  return out;
}

std::vector<SweepRow> sweep(const TraceGenerator& gen, const std::vector<int>& sp_list, const std::vector<int>& sb_list,
                            const DeviceModel& model) {
  std::vector<SweepRow> rows;
  for (int sp : sp_list)
    for (int sb : sb_list) {
      if (sb > sp) continue;
      const SimTimeline tl = simulate(gen(sp, sb), model);
      rows.push_back({sp, sb, tl.makespan, tl.overlap});
    }
  return rows;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ConfigError(fmt::format("cannot open '{}'", path));
  fmt::print(f, "sp,sb,makespan_s,overlap_fraction\n");
  for (const auto& r : rows) fmt::print(f, "{},{},{:.9e},{:.6f}\n", r.sp, r.sb, r.makespan, r.overlap);
  std::map<int, std::vector<SweepRow>> by_sp;
  for (const auto& r : rows) by_sp[r.sp].push_back(r);
  for (auto& [sp, v] : by_sp) {
    std::sort(v.begin(), v.end(), [](const SweepRow& a, const SweepRow& b) { return a.sb > b.sb; });
    bool dec = true, inc = true;
    for (std::size_t k = 1; k < v.size(); ++k) {
      if (v[k].makespan > v[k - 1].makespan) dec = false;
      if (v[k].makespan < v[k - 1].makespan) inc = false;
    }
    const char* verdict = v.size() < 2 ? "single point" : dec ? "makespan non-increasing as sb shrinks"
                                                      : inc ? "makespan non-decreasing as sb shrinks"
                                                            : "makespan not monotone in sb";
    fmt::print(f, "# sp={}: {}\n", sp, verdict);
  }
  std::fclose(f);
}

}  // namespace tasksph
