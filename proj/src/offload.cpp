#include "tasksph/offload.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "tasksph/scheduler.hpp"

namespace tasksph {

void OffloadConfig::normalize() {
  for (bool pair : {false, true}) {
    int& sp = pair ? sp_pair : sp_self;
    int& sb = pair ? sb_pair : sb_self;
    const char* name = pair ? "pair" : "self";
    if (sp < 1 || sb < 1) throw ConfigError(fmt::format("sp_{0} and sb_{0} must be positive", name));
    if (sb > sp) throw ConfigError(fmt::format("sb_{0} ({1}) exceeds sp_{0} ({2})", name, sb, sp));
    while (sp % sb != 0) --sb;
  }
  if (stream_pool <= 0) stream_pool = std::min(8, std::max(sp_self / sb_self, sp_pair / sb_pair));
}

DeviceSizing device_sizing(std::uint64_t n_p, std::uint64_t s_p, std::uint64_t n_c) {
  if (n_c == 0) throw ConfigError("device_sizing: cell count must be positive");
  if (n_p == 0 || s_p == 0) throw ConfigError("device_sizing: particle count and pack size must be positive");
  const std::uint64_t n_off = s_p * n_p / n_c;
  return {n_off, 4ull * std::uint64_t(kNumLoops) * n_off * kMeanRecordBytes};
}

std::uint64_t uniform_cell_count(double box, double h) {
  if (!(h > 0.0)) throw ConfigError("uniform_cell_count: h must be positive");
  return std::max<std::uint64_t>(1, std::uint64_t(std::floor(box * box * box / (8.0 * h * h * h))));
}

std::size_t send_record_size(LoopKind loop) {
  switch (loop) {
    case LoopKind::density: return sizeof(SendDensity);
    case LoopKind::gradient: return sizeof(SendGradient);
    case LoopKind::force: return sizeof(SendForce);
  }
  return 0;
}

std::size_t recv_record_size(LoopKind loop) {
  switch (loop) {
    case LoopKind::density: return sizeof(RecvDensity);
    case LoopKind::gradient: return sizeof(RecvGradient);
    case LoopKind::force: return sizeof(RecvForce);
  }
  return 0;
}

const char* to_string(DeviceOpKind k) {
  switch (k) {
    case DeviceOpKind::h2d: return "H2D";
    case DeviceOpKind::kernel: return "KERNEL";
    case DeviceOpKind::d2h: return "D2H";
    case DeviceOpKind::event: return "EVENT";
  }
  return "?";
}

// ---------------------------------------------------------------------------

HostExecutorBackend::HostExecutorBackend(int threads, SphParams params, double watchdog_seconds)
    : params_(params), watchdog_(watchdog_seconds) {
  threads = std::max(1, threads);
  for (int t = 0; t < threads; ++t) executors_.push_back(std::make_unique<Executor>());
  for (auto& ex : executors_) ex->th = std::thread([this, e = ex.get()] { run(*e); });
}

HostExecutorBackend::~HostExecutorBackend() {
  stop_ = true;
  for (auto& ex : executors_) {
    { std::lock_guard lk(ex->m); }
    ex->cv.notify_all();
  }
  for (auto& ex : executors_) ex->th.join();
}

int HostExecutorBackend::allocate(std::size_t bytes) {
  std::lock_guard lk(m_);
  buffers_.push_back(std::make_unique<std::vector<std::byte>>(bytes));
  return int(buffers_.size()) - 1;
}

std::size_t HostExecutorBackend::buffer_bytes(int buffer) const {
  std::lock_guard lk(m_);
  return buffers_.at(buffer)->size();
}

int HostExecutorBackend::create_stream() {
  std::lock_guard lk(m_);
  return streams_++;
}

int HostExecutorBackend::create_event() {
  std::lock_guard lk(m_);
  events_.emplace_back(false);
  return int(events_.size()) - 1;
}

void HostExecutorBackend::submit(int stream, const DeviceOp& op) {
  {
    std::lock_guard lk(m_);
    if (stream < 0 || stream >= streams_) throw UsageError(fmt::format("submit: unknown stream {}", stream));
  }
  Executor& ex = *executors_[stream % executors_.size()];
  {
    std::lock_guard lk(ex.m);
    ex.q.push_back({stream, op, now_ns()});
  }
  ex.cv.notify_one();
}

void HostExecutorBackend::run(Executor& ex) {
  for (;;) {
    Item it;
    {
      std::unique_lock lk(ex.m);
      ex.cv.wait(lk, [&] { return stop_.load() || !ex.q.empty(); });
      if (ex.q.empty()) return;
      it = ex.q.front();
      ex.q.pop_front();
    }
    execute(it);
  }
}

void HostExecutorBackend::execute(const Item& it) {
  const DeviceOp& op = it.op;
  const std::int64_t t_start = now_ns();
  try {
    auto buf = [&](int id) {
      std::lock_guard lk(m_);
      return buffers_.at(id).get();
    };
    switch (op.kind) {
      case DeviceOpKind::h2d: {
        auto* dev = buf(op.buffer);
        if (op.offset + op.bytes > dev->size()) throw Error("device buffer exhausted on copy to device");
        std::memcpy(dev->data() + op.offset, op.host_src, op.bytes);
        break;
      }
      case DeviceOpKind::d2h: {
        auto* dev = buf(op.buffer);
        if (op.offset + op.bytes > dev->size()) throw Error("device buffer exhausted on copy from device");
        std::memcpy(op.host_dst, dev->data() + op.offset, op.bytes);
        break;
      }
      case DeviceOpKind::kernel: {
        auto* s = buf(op.send_buffer);
        auto* r = buf(op.recv_buffer);
        const std::size_t ns = s->size() / send_record_size(op.loop);
        const std::size_t nr = r->size() / recv_record_size(op.loop);
        if (op.last > ns || op.last > nr) throw Error("device buffer exhausted in kernel");
        switch (op.loop) {
          case LoopKind::density:
            density_interact({reinterpret_cast<const SendDensity*>(s->data()), ns},
                             {reinterpret_cast<RecvDensity*>(r->data()), nr}, op.first, op.last, params_);
            break;
          case LoopKind::gradient:
            gradient_interact({reinterpret_cast<const SendGradient*>(s->data()), ns},
                              {reinterpret_cast<RecvGradient*>(r->data()), nr}, op.first, op.last, params_);
            break;
          case LoopKind::force:
            force_interact({reinterpret_cast<const SendForce*>(s->data()), ns},
                           {reinterpret_cast<RecvForce*>(r->data()), nr}, op.first, op.last, params_);
            break;
        }
        break;
      }
      case DeviceOpKind::event:
        break;
    }
  } catch (...) {
    std::lock_guard lk(m_);
    if (!error_) error_ = std::current_exception();
  }
  const std::int64_t t_end = now_ns();
  {
    DeviceTraceRow row;
    row.worker = op.worker;
    row.stream = it.stream;
    row.op = op.kind;
    row.loop = op.loop;
    row.pair = op.pair;
    row.bundle = op.bundle;
    row.bytes_or_tasks = op.kind == DeviceOpKind::kernel ? op.tasks : std::int64_t(op.bytes);
    row.t_submit = it.t_submit;
    row.t_start = t_start;
    row.t_end = t_end;
    row.particles = op.particles;
    row.interactions = op.kind == DeviceOpKind::kernel ? op.interactions : 0;
    row.flush = op.flush;
    std::lock_guard lk(trace_m_);
    trace_.push_back(row);
  }
  if (op.kind == DeviceOpKind::event) {
    {
      std::lock_guard lk(m_);
      events_.at(op.event) = true;
    }
    event_cv_.notify_all();
  }
}

void HostExecutorBackend::wait_event(int event) {
  std::unique_lock lk(m_);
  const bool fired = event_cv_.wait_for(lk, std::chrono::duration<double>(watchdog_),
                                        [&] { return events_.at(event).load() || error_ != nullptr; });
  if (error_) std::rethrow_exception(error_);
  if (!fired) throw Error(fmt::format("device watchdog: event {} did not fire within {} s", event, watchdog_));
}

bool HostExecutorBackend::event_done(int event) const {
  std::lock_guard lk(m_);
  return events_.at(event).load();
}

std::vector<DeviceTraceRow> HostExecutorBackend::take_trace() {
  std::lock_guard lk(trace_m_);
  std::vector<DeviceTraceRow> out;
  out.swap(trace_);
  // completion order differs across streams; report in submission order
  std::stable_sort(out.begin(), out.end(), [](const DeviceTraceRow& a, const DeviceTraceRow& b) {
    if (a.t_submit != b.t_submit) return a.t_submit < b.t_submit;
    if (a.worker != b.worker) return a.worker < b.worker;
    if (a.bundle != b.bundle) return a.bundle < b.bundle;
    return int(a.op) < int(b.op);
  });
  return out;
}

void write_device_trace(const std::string& path, const std::vector<DeviceTraceRow>& rows) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ConfigError(fmt::format("cannot open trace file '{}'", path));
  fmt::print(f,
             "worker,stream,op,loop,bundle_id,bytes_or_tasks,t_submit,t_start,t_end,particles,interactions,flush,kind\n");
  for (const auto& r : rows)
    fmt::print(f, "{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.worker, r.stream, to_string(r.op), to_string(r.loop),
               r.bundle, r.bytes_or_tasks, r.t_submit, r.t_start, r.t_end, r.particles, r.interactions, r.flush,
               r.pair ? "pair" : "self");
  std::fclose(f);
}

// ---------------------------------------------------------------------------

PackBuffer::PackBuffer(LoopKind loop_, bool pair_, std::size_t capacity_)
    : loop(loop_), pair(pair_), send_size(send_record_size(loop_)), recv_size(recv_record_size(loop_)),
      capacity(capacity_) {
  send.resize(capacity * send_size);
  recv.resize(capacity * recv_size);
  particle.reserve(capacity);
}

void PackBuffer::reset() {
  particle.clear();
  tasks.clear();
}

namespace {

Float4 f4(const Vec3f& v, float w) { return {v.x, v.y, v.z, w}; }

void write_record(PackBuffer& buf, std::size_t k, const ParticleSystem& ps, std::int32_t i, const Vec3f& x,
                  Index2 range) {
  std::byte* dst = buf.send.data() + k * buf.send_size;
  switch (buf.loop) {
    case LoopKind::density: {
      const SendDensity r{f4(x, ps.h[i]), f4(ps.v[i], ps.m[i]), range};
      std::memcpy(dst, &r, sizeof r);
      break;
    }
    case LoopKind::gradient: {
      const SendGradient r{f4(x, ps.h[i]), f4(ps.v[i], ps.rho[i]), {ps.P[i], ps.cs[i], ps.u[i], ps.m[i]}, range};
      std::memcpy(dst, &r, sizeof r);
      break;
    }
    case LoopKind::force: {
      const SendForce r{f4(x, ps.h[i]),
                        f4(ps.v[i], ps.m[i]),
                        {ps.rho[i], ps.P[i], ps.cs[i], ps.u[i]},
                        {ps.f[i], ps.alpha_v[i], ps.balsara[i], ps.alpha_c[i]},
                        range};
      std::memcpy(dst, &r, sizeof r);
      break;
    }
  }
}

}  // namespace

void pack_visit(PackBuffer& buf, const ParticleSystem& ps, const CellTree& tree, const Visit& v, int task, int unpack,
                std::vector<int> locks, double gamma_k) {
  const Cell& ca = tree.cells[v.a];
  const bool pair = v.b >= 0;
  const std::size_t na = std::size_t(ca.count);
  const std::size_t nb = pair ? std::size_t(tree.cells[v.b].count) : 0;
  const std::size_t start = buf.records();
  if (start + na + nb > buf.capacity)
    throw InvariantError(fmt::format("pack buffer overflow: {} + {} records exceed capacity {}", start, na + nb,
                                     buf.capacity));
  PackedTask t;
  t.task = task;
  t.unpack = unpack;
  t.first = std::int32_t(start);
  t.last = std::int32_t(start + na + nb);
  t.locks = std::move(locks);

  const Index2 range_a{std::int32_t(start), std::int32_t(start + na) - 1};
  const Index2 range_b{std::int32_t(start + na), std::int32_t(start + na + nb) - 1};
  std::vector<Vec3f> xa(na), xb(nb);
  const Vec3d centre_a = ca.center();
  for (std::size_t k = 0; k < na; ++k) {
    const std::int32_t i = ca.first + std::int32_t(k);
    xa[k] = cell_position(ps, i, centre_a, {});
    write_record(buf, start + k, ps, i, xa[k], pair ? range_b : range_a);
    buf.particle.push_back(i);
  }
  if (pair) {
    const Cell& cb = tree.cells[v.b];
    const Vec3d centre_b = cb.center();
    for (std::size_t k = 0; k < nb; ++k) {
      const std::int32_t i = cb.first + std::int32_t(k);
      xb[k] = cell_position(ps, i, centre_b, v.shift);
      write_record(buf, start + na + k, ps, i, xb[k], range_a);
      buf.particle.push_back(i);
    }
    // interactions actually inside the support, the estimate the device model charges
    std::int64_t n = 0;
    for (std::size_t p = 0; p < na; ++p)
      for (std::size_t q = 0; q < nb; ++q) {
        const double H = gamma_k * std::max(ps.h[ca.first + p], ps.h[cb.first + q]);
        if (norm2((xa[p] - xb[q]).as<double>()) < H * H) ++n;
      }
    t.interactions = n;
  } else {
    t.interactions = std::int64_t(na) * std::int64_t(na - (na > 0)) / 2;
  }
  buf.tasks.push_back(std::move(t));
}

void scatter_records(const PackBuffer& buf, ParticleSystem& ps, std::size_t first, std::size_t last) {
  for (std::size_t k = first; k < last; ++k) {
    const std::int32_t i = buf.particle[k];
    const std::byte* src = buf.recv.data() + k * buf.recv_size;
    switch (buf.loop) {
      case LoopKind::density: {
        RecvDensity r;
        std::memcpy(&r, src, sizeof r);
        ps.acc_rho[i] += r.rho_drho_wcount_dwcount.x;
        ps.acc_drho_dh[i] += r.rho_drho_wcount_dwcount.y;
        ps.acc_wcount[i] += r.rho_drho_wcount_dwcount.z;
        ps.acc_dwcount_dh[i] += r.rho_drho_wcount_dwcount.w;
        ps.acc_curl[i] += Vec3d{r.curl_div.x, r.curl_div.y, r.curl_div.z};
        ps.acc_div[i] += r.curl_div.w;
        break;
      }
      case LoopKind::gradient: {
        RecvGradient r;
        std::memcpy(&r, src, sizeof r);
        ps.acc_vsig[i] = std::max(ps.acc_vsig[i], r.vsig_lapu.x);
        ps.acc_lap_u[i] += r.vsig_lapu.y;
        break;
      }
      case LoopKind::force: {
        RecvForce r;
        std::memcpy(&r, src, sizeof r);
        ps.acc_a[i] += Vec3d{r.a_udt.x, r.a_udt.y, r.a_udt.z};
        ps.acc_u_dt[i] += r.a_udt.w;
        ps.acc_vsig[i] = std::max(ps.acc_vsig[i], r.vsig_hdt.x);
        ps.acc_h_dt[i] += r.vsig_hdt.y;
        break;
      }
    }
  }
}

void run_records(PackBuffer& buf, const SphParams& p) {
  const std::size_t n = buf.records();
  switch (buf.loop) {
    case LoopKind::density:
      density_interact({reinterpret_cast<const SendDensity*>(buf.send.data()), n},
                       {reinterpret_cast<RecvDensity*>(buf.recv.data()), n}, 0, n, p);
      break;
    case LoopKind::gradient:
      gradient_interact({reinterpret_cast<const SendGradient*>(buf.send.data()), n},
                        {reinterpret_cast<RecvGradient*>(buf.recv.data()), n}, 0, n, p);
      break;
    case LoopKind::force:
      force_interact({reinterpret_cast<const SendForce*>(buf.send.data()), n},
                     {reinterpret_cast<RecvForce*>(buf.recv.data()), n}, 0, n, p);
      break;
  }
}

std::vector<BundleRange> split_bundles(std::size_t count, std::size_t sb) {
  if (sb == 0) throw UsageError("split_bundles: bundle size must be positive");
  std::vector<BundleRange> out;
  for (std::size_t k = 0; k < count; k += sb) out.push_back({k, std::min(count, k + sb)});
  return out;
}

// ---------------------------------------------------------------------------

OffloadPipeline::OffloadPipeline(const OffloadConfig& cfg, DeviceBackend& backend, int workers,
                                 std::size_t capacity_records, double gamma_k)
    : cfg_(cfg), backend_(backend), workers_(workers), capacity_(capacity_records), gamma_k_(gamma_k) {
  cfg_.normalize();
  for (int w = 0; w < workers; ++w) {
    for (int l = 0; l < kNumLoops; ++l)
      for (bool pair : {false, true}) {
        PackBuffer b(LoopKind(l), pair, capacity_);
        b.worker = w;
        b.send_buffer = backend_.allocate(capacity_ * b.send_size);
        b.recv_buffer = backend_.allocate(capacity_ * b.recv_size);
        buffers_.push_back(std::move(b));
      }
    std::vector<int> s;
    for (int k = 0; k < cfg_.stream_pool; ++k) s.push_back(backend_.create_stream());
    streams_.push_back(std::move(s));
  }
  flush_counter_.assign(workers, 0);
  bundle_counter_.assign(workers, 0);
}

void OffloadPipeline::begin_step(Scheduler& sched, ParticleSystem& ps, const CellTree& tree,
                                 std::size_t max_visit_records) {
  if (max_visit_records > capacity_)
    throw ConfigError(fmt::format("offload buffers hold {} records but one task needs {}", capacity_,
                                  max_visit_records));
  sched_ = &sched;
  ps_ = &ps;
  tree_ = &tree;
  max_visit_records_ = max_visit_records;
}

void OffloadPipeline::reset_stats() {
  std::lock_guard lk(stats_m_);
  for (auto& s : stats_) s = {};
}

void OffloadPipeline::pack(int worker, LoopKind loop, const Visit& v, int task, int unpack, std::vector<int> locks) {
  PackBuffer& buf = buffer(worker, loop, v.b >= 0);
  if (buf.count() == 0) ++nonempty_;
  pack_visit(buf, *ps_, *tree_, v, task, unpack, std::move(locks), gamma_k_);
}

void OffloadPipeline::after_task(int worker) {
  for (int l = 0; l < kNumLoops; ++l)
    for (bool pair : {false, true}) {
      PackBuffer& buf = buffer(worker, LoopKind(l), pair);
      if (buf.count() == 0) continue;
      if (buf.count() >= std::size_t(cfg_.sp(pair)) || buf.records() + max_visit_records_ > capacity_)
        flush(worker, buf, buf.count() < std::size_t(cfg_.sp(pair)));
    }
}

bool OffloadPipeline::idle(int worker) {
  bool any = false;
  for (int l = 0; l < kNumLoops; ++l)
    for (bool pair : {false, true}) {
      PackBuffer& buf = buffer(worker, LoopKind(l), pair);
      if (buf.count() == 0) continue;
      flush(worker, buf, buf.count() < std::size_t(cfg_.sp(pair)));
      any = true;
    }
  return any;
}

void OffloadPipeline::flush(int worker, PackBuffer& buf, bool partial) {
  const auto bundles = split_bundles(buf.count(), std::size_t(cfg_.sb(buf.pair)));
  const auto& streams = streams_[worker];
  const int flush_id = flush_counter_[worker]++;
  std::vector<int> events;
  std::int64_t h2d = 0, d2h = 0;

  for (std::size_t k = 0; k < bundles.size(); ++k) {
    const auto& b = bundles[k];
    const std::size_t r0 = std::size_t(buf.tasks[b.task_first].first);
    const std::size_t r1 = std::size_t(buf.tasks[b.task_last - 1].last);
    const int stream = streams[k % streams.size()];
    DeviceOp base;
    base.loop = buf.loop;
    base.pair = buf.pair;
    base.worker = worker;
    base.flush = flush_id;
    base.bundle = bundle_counter_[worker]++;
    base.tasks = std::int64_t(b.task_last - b.task_first);
    base.particles = std::int64_t(r1 - r0);
    for (std::size_t t = b.task_first; t < b.task_last; ++t) base.interactions += buf.tasks[t].interactions;

    DeviceOp in = base;
    in.kind = DeviceOpKind::h2d;
    in.host_src = buf.send.data() + r0 * buf.send_size;
    in.buffer = buf.send_buffer;
    in.offset = r0 * buf.send_size;
    in.bytes = (r1 - r0) * buf.send_size;
    DeviceOp kern = base;
    kern.kind = DeviceOpKind::kernel;
    kern.send_buffer = buf.send_buffer;
    kern.recv_buffer = buf.recv_buffer;
    kern.first = r0;
    kern.last = r1;
    DeviceOp out = base;
    out.kind = DeviceOpKind::d2h;
    out.host_dst = buf.recv.data() + r0 * buf.recv_size;
    out.buffer = buf.recv_buffer;
    out.offset = r0 * buf.recv_size;
    out.bytes = (r1 - r0) * buf.recv_size;
    DeviceOp ev = base;
    ev.kind = DeviceOpKind::event;
    ev.event = backend_.create_event();
    events.push_back(ev.event);
    h2d += std::int64_t(in.bytes);
    d2h += std::int64_t(out.bytes);

    backend_.submit(stream, in);
    backend_.submit(stream, kern);
    backend_.submit(stream, out);
    backend_.submit(stream, ev);
  }

  struct Done {
    int unpack;
    std::int64_t t0, t1;
  };
  std::vector<Done> done;
  done.reserve(buf.count());
  for (std::size_t k = 0; k < bundles.size(); ++k) {
    backend_.wait_event(events[k]);
    if (!backend_.event_done(events[k]))
      throw InvariantError(fmt::format("receive records of bundle {} read before its event fired", k));
    const auto& b = bundles[k];
    std::vector<int> locks;
    for (std::size_t t = b.task_first; t < b.task_last; ++t)
      locks.insert(locks.end(), buf.tasks[t].locks.begin(), buf.tasks[t].locks.end());
    std::sort(locks.begin(), locks.end());
    locks.erase(std::unique(locks.begin(), locks.end()), locks.end());
    const std::int64_t t0 = now_ns();
    sched_->lock_blocking(locks);
    scatter_records(buf, *ps_, std::size_t(buf.tasks[b.task_first].first),
                    std::size_t(buf.tasks[b.task_last - 1].last));
    sched_->unlock(locks);
    const std::int64_t t1 = now_ns();
    for (std::size_t t = b.task_first; t < b.task_last; ++t)
      if (buf.tasks[t].unpack >= 0) done.push_back({buf.tasks[t].unpack, t0, t1});
  }

  {
    std::lock_guard lk(stats_m_);
    OffloadLoopStats& s = stats_[int(buf.loop)];
    s.tasks += std::int64_t(buf.count());
    s.records += std::int64_t(buf.records());
    s.bytes_h2d += h2d;
    s.bytes_d2h += d2h;
    s.flushes += 1;
    s.bundles += std::int64_t(bundles.size());
    s.partial_flushes += partial ? 1 : 0;
  }
  buf.reset();
  --nonempty_;
  // Dependents become runnable only once the whole pack is back.
  for (const Done& d : done) sched_->complete_implicit(d.unpack, worker, d.t0, d.t1);
}

}  // namespace tasksph
