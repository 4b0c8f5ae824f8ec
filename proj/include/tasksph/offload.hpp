#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "tasksph/cell_tree.hpp"
#include "tasksph/particles.hpp"
#include "tasksph/records.hpp"
#include "tasksph/sph_loops.hpp"

namespace tasksph {

class Scheduler;

struct OffloadConfig {
  int sp_self = 256;
  int sb_self = 64;
  int sp_pair = 128;
  int sb_pair = 32;
  int stream_pool = 0;  // per worker; 0 selects min(8, S_p / S_b)

  // Rounds each S_b down to a divisor of its S_p and resolves the pool size.
  void normalize();
  int sp(bool pair) const { return pair ? sp_pair : sp_self; }
  int sb(bool pair) const { return pair ? sb_pair : sb_self; }
};

inline constexpr std::uint64_t kMeanRecordBytes = 44;

struct DeviceSizing {
  std::uint64_t n_offload;  // particles per offload cycle
  std::uint64_t m_t;        // bytes per host thread
};
DeviceSizing device_sizing(std::uint64_t n_p, std::uint64_t s_p, std::uint64_t n_c);
// Number of cells of volume 8 h^3 filling a cube of side `box`.
std::uint64_t uniform_cell_count(double box, double h);

std::size_t send_record_size(LoopKind loop);
std::size_t recv_record_size(LoopKind loop);

// ---------------------------------------------------------------------------
// Device backend

enum class DeviceOpKind : std::uint8_t { h2d, kernel, d2h, event };
const char* to_string(DeviceOpKind k);

struct DeviceOp {
  DeviceOpKind kind = DeviceOpKind::event;
  // copies: host pointer <-> device buffer `buffer` at byte `offset`
  const void* host_src = nullptr;
  void* host_dst = nullptr;
  int buffer = -1;
  std::size_t offset = 0;
  std::size_t bytes = 0;
  // kernel: records [first, last) of the send/recv buffers
  LoopKind loop = LoopKind::density;
  int send_buffer = -1;
  int recv_buffer = -1;
  std::size_t first = 0, last = 0;
  int event = -1;
  // trace annotations
  int worker = -1;
  int flush = -1;
  int bundle = -1;
  bool pair = false;
  std::int64_t tasks = 0;
  std::int64_t particles = 0;
  std::int64_t interactions = 0;
};

struct DeviceTraceRow {
  int worker = 0;
  int stream = 0;
  DeviceOpKind op = DeviceOpKind::event;
  LoopKind loop = LoopKind::density;
  bool pair = false;
  int bundle = 0;
  std::int64_t bytes_or_tasks = 0;
  std::int64_t t_submit = 0, t_start = 0, t_end = 0;
  std::int64_t particles = 0;
  std::int64_t interactions = 0;
  int flush = 0;
};

class DeviceBackend {
 public:
  virtual ~DeviceBackend() = default;
  virtual int allocate(std::size_t bytes) = 0;
  virtual int create_stream() = 0;
  virtual int create_event() = 0;
  // Asynchronous; ops on one stream complete in submission order.
  virtual void submit(int stream, const DeviceOp& op) = 0;
  // Blocks until the event's stream reached it.
  virtual void wait_event(int event) = 0;
  virtual bool event_done(int event) const = 0;
  virtual std::vector<DeviceTraceRow> take_trace() = 0;
};

// Copies are memcpy, kernels run the record loops on executor threads. A
// stream is bound to one executor thread, which keeps per-stream FIFO order.
class HostExecutorBackend final : public DeviceBackend {
 public:
  explicit HostExecutorBackend(int threads, SphParams params = {}, double watchdog_seconds = 60.0);
  ~HostExecutorBackend() override;

  int allocate(std::size_t bytes) override;
  int create_stream() override;
  int create_event() override;
  void submit(int stream, const DeviceOp& op) override;
  void wait_event(int event) override;
  bool event_done(int event) const override;
  std::vector<DeviceTraceRow> take_trace() override;

  std::size_t buffer_bytes(int buffer) const;

 private:
  struct Item {
    int stream;
    DeviceOp op;
    std::int64_t t_submit;
  };
  struct Executor {
    std::mutex m;
    std::condition_variable cv;
    std::deque<Item> q;
    std::thread th;
  };
  void run(Executor& ex);
  void execute(const Item& it);

  SphParams params_;
  double watchdog_;
  mutable std::mutex m_;
  std::condition_variable event_cv_;
  std::vector<std::unique_ptr<std::vector<std::byte>>> buffers_;
  std::deque<std::atomic<bool>> events_;
  int streams_ = 0;
  std::vector<std::unique_ptr<Executor>> executors_;
  std::atomic<bool> stop_{false};
  std::mutex trace_m_;
  std::vector<DeviceTraceRow> trace_;
  std::exception_ptr error_;
};

// Trace CSV: worker,stream,op,loop,bundle_id,bytes_or_tasks,t_submit,t_start,t_end,
// followed by particles,interactions,flush,kind
void write_device_trace(const std::string& path, const std::vector<DeviceTraceRow>& rows);

// ---------------------------------------------------------------------------
// Packing

struct PackedTask {
  int task = -1;
  int unpack = -1;            // implicit task completed after the unpack
  std::int32_t first = 0;     // record range [first, last)
  std::int32_t last = 0;
  std::vector<int> locks;     // cells written back on unpack
  std::int64_t interactions = 0;
};

struct PackBuffer {
  int worker = 0;
  LoopKind loop = LoopKind::density;
  bool pair = false;
  std::size_t send_size = 0, recv_size = 0;
  std::size_t capacity = 0;  // records
  std::vector<std::byte> send, recv;
  std::vector<std::int32_t> particle;  // record -> particle index
  std::vector<PackedTask> tasks;
  int send_buffer = -1, recv_buffer = -1;  // device side

  PackBuffer() = default;
  PackBuffer(LoopKind loop, bool pair, std::size_t capacity);
  std::size_t records() const { return particle.size(); }
  std::size_t count() const { return tasks.size(); }
  void reset();
};

// Append one visit's records. Self visits point every record at its own cell;
// pair visits point each side at the other one.
void pack_visit(PackBuffer& buf, const ParticleSystem& ps, const CellTree& tree, const Visit& v, int task, int unpack,
                std::vector<int> locks, double gamma_k);

// Scatter receive records [first, last) back into the accumulators.
void scatter_records(const PackBuffer& buf, ParticleSystem& ps, std::size_t first, std::size_t last);

// Run the record kernel on the host copy of a buffer (no backend involved).
void run_records(PackBuffer& buf, const SphParams& p);

struct BundleRange {
  std::size_t task_first, task_last;  // packed-task indices
};
std::vector<BundleRange> split_bundles(std::size_t count, std::size_t sb);

struct OffloadLoopStats {
  std::int64_t tasks = 0;
  std::int64_t records = 0;
  std::int64_t bytes_h2d = 0;
  std::int64_t bytes_d2h = 0;
  std::int64_t flushes = 0;
  std::int64_t bundles = 0;
  std::int64_t partial_flushes = 0;
};

class OffloadPipeline {
 public:
  OffloadPipeline(const OffloadConfig& cfg, DeviceBackend& backend, int workers, std::size_t capacity_records,
                  double gamma_k);

  // Per-step binding of the data the pack tasks read and the scheduler that
  // owns the implicit unpack tasks.
  void begin_step(Scheduler& sched, ParticleSystem& ps, const CellTree& tree, std::size_t max_visit_records);
  void pack(int worker, LoopKind loop, const Visit& v, int task, int unpack, std::vector<int> locks);
  // Flush buffers that reached S_p (or capacity). Called with no locks held.
  void after_task(int worker);
  // Flush any non-empty buffer of this worker; true if something was flushed.
  bool idle(int worker);
  bool outstanding() const { return nonempty_.load() > 0; }

  const OffloadConfig& config() const { return cfg_; }
  std::size_t capacity() const { return capacity_; }
  const OffloadLoopStats& stats(LoopKind loop) const { return stats_[int(loop)]; }
  void reset_stats();

 private:
  PackBuffer& buffer(int worker, LoopKind loop, bool pair) { return buffers_[(worker * kNumLoops + int(loop)) * 2 + pair]; }
  void flush(int worker, PackBuffer& buf, bool partial);

  OffloadConfig cfg_;
  DeviceBackend& backend_;
  int workers_;
  std::size_t capacity_;
  double gamma_k_;
  std::vector<PackBuffer> buffers_;
  std::vector<std::vector<int>> streams_;  // per worker
  std::vector<int> flush_counter_, bundle_counter_;
  std::atomic<int> nonempty_{0};
  Scheduler* sched_ = nullptr;
  ParticleSystem* ps_ = nullptr;
  const CellTree* tree_ = nullptr;
  std::size_t max_visit_records_ = 0;
  std::mutex stats_m_;
  OffloadLoopStats stats_[kNumLoops];
};

}  // namespace tasksph
