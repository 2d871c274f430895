#pragma once

#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <vector>

#include "specache/common.hpp"
#include "specache/embed_cache.hpp"
#include "specache/json_util.hpp"
#include "specache/teacher.hpp"
#include "specache/verifier.hpp"

namespace specache {

enum class TaskOrigin : std::uint8_t { request_speculation, miss_requeue };

const char* to_string(TaskOrigin origin);

struct PrecomputeTask {
  CacheKey key;
  SimTime enqueued_at = 0.0;
  TaskOrigin origin = TaskOrigin::request_speculation;
  /// Cycle boundary by which the task is scheduled (miss re-enqueues only).
  SimTime due_at = 0.0;
};

struct WorkerConfig {
  std::uint32_t worker_count = 1;
  Duration per_embedding_cost = 0.050;
  Duration cycle_period = 60.0;
  std::size_t queue_capacity = 200000;
  Duration dedup_window = 60.0;
  /// Speculation skips pairs whose cached entry is younger than this
  /// fraction of the read TTL.
  double refresh_skip_fraction = 0.5;
  /// Run a cycle's batches on worker_count threads. Off = sequential replay.
  bool parallel = false;

  void validate() const;
  /// Tasks one cycle can process; unbounded when the cost is zero.
  std::size_t cycle_capacity() const;
};

void to_json(Json& j, const WorkerConfig& c);
WorkerConfig worker_config_from_json(const Json& j, const std::string& path);

struct QueueStats {
  std::uint64_t enqueued_speculation = 0;
  std::uint64_t enqueued_miss = 0;
  std::uint64_t promoted = 0;
  std::uint64_t deduplicated = 0;
  std::uint64_t skipped_fresh = 0;
  std::uint64_t dropped_speculation = 0;
  std::uint64_t dropped_miss = 0;
};

void to_json(Json& j, const QueueStats& s);

/// First cycle boundary strictly after `now`.
SimTime next_cycle_boundary(SimTime now, Duration period);

/// Two-class FIFO of pending teacher work.
///
/// Miss re-enqueues are served before speculation, and under overflow the
/// oldest speculation task is dropped first. A key is queued at most once,
/// and is not re-admitted within dedup_window of its last admission. A miss
/// for a key already queued as speculation promotes that task. Thread-safe:
/// serving threads produce, the cycle runner consumes.
class PrecomputeQueue {
 public:
  explicit PrecomputeQueue(WorkerConfig config);

  /// Enqueues the verifier-selected pairs of `request` that are not already
  /// fresh in `cache` (age <= refresh_skip_fraction * ttl).
  std::vector<PrecomputeTask> speculate(const RankingRequest& request, const VerifierDecision& decision,
                                        const EmbedCache& cache, Duration ttl, SimTime now);

  /// Schedules a serving-path miss for the next refresh cycle. Returns
  /// nullopt when deduplicated against an already queued miss or a recent
  /// admission.
  std::optional<PrecomputeTask> requeue_miss(CacheKey key, SimTime now);

  /// Removes up to `max` tasks, misses first, FIFO within each class.
  std::vector<PrecomputeTask> take_batch(std::size_t max, SimTime now);

  /// Pending tasks in service order, for inspection.
  std::vector<PrecomputeTask> pending() const;

  std::size_t size() const;
  QueueStats stats() const;
  const WorkerConfig& config() const { return config_; }

 private:
  struct Entry {
    PrecomputeTask task;
    std::uint64_t seq;
  };
  struct Queued {
    std::uint64_t seq;
    TaskOrigin origin;
  };

  bool admit_locked(CacheKey key, SimTime now);
  void push_locked(const PrecomputeTask& task);
  bool live_locked(const Entry& e) const;
  void enforce_capacity_locked();
  std::optional<Entry> pop_live_locked(std::deque<Entry>& q);

  WorkerConfig config_;
  mutable std::mutex mu_;
  std::deque<Entry> miss_;
  std::deque<Entry> speculation_;
  std::unordered_map<std::uint64_t, Queued> queued_;
  std::unordered_map<std::uint64_t, SimTime> last_admitted_;
  std::uint64_t next_seq_ = 0;
  QueueStats stats_;
};

struct CycleReport {
  SimTime cycle_start = 0.0;
  std::size_t tasks_processed = 0;
  std::size_t embeddings_written = 0;
  std::size_t failures = 0;
  Duration simulated_worker_time = 0.0;
  std::size_t queue_remaining = 0;
};

void to_json(Json& j, const CycleReport& r);

/// One refresh cycle at logical time `now`: takes up to the cycle capacity
/// from the queue, computes teacher embeddings stamped `now`, writes them to
/// the cache. Tasks the teacher cannot resolve count as failures.
CycleReport run_cycle(PrecomputeQueue& queue, EmbedCache& cache, const Teacher& teacher, SimTime now);

}  // namespace specache
