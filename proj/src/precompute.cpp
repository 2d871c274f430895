#include "specache/precompute.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace specache {

const char* to_string(TaskOrigin origin) {
  return origin == TaskOrigin::miss_requeue ? "miss_requeue" : "request_speculation";
}

void WorkerConfig::validate() const {
  if (worker_count < 1) throw ValidationError("worker_count must be >= 1");
  if (!(per_embedding_cost >= 0.0)) throw ValidationError("per_embedding_cost must be >= 0");
  if (!(cycle_period > 0.0)) throw ValidationError("cycle_period must be positive");
  if (queue_capacity < 1) throw ValidationError("queue_capacity must be >= 1");
  if (!(dedup_window >= 0.0)) throw ValidationError("dedup_window must be >= 0");
  if (!(refresh_skip_fraction >= 0.0 && refresh_skip_fraction <= 1.0))
    throw ValidationError("refresh_skip_fraction must lie in [0, 1]");
}

std::size_t WorkerConfig::cycle_capacity() const {
  if (per_embedding_cost <= 0.0) return std::numeric_limits<std::size_t>::max();
  const double per_worker = std::floor(cycle_period / per_embedding_cost + 1e-9);
  return static_cast<std::size_t>(per_worker) * worker_count;
}

void to_json(Json& j, const WorkerConfig& c) {
  j = Json{{"worker_count", c.worker_count},
           {"per_embedding_cost", c.per_embedding_cost},
           {"cycle_period", c.cycle_period},
           {"queue_capacity", c.queue_capacity},
           {"dedup_window", c.dedup_window},
           {"refresh_skip_fraction", c.refresh_skip_fraction},
           {"parallel", c.parallel}};
}

WorkerConfig worker_config_from_json(const Json& j, const std::string& path) {
  WorkerConfig c;
  StrictObject o(j, path);
  o.read("worker_count", c.worker_count);
  o.read("per_embedding_cost", c.per_embedding_cost);
  o.read("cycle_period", c.cycle_period);
  o.read("queue_capacity", c.queue_capacity);
  o.read("dedup_window", c.dedup_window);
  o.read("refresh_skip_fraction", c.refresh_skip_fraction);
  o.read("parallel", c.parallel);
  o.finish();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(path, e.what());
  }
  return c;
}

void to_json(Json& j, const QueueStats& s) {
  j = Json{{"enqueued_speculation", s.enqueued_speculation},
           {"enqueued_miss", s.enqueued_miss},
           {"promoted", s.promoted},
           {"deduplicated", s.deduplicated},
           {"skipped_fresh", s.skipped_fresh},
           {"dropped_speculation", s.dropped_speculation},
           {"dropped_miss", s.dropped_miss}};
}

SimTime next_cycle_boundary(SimTime now, Duration period) { return (std::floor(now / period) + 1.0) * period; }

PrecomputeQueue::PrecomputeQueue(WorkerConfig config) : config_(config) { config_.validate(); }

bool PrecomputeQueue::live_locked(const Entry& e) const {
  auto it = queued_.find(e.task.key.packed());
  return it != queued_.end() && it->second.seq == e.seq;
}

bool PrecomputeQueue::admit_locked(CacheKey key, SimTime now) {
  const std::uint64_t packed = key.packed();
  if (queued_.count(packed)) return false;
  auto it = last_admitted_.find(packed);
  if (it != last_admitted_.end() && now - it->second < config_.dedup_window) return false;
  return true;
}

void PrecomputeQueue::push_locked(const PrecomputeTask& task) {
  const std::uint64_t seq = next_seq_++;
  const std::uint64_t packed = task.key.packed();
  queued_[packed] = Queued{seq, task.origin};
  (task.origin == TaskOrigin::miss_requeue ? miss_ : speculation_).push_back(Entry{task, seq});
  enforce_capacity_locked();
}

std::optional<PrecomputeQueue::Entry> PrecomputeQueue::pop_live_locked(std::deque<Entry>& q) {
  while (!q.empty()) {
    Entry e = q.front();
    q.pop_front();
    if (live_locked(e)) return e;
  }
  return std::nullopt;
}

void PrecomputeQueue::enforce_capacity_locked() {
  while (queued_.size() > config_.queue_capacity) {
    auto victim = pop_live_locked(speculation_);
    if (victim) {
      ++stats_.dropped_speculation;
    } else {
      victim = pop_live_locked(miss_);
      ++stats_.dropped_miss;
    }
    queued_.erase(victim->task.key.packed());
  }
}

std::vector<PrecomputeTask> PrecomputeQueue::speculate(const RankingRequest& request, const VerifierDecision& decision,
                                                       const EmbedCache& cache, Duration ttl, SimTime now) {
  if (decision.request_id != request.request_id) throw ValidationError("verifier decision belongs to another request");
  const Duration skip_age = config_.refresh_skip_fraction * ttl;
  std::vector<PrecomputeTask> out;
  for (ItemId item : decision.selected) {
    const CacheKey key{request.user_id, item};
    if (skip_age > 0.0 && cache.peek(key, now, skip_age)) {
      std::lock_guard lock(mu_);
      ++stats_.skipped_fresh;
      continue;
    }
    std::lock_guard lock(mu_);
    if (!admit_locked(key, now)) {
      ++stats_.deduplicated;
      continue;
    }
    PrecomputeTask task{key, now, TaskOrigin::request_speculation, next_cycle_boundary(now, config_.cycle_period)};
    push_locked(task);
    ++stats_.enqueued_speculation;
    out.push_back(task);
  }
  return out;
}

std::optional<PrecomputeTask> PrecomputeQueue::requeue_miss(CacheKey key, SimTime now) {
  std::lock_guard lock(mu_);
  const std::uint64_t packed = key.packed();
  PrecomputeTask task{key, now, TaskOrigin::miss_requeue, next_cycle_boundary(now, config_.cycle_period)};
  auto it = queued_.find(packed);
  if (it != queued_.end()) {
    if (it->second.origin == TaskOrigin::miss_requeue) {
      ++stats_.deduplicated;
      return std::nullopt;
    }
    // Realized demand for a speculated pair: move it to the miss class. The
    // stale speculation entry is skipped lazily.
    queued_.erase(it);
    push_locked(task);
    ++stats_.promoted;
    ++stats_.enqueued_miss;
    return task;
  }
  if (!admit_locked(key, now)) {
    ++stats_.deduplicated;
    return std::nullopt;
  }
  push_locked(task);
  ++stats_.enqueued_miss;
  return task;
}

std::vector<PrecomputeTask> PrecomputeQueue::take_batch(std::size_t max, SimTime now) {
  std::lock_guard lock(mu_);
  std::vector<PrecomputeTask> out;
  for (auto* q : {&miss_, &speculation_}) {
    while (out.size() < max) {
      auto e = pop_live_locked(*q);
      if (!e) break;
      queued_.erase(e->task.key.packed());
      out.push_back(e->task);
    }
  }
  // Queued keys are deduplicated through queued_; only dequeued keys need an
  // admission timestamp, and only while it is inside the window.
  std::erase_if(last_admitted_, [&](const auto& kv) { return now - kv.second >= config_.dedup_window; });
  for (const auto& t : out)
    if (now - t.enqueued_at < config_.dedup_window) last_admitted_[t.key.packed()] = t.enqueued_at;
  return out;
}

std::vector<PrecomputeTask> PrecomputeQueue::pending() const {
  std::lock_guard lock(mu_);
  std::vector<PrecomputeTask> out;
  for (const auto* q : {&miss_, &speculation_})
    for (const auto& e : *q)
      if (live_locked(e)) out.push_back(e.task);
  return out;
}

std::size_t PrecomputeQueue::size() const {
  std::lock_guard lock(mu_);
  return queued_.size();
}

QueueStats PrecomputeQueue::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

void to_json(Json& j, const CycleReport& r) {
  j = Json{{"cycle_start", r.cycle_start},
           {"tasks_processed", r.tasks_processed},
           {"embeddings_written", r.embeddings_written},
           {"failures", r.failures},
           {"simulated_worker_time", r.simulated_worker_time},
           {"queue_remaining", r.queue_remaining}};
}

CycleReport run_cycle(PrecomputeQueue& queue, EmbedCache& cache, const Teacher& teacher, SimTime now) {
  const WorkerConfig& cfg = queue.config();
  const std::vector<PrecomputeTask> batch = queue.take_batch(cfg.cycle_capacity(), now);

  auto process = [&](std::size_t begin, std::size_t end, std::size_t& written, std::size_t& failed) {
    for (std::size_t k = begin; k < end; ++k) {
      const CacheKey key = batch[k].key;
      try {
        cache.put(key, teacher.compute_interaction_embedding(key.user_id, key.item_id, now), now);
        ++written;
      } catch (const LookupError&) {
        ++failed;
      }
    }
  };

  CycleReport report;
  report.cycle_start = now;
  if (cfg.parallel && cfg.worker_count > 1 && batch.size() > 1) {
    const std::size_t workers = std::min<std::size_t>(cfg.worker_count, batch.size());
    std::vector<std::size_t> written(workers, 0), failed(workers, 0);
    {
      std::vector<std::jthread> threads;
      const std::size_t chunk = (batch.size() + workers - 1) / workers;
      for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(batch.size(), begin + chunk);
        threads.emplace_back([&, w, begin, end] { process(begin, end, written[w], failed[w]); });
      }
    }
    for (std::size_t w = 0; w < workers; ++w) {
      report.embeddings_written += written[w];
      report.failures += failed[w];
    }
  } else {
    process(0, batch.size(), report.embeddings_written, report.failures);
  }
  report.tasks_processed = batch.size();
  report.simulated_worker_time = static_cast<double>(batch.size()) * simulate_compute_latency({cfg.per_embedding_cost});
  report.queue_remaining = queue.size();
  return report;
}

}  // namespace specache
