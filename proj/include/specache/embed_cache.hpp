#pragma once

#include <array>
#include <atomic>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <list>
#include <map>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <vector>

#include "specache/common.hpp"
#include "specache/json_util.hpp"
#include "specache/teacher.hpp"

namespace specache {

/// Ordered user-major, item-minor.
struct CacheKey {
  UserId user_id = 0;
  ItemId item_id = 0;

  auto operator<=>(const CacheKey&) const = default;
  std::uint64_t packed() const { return (static_cast<std::uint64_t>(user_id) << 32) | item_id; }
};

struct CacheEntry {
  TeacherEmbedding embedding;
  SimTime written_at = 0.0;
};

/// Ages of served entries, one bucket per hour, last bucket open-ended.
inline constexpr std::size_t kFreshnessBuckets = 25;

struct CacheStats {
  std::uint64_t lookups = 0;
  std::uint64_t exact_hits = 0;
  std::uint64_t expired_hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t insertions = 0;
  std::uint64_t evictions = 0;
  std::uint64_t compacted = 0;
  std::array<std::uint64_t, kFreshnessBuckets> freshness_histogram{};

  double hit_rate() const { return lookups ? static_cast<double>(exact_hits) / static_cast<double>(lookups) : 0.0; }
};

void to_json(Json& j, const CacheStats& s);

struct ScanEntry {
  ItemId item_id = 0;
  TeacherEmbedding embedding;
  SimTime written_at = 0.0;
};

struct DumpEntry {
  CacheKey key;
  TeacherEmbedding embedding;
  SimTime written_at = 0.0;
};

/// (user, item)-keyed embedding store with TTL checked on read.
///
/// An entry is fresh while now - written_at <= ttl (inclusive). Expired
/// entries stay resident, and count toward capacity, until compact() runs.
/// Past capacity the least recently used key is evicted; put and fresh get
/// both count as use. All members are safe to call concurrently.
class EmbedCache {
 public:
  /// capacity 0 means unbounded.
  explicit EmbedCache(std::size_t capacity = 0);

  EmbedCache(const EmbedCache&) = delete;
  EmbedCache& operator=(const EmbedCache&) = delete;

  void put(CacheKey key, TeacherEmbedding embedding, SimTime now);

  /// Serving-path read. Updates stats exactly once. Throws ValidationError if
  /// ttl <= 0.
  std::optional<TeacherEmbedding> get(CacheKey key, SimTime now, Duration ttl);

  /// Same freshness rule as get() without touching stats or recency. Used by
  /// neighbor imputation and the precompute freshness check.
  std::optional<CacheEntry> peek(CacheKey key, SimTime now, Duration ttl) const;

  /// Entries of one user aged <= window, ascending item_id. Stats untouched.
  std::vector<ScanEntry> scan_user(UserId user, SimTime now, Duration window) const;

  bool erase(CacheKey key);

  /// Drops entries older than max_age. Returns the number removed.
  std::size_t compact(SimTime now, Duration max_age);

  CacheStats stats() const;

  /// Every resident entry in key order, fresh or not.
  std::vector<DumpEntry> dump() const;

  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }

 private:
  struct Slot {
    CacheKey key;
    CacheEntry entry;
    std::list<std::uint64_t>::iterator lru;
  };

  void evict_one_locked();
  void unlink_locked(std::unordered_map<std::uint64_t, Slot>::iterator it);

  std::size_t capacity_;
  mutable std::mutex mu_;
  std::unordered_map<std::uint64_t, Slot> slots_;
  std::unordered_map<UserId, std::map<ItemId, const Slot*>> by_user_;
  std::list<std::uint64_t> lru_;  // front = most recent

  std::atomic<std::uint64_t> lookups_{0};
  std::atomic<std::uint64_t> exact_hits_{0};
  std::atomic<std::uint64_t> expired_hits_{0};
  std::atomic<std::uint64_t> misses_{0};
  std::atomic<std::uint64_t> insertions_{0};
  std::atomic<std::uint64_t> evictions_{0};
  std::atomic<std::uint64_t> compacted_{0};
  std::array<std::atomic<std::uint64_t>, kFreshnessBuckets> freshness_{};
};

/// One JSON object per line, fields in order: user_id, item_id, vector,
/// computed_at, written_at.
void write_snapshot(std::ostream& out, const EmbedCache& cache);
/// Replays a snapshot with put(); returns the number of entries loaded.
std::size_t load_snapshot(std::istream& in, EmbedCache& cache);

}  // namespace specache
