#include "specache/embed_cache.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <string>

namespace specache {

void to_json(Json& j, const CacheStats& s) {
  j = Json{{"lookups", s.lookups},
           {"exact_hits", s.exact_hits},
           {"expired_hits", s.expired_hits},
           {"misses", s.misses},
           {"insertions", s.insertions},
           {"evictions", s.evictions},
           {"compacted", s.compacted},
           {"hit_rate", s.hit_rate()},
           {"freshness_histogram_hours", s.freshness_histogram}};
}

EmbedCache::EmbedCache(std::size_t capacity) : capacity_(capacity) {}

void EmbedCache::put(CacheKey key, TeacherEmbedding embedding, SimTime now) {
  std::lock_guard lock(mu_);
  const std::uint64_t packed = key.packed();
  auto it = slots_.find(packed);
  if (it != slots_.end()) {
    it->second.entry = CacheEntry{std::move(embedding), now};
    lru_.splice(lru_.begin(), lru_, it->second.lru);
  } else {
    lru_.push_front(packed);
    auto [pos, inserted] = slots_.emplace(packed, Slot{key, CacheEntry{std::move(embedding), now}, lru_.begin()});
    by_user_[key.user_id][key.item_id] = &pos->second;
    if (capacity_ > 0)
      while (slots_.size() > capacity_) evict_one_locked();
  }
  insertions_.fetch_add(1, std::memory_order_relaxed);
}

std::optional<TeacherEmbedding> EmbedCache::get(CacheKey key, SimTime now, Duration ttl) {
  if (!(ttl > 0.0)) throw ValidationError("ttl must be positive");
  std::lock_guard lock(mu_);
  lookups_.fetch_add(1, std::memory_order_relaxed);
  auto it = slots_.find(key.packed());
  if (it == slots_.end()) {
    misses_.fetch_add(1, std::memory_order_relaxed);
    return std::nullopt;
  }
  const Duration age = now - it->second.entry.written_at;
  if (age > ttl) {
    expired_hits_.fetch_add(1, std::memory_order_relaxed);
    return std::nullopt;
  }
  exact_hits_.fetch_add(1, std::memory_order_relaxed);
  const auto bucket = std::min<std::size_t>(kFreshnessBuckets - 1, static_cast<std::size_t>(std::max(0.0, age) / kHour));
  freshness_[bucket].fetch_add(1, std::memory_order_relaxed);
  lru_.splice(lru_.begin(), lru_, it->second.lru);
  return it->second.entry.embedding;
}

std::optional<CacheEntry> EmbedCache::peek(CacheKey key, SimTime now, Duration ttl) const {
  std::lock_guard lock(mu_);
  auto it = slots_.find(key.packed());
  if (it == slots_.end() || now - it->second.entry.written_at > ttl) return std::nullopt;
  return it->second.entry;
}

std::vector<ScanEntry> EmbedCache::scan_user(UserId user, SimTime now, Duration window) const {
  if (!(window > 0.0)) throw ValidationError("scan window must be positive");
  std::vector<ScanEntry> out;
  std::lock_guard lock(mu_);
  auto it = by_user_.find(user);
  if (it == by_user_.end()) return out;
  out.reserve(it->second.size());
  for (const auto& [item, slot] : it->second)
    if (now - slot->entry.written_at <= window) out.push_back({item, slot->entry.embedding, slot->entry.written_at});
  return out;
}

void EmbedCache::unlink_locked(std::unordered_map<std::uint64_t, Slot>::iterator it) {
  const CacheKey key = it->second.key;
  lru_.erase(it->second.lru);
  auto user_it = by_user_.find(key.user_id);
  user_it->second.erase(key.item_id);
  if (user_it->second.empty()) by_user_.erase(user_it);
  slots_.erase(it);
}

void EmbedCache::evict_one_locked() {
  auto it = slots_.find(lru_.back());
  unlink_locked(it);
  evictions_.fetch_add(1, std::memory_order_relaxed);
}

bool EmbedCache::erase(CacheKey key) {
  std::lock_guard lock(mu_);
  auto it = slots_.find(key.packed());
  if (it == slots_.end()) return false;
  unlink_locked(it);
  return true;
}

std::size_t EmbedCache::compact(SimTime now, Duration max_age) {
  std::lock_guard lock(mu_);
  std::size_t removed = 0;
  for (auto it = slots_.begin(); it != slots_.end();) {
    auto next = std::next(it);
    if (now - it->second.entry.written_at > max_age) {
      unlink_locked(it);
      ++removed;
    }
    it = next;
  }
  compacted_.fetch_add(removed, std::memory_order_relaxed);
  return removed;
}

CacheStats EmbedCache::stats() const {
  CacheStats s;
  // Counters only move under mu_, so this snapshot is exact.
  std::lock_guard lock(mu_);
  s.exact_hits = exact_hits_.load();
  s.expired_hits = expired_hits_.load();
  s.misses = misses_.load();
  s.lookups = lookups_.load();
  s.insertions = insertions_.load();
  s.evictions = evictions_.load();
  s.compacted = compacted_.load();
  for (std::size_t b = 0; b < kFreshnessBuckets; ++b) s.freshness_histogram[b] = freshness_[b].load();
  return s;
}

std::vector<DumpEntry> EmbedCache::dump() const {
  std::vector<DumpEntry> out;
  {
    std::lock_guard lock(mu_);
    out.reserve(slots_.size());
    for (const auto& [packed, slot] : slots_) out.push_back({slot.key, slot.entry.embedding, slot.entry.written_at});
  }
  std::sort(out.begin(), out.end(), [](const DumpEntry& a, const DumpEntry& b) { return a.key < b.key; });
  return out;
}

std::size_t EmbedCache::size() const {
  std::lock_guard lock(mu_);
  return slots_.size();
}

void write_snapshot(std::ostream& out, const EmbedCache& cache) {
  for (const auto& e : cache.dump()) {
    OrderedJson j;
    j["user_id"] = e.key.user_id;
    j["item_id"] = e.key.item_id;
    j["vector"] = e.embedding.vector;
    j["computed_at"] = e.embedding.computed_at;
    j["written_at"] = e.written_at;
    out << j.dump() << '\n';
  }
}

std::size_t load_snapshot(std::istream& in, EmbedCache& cache) {
  std::string line;
  std::size_t loaded = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      CacheKey key{j.at("user_id").get<UserId>(), j.at("item_id").get<ItemId>()};
      TeacherEmbedding emb{j.at("vector").get<Vector>(), j.at("computed_at").get<double>()};
      cache.put(key, std::move(emb), j.at("written_at").get<double>());
      ++loaded;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("snapshot line ") + std::to_string(loaded + 1) + ": " + e.what());
    }
  }
  return loaded;
}

}  // namespace specache
