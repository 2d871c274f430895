#include <doctest.h>

#include <atomic>
#include <sstream>
#include <thread>

#include "../support/checks.hpp"
#include "specache/embed_cache.hpp"

using namespace specache;

namespace {

TeacherEmbedding emb(double x, SimTime at = 0.0) { return TeacherEmbedding{{x, -x}, at}; }

}  // namespace

TEST_CASE("put and get") {
  EmbedCache c;
  c.put({1, 2}, emb(1.0), 100.0);
  REQUIRE(c.get({1, 2}, 100.0, 60.0));
  CHECK(c.get({1, 2}, 100.0, 60.0)->vector == Vector{1.0, -1.0});

  c.put({1, 2}, emb(2.0), 200.0);
  const auto got = c.get({1, 2}, 200.0, 60.0);
  REQUIRE(got);
  CHECK(got->vector == Vector{2.0, -2.0});
  CHECK(c.peek({1, 2}, 200.0, 60.0)->written_at == 200.0);
  CHECK(c.size() == 1);
}

TEST_CASE("TTL boundary is inclusive") {
  EmbedCache c;
  const Duration ttl = 6 * kHour;
  c.put({0, 0}, emb(1.0), 0.0);
  CHECK(c.get({0, 0}, 3 * kHour, ttl));
  CHECK(c.get({0, 0}, ttl, ttl));
  CHECK_FALSE(c.get({0, 0}, ttl + 1.0, ttl));
  const CacheStats s = c.stats();
  CHECK(s.lookups == 3);
  CHECK(s.exact_hits == 2);
  CHECK(s.expired_hits == 1);
  CHECK(s.misses == 0);
  CHECK(s.freshness_histogram[3] == 1);
  CHECK(s.freshness_histogram[6] == 1);
  CHECK_THROWS_AS(c.get({0, 0}, 0.0, 0.0), ValidationError);
}

TEST_CASE("stats of a fresh cache and after k gets") {
  EmbedCache c;
  const CacheStats z = c.stats();
  CHECK(z.lookups == 0);
  CHECK(z.insertions == 0);
  CHECK(z.hit_rate() == 0.0);
  c.put({0, 1}, emb(1), 0.0);
  for (int k = 0; k < 7; ++k) c.get({0, static_cast<ItemId>(k % 2)}, 0.0, 10.0);
  const CacheStats s = c.stats();
  CHECK(s.lookups == 7);
  CHECK(s.exact_hits == 3);
  CHECK(s.misses == 4);
  CHECK(s.hit_rate() == doctest::Approx(3.0 / 7.0));
}

TEST_CASE("capacity 2, three keys, one eviction of the least recently used") {
  EmbedCache c(2);
  c.put({0, 1}, emb(1), 0.0);
  c.put({0, 2}, emb(2), 0.0);
  CHECK(c.get({0, 1}, 0.0, 10.0));  // {0, 2} is now least recent
  c.put({0, 3}, emb(3), 0.0);
  CHECK(c.stats().evictions == 1);
  CHECK(c.size() == 2);
  CHECK_FALSE(c.peek({0, 2}, 0.0, 10.0));
  CHECK(c.peek({0, 1}, 0.0, 10.0));
  CHECK(c.peek({0, 3}, 0.0, 10.0));
}

TEST_CASE("expired entries count toward capacity until compaction") {
  EmbedCache c(2);
  c.put({0, 1}, emb(1), 0.0);
  c.put({0, 2}, emb(2), 0.0);
  CHECK(c.compact(100.0, 50.0) == 2);
  CHECK(c.size() == 0);
  CHECK(c.stats().compacted == 2);
  c.put({0, 3}, emb(3), 100.0);
  c.put({0, 4}, emb(4), 100.0);
  CHECK(c.stats().evictions == 0);
}

TEST_CASE("scan_user window cut and order") {
  EmbedCache c;
  CHECK(c.scan_user(7, 0.0, kHour).empty());
  const SimTime now = 40 * kHour;
  c.put({7, 30}, emb(1), now - 1 * kHour);
  c.put({7, 10}, emb(2), now - 12 * kHour);
  c.put({7, 20}, emb(3), now - 30 * kHour);
  c.put({8, 5}, emb(4), now);
  const auto got = c.scan_user(7, now, 24 * kHour);
  REQUIRE(got.size() == 2);
  CHECK(got[0].item_id == 10);
  CHECK(got[1].item_id == 30);
  CHECK(c.stats().lookups == 0);
}

TEST_CASE("peek does not touch stats") {
  EmbedCache c;
  c.put({1, 1}, emb(1), 0.0);
  CHECK(c.peek({1, 1}, 5.0, 10.0));
  CHECK_FALSE(c.peek({1, 1}, 50.0, 10.0));
  CHECK_FALSE(c.peek({1, 2}, 5.0, 10.0));
  CHECK(c.stats().lookups == 0);
}

TEST_CASE("erase and dump") {
  EmbedCache c;
  c.put({2, 1}, emb(1), 0.0);
  c.put({1, 9}, emb(2), 0.0);
  c.put({1, 3}, emb(3), 0.0);
  const auto d = c.dump();
  REQUIRE(d.size() == 3);
  CHECK(d[0].key == CacheKey{1, 3});
  CHECK(d[1].key == CacheKey{1, 9});
  CHECK(d[2].key == CacheKey{2, 1});
  CHECK(c.erase({1, 9}));
  CHECK_FALSE(c.erase({1, 9}));
  CHECK(c.scan_user(1, 0.0, 1.0).size() == 1);
}

TEST_CASE("snapshot round trip") {
  EmbedCache a;
  a.put({1, 2}, TeacherEmbedding{{0.1, 0.2}, 5.0}, 6.0);
  a.put({3, 4}, TeacherEmbedding{{-1.0 / 3.0, 2.0}, 7.0}, 8.0);
  std::stringstream buf;
  write_snapshot(buf, a);
  CHECK(buf.str().rfind(R"({"user_id":1,"item_id":2,"vector":[0.1,0.2],"computed_at":5.0,"written_at":6.0})", 0) == 0);
  EmbedCache b;
  CHECK(load_snapshot(buf, b) == 2);
  const auto da = a.dump();
  const auto db = b.dump();
  REQUIRE(da.size() == db.size());
  for (std::size_t k = 0; k < da.size(); ++k) {
    CHECK(da[k].key == db[k].key);
    CHECK(da[k].embedding == db[k].embedding);
    CHECK(da[k].written_at == db[k].written_at);
  }
  std::stringstream bad("{\"user_id\":1}\n");
  CHECK_THROWS_AS(load_snapshot(bad, b), ValidationError);
}

TEST_CASE("randomized TTL soundness against a shadow map") {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto r = checks::ttl_soundness(seed, 100000, 0);
    INFO(r.detail);
    CHECK(r.ok);
  }
  const auto bounded = checks::ttl_soundness(3, 100000, 300);
  INFO(bounded.detail);
  CHECK(bounded.ok);
}

TEST_CASE("single-key linearizability under concurrent put/get") {
  // Every write carries a unique value. A global ticket counter orders
  // invocations and responses.
  EmbedCache cache;
  const CacheKey key{1, 1};
  cache.put(key, TeacherEmbedding{{-1.0}, 0.0}, 0.0);
  std::atomic<std::uint64_t> ticket{1};

  struct Op {
    bool write;
    double value;
    std::uint64_t inv, resp;
  };
  constexpr int kThreads = 4;
  constexpr int kOps = 5000;
  std::vector<std::vector<Op>> logs(kThreads);
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < kThreads; ++t)
      threads.emplace_back([&, t] {
        Rng rng(static_cast<std::uint64_t>(t) + 100);
        for (int k = 0; k < kOps; ++k) {
          if (rng.uniform() < 0.4) {
            const double v = t * kOps + k;
            const auto inv = ticket.fetch_add(1);
            cache.put(key, TeacherEmbedding{{v}, 0.0}, 0.0);
            logs[t].push_back({true, v, inv, ticket.fetch_add(1)});
          } else {
            const auto inv = ticket.fetch_add(1);
            const auto got = cache.get(key, 0.0, 1e9);
            logs[t].push_back({false, got ? got->vector[0] : -2.0, inv, ticket.fetch_add(1)});
          }
        }
      });
  }

  std::map<double, Op> writes;
  writes[-1.0] = Op{true, -1.0, 0, 0};
  std::vector<Op> reads;
  for (const auto& log : logs)
    for (const Op& op : log) (op.write ? (void)(writes[op.value] = op) : reads.push_back(op));

  std::size_t violations = 0;
  for (const Op& r : reads) {
    auto w = writes.find(r.value);
    if (w == writes.end()) {
      ++violations;
      continue;
    }
    if (w->second.inv > r.resp) ++violations;  // read from the future
    for (const auto& [v, other] : writes)
      if (other.inv > w->second.resp && other.resp < r.inv) {
        ++violations;  // a later write finished before the read began
        break;
      }
  }
  // New-old inversion between reads that do not overlap.
  std::sort(reads.begin(), reads.end(), [](const Op& a, const Op& b) { return a.resp < b.resp; });
  // A read may not return a write that finished before the write seen by an
  // earlier, non-overlapping read was invoked.
  std::uint64_t latest_inv_seen = 0;
  std::size_t next = 0;
  std::vector<Op> by_inv = reads;
  std::sort(by_inv.begin(), by_inv.end(), [](const Op& a, const Op& b) { return a.inv < b.inv; });
  for (const Op& r2 : by_inv) {
    while (next < reads.size() && reads[next].resp < r2.inv) {
      const Op& w1 = writes[reads[next].value];
      latest_inv_seen = std::max(latest_inv_seen, w1.inv);
      ++next;
    }
    const Op& w2 = writes[r2.value];
    if (w2.resp < latest_inv_seen) ++violations;
  }
  CHECK(violations == 0);
  CHECK(cache.stats().lookups == reads.size());
}
