#include <doctest.h>

#include <set>

#include "specache/precompute.hpp"
#include "specache/teacher.hpp"

using namespace specache;

namespace {

WorkerConfig config(Duration cost = 0.05, Duration period = 60.0, std::size_t capacity = 1000) {
  WorkerConfig c;
  c.per_embedding_cost = cost;
  c.cycle_period = period;
  c.queue_capacity = capacity;
  return c;
}

RankingRequest request(std::uint64_t id, UserId user, std::size_t n) {
  RankingRequest r;
  r.request_id = id;
  r.user_id = user;
  for (std::size_t k = 0; k < n; ++k) r.candidates.push_back(static_cast<ItemId>(k));
  return r;
}

VerifierDecision all_selected(const RankingRequest& r) {
  return VerifierDecision{r.request_id, r.candidates, {}, 1.0};
}

World world(std::uint32_t users = 10, std::uint32_t items = 300) {
  WorldConfig c;
  c.n_users = users;
  c.n_items = items;
  return World::generate(c);
}

}  // namespace

TEST_CASE("cycle arithmetic") {
  CHECK(next_cycle_boundary(10.0, 60.0) == 60.0);
  CHECK(next_cycle_boundary(60.0, 60.0) == 120.0);
  CHECK(config(0.05, 2.0).cycle_capacity() == 40);
  CHECK(config(0.05, 60.0).cycle_capacity() == 1200);
  WorkerConfig two = config(0.05, 2.0);
  two.worker_count = 2;
  CHECK(two.cycle_capacity() == 80);
  CHECK(config(0.0).cycle_capacity() == std::numeric_limits<std::size_t>::max());
}

TEST_CASE("worker config validation") {
  WorkerConfig c;
  c.worker_count = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = WorkerConfig{};
  c.cycle_period = 0.0;
  CHECK_THROWS_AS(PrecomputeQueue{c}, ValidationError);
  CHECK_THROWS_AS(worker_config_from_json(Json{{"surprise", 1}}, "/precompute"), ConfigError);
}

TEST_CASE("speculation enqueues selected pairs not already fresh") {
  EmbedCache cache;
  PrecomputeQueue q(config());
  const auto r = request(1, 3, 40);
  CHECK(q.speculate(r, all_selected(r), cache, 6 * kHour, 100.0).size() == 40);

  PrecomputeQueue q2(config());
  for (ItemId i = 0; i < 40; ++i) cache.put({3, i}, TeacherEmbedding{{1.0}, 40.0}, 40.0);
  CHECK(q2.speculate(r, all_selected(r), cache, 6 * kHour, 100.0).empty());
  CHECK(q2.stats().skipped_fresh == 40);

  // Older than half the TTL: refreshed.
  CHECK(q2.speculate(r, all_selected(r), cache, 6 * kHour, 40.0 + 4 * kHour).size() == 40);
}

TEST_CASE("double speculation inside the dedup window") {
  EmbedCache cache;
  PrecomputeQueue q(config());
  const auto r = request(1, 3, 10);
  CHECK(q.speculate(r, all_selected(r), cache, kHour, 0.0).size() == 10);
  CHECK(q.speculate(r, all_selected(r), cache, kHour, 5.0).empty());
  CHECK(q.size() == 10);
  // Dequeued but still inside the window: not re-admitted.
  CHECK(q.take_batch(100, 30.0).size() == 10);
  CHECK(q.speculate(r, all_selected(r), cache, kHour, 40.0).empty());
  // Window passed.
  CHECK(q.speculate(r, all_selected(r), cache, kHour, 61.0).size() == 10);
  CHECK_THROWS_AS(q.speculate(request(2, 3, 10), all_selected(r), cache, kHour, 70.0), ValidationError);
}

TEST_CASE("miss requeue scheduling and dedup") {
  PrecomputeQueue q(config());
  const auto t = q.requeue_miss({1, 2}, 10.0);
  REQUIRE(t);
  CHECK(t->due_at == 60.0);
  CHECK(t->origin == TaskOrigin::miss_requeue);
  for (double at : {11.0, 20.0, 30.0, 59.0}) CHECK_FALSE(q.requeue_miss({1, 2}, at));
  CHECK(q.size() == 1);
  CHECK(q.stats().deduplicated == 4);
}

TEST_CASE("a miss promotes a queued speculation task") {
  EmbedCache cache;
  PrecomputeQueue q(config());
  const auto r = request(1, 0, 3);
  q.speculate(r, all_selected(r), cache, kHour, 0.0);
  REQUIRE(q.requeue_miss({0, 2}, 1.0));
  const auto pending = q.pending();
  REQUIRE(pending.size() == 3);
  CHECK(pending[0].key == CacheKey{0, 2});
  CHECK(pending[0].origin == TaskOrigin::miss_requeue);
  CHECK(q.stats().promoted == 1);
  const auto batch = q.take_batch(10, 60.0);
  CHECK(batch.size() == 3);
}

TEST_CASE("misses are served first and survive overflow") {
  EmbedCache cache;
  PrecomputeQueue q(config(0.05, 60.0, 105));
  for (ItemId i = 0; i < 10; ++i) q.requeue_miss({1, 1000 + i}, 0.0);
  const auto r = request(1, 2, 100);
  q.speculate(r, all_selected(r), cache, kHour, 0.0);
  CHECK(q.size() == 105);
  CHECK(q.stats().dropped_speculation == 5);
  CHECK(q.stats().dropped_miss == 0);
  // Oldest speculation went first.
  const auto pending = q.pending();
  CHECK(pending[10].key == CacheKey{2, 5});

  const auto batch = q.take_batch(10, 60.0);
  REQUIRE(batch.size() == 10);
  for (const auto& t : batch) CHECK(t.origin == TaskOrigin::miss_requeue);
}

TEST_CASE("run_cycle respects capacity and priority") {
  const World w = world(10, 300);
  const Teacher teacher = Teacher::for_world(w, 8);
  EmbedCache cache;
  PrecomputeQueue q(config(6.0, 60.0, 1000));  // capacity 10 per cycle
  for (ItemId i = 0; i < 10; ++i) q.requeue_miss({1, i}, 0.0);
  const auto r = request(1, 2, 100);
  q.speculate(r, all_selected(r), cache, kHour, 0.0);
  const CycleReport rep = run_cycle(q, cache, teacher, 60.0);
  CHECK(rep.tasks_processed == 10);
  CHECK(rep.embeddings_written == 10);
  CHECK(rep.simulated_worker_time == doctest::Approx(60.0));
  CHECK(rep.queue_remaining == 100);
  for (ItemId i = 0; i < 10; ++i) {
    const auto e = cache.peek({1, i}, 60.0, 1.0);
    REQUIRE(e);
    CHECK(e->written_at == 60.0);
    CHECK(e->embedding == teacher.compute_interaction_embedding(1, i, 60.0));
  }
  CHECK(cache.scan_user(2, 60.0, kHour).empty());
}

TEST_CASE("cycle arithmetic: 1 worker, 50ms, 2s period") {
  const World w = world(10, 300);
  const Teacher teacher = Teacher::for_world(w, 8);
  EmbedCache cache;
  PrecomputeQueue q(config(0.05, 2.0, 1000));
  const auto r = request(1, 2, 100);
  q.speculate(r, all_selected(r), cache, kHour, 0.0);
  const CycleReport rep = run_cycle(q, cache, teacher, 2.0);
  CHECK(rep.tasks_processed == 40);
  CHECK(rep.simulated_worker_time == doctest::Approx(2.0));
}

TEST_CASE("empty queue cycle and failures") {
  const World w = world(10, 300);
  const Teacher teacher = Teacher::for_world(w, 8);
  EmbedCache cache;
  PrecomputeQueue q(config());
  const CycleReport empty = run_cycle(q, cache, teacher, 60.0);
  CHECK(empty.tasks_processed == 0);
  CHECK(empty.embeddings_written == 0);
  CHECK(empty.simulated_worker_time == 0.0);

  q.requeue_miss({99, 1}, 61.0);  // unknown user
  q.requeue_miss({1, 1}, 61.0);
  const CycleReport rep = run_cycle(q, cache, teacher, 120.0);
  CHECK(rep.tasks_processed == 2);
  CHECK(rep.embeddings_written == 1);
  CHECK(rep.failures == 1);
  CHECK(rep.tasks_processed == rep.embeddings_written + rep.failures);
  CHECK(cache.stats().insertions == 1);
}

TEST_CASE("parallel cycle writes the same entries as sequential") {
  const World w = world(10, 300);
  const Teacher teacher = Teacher::for_world(w, 8);
  WorkerConfig par = config(0.0, 60.0, 10000);
  par.worker_count = 4;
  par.parallel = true;
  EmbedCache a, b;
  PrecomputeQueue qa(config(0.0, 60.0, 10000)), qb(par);
  for (UserId u = 0; u < 10; ++u) {
    const auto r = request(u, u, 200);
    qa.speculate(r, all_selected(r), a, kHour, 0.0);
    qb.speculate(r, all_selected(r), b, kHour, 0.0);
  }
  run_cycle(qa, a, teacher, 60.0);
  run_cycle(qb, b, teacher, 60.0);
  const auto da = a.dump(), db = b.dump();
  REQUIRE(da.size() == 2000);
  REQUIRE(db.size() == da.size());
  for (std::size_t k = 0; k < da.size(); ++k) CHECK((da[k].key == db[k].key && da[k].embedding == db[k].embedding));
}

TEST_CASE("dedup soundness: at most one queued task per key") {
  EmbedCache cache;
  PrecomputeQueue q(config(0.05, 60.0, 100000));
  Rng rng(4);
  for (int k = 0; k < 5000; ++k) {
    const CacheKey key{static_cast<UserId>(rng.below(5)), static_cast<ItemId>(rng.below(40))};
    const double now = k * 0.5;
    if (rng.uniform() < 0.5) {
      q.requeue_miss(key, now);
    } else {
      RankingRequest r{static_cast<std::uint64_t>(k), key.user_id, now, {key.item_id}};
      q.speculate(r, all_selected(r), cache, kHour, now);
    }
    if (k % 120 == 0) q.take_batch(20, now);
    const auto pending = q.pending();
    std::set<std::uint64_t> keys;
    for (const auto& t : pending) keys.insert(t.key.packed());
    REQUIRE(keys.size() == pending.size());
    REQUIRE(pending.size() == q.size());
  }
}
