#include <doctest.h>

#include "../support/checks.hpp"
#include "specache/enrichment.hpp"
#include "specache/teacher.hpp"
#include "specache/verifier.hpp"
#include "specache/vertical_model.hpp"

using namespace specache;

namespace {

RankingRequest request_of(std::vector<ItemId> items) {
  RankingRequest r;
  r.request_id = 9;
  r.candidates = std::move(items);
  return r;
}

}  // namespace

TEST_CASE("selection count") {
  CHECK(selection_count(0.2, 200) == 40);
  CHECK(selection_count(0.2, 1) == 1);
  CHECK(selection_count(0.2, 5) == 1);
  CHECK(selection_count(0.2, 6) == 2);
  CHECK(selection_count(0.4, 5) == 2);
  CHECK(selection_count(0.1, 30) == 3);
  CHECK(selection_count(1.0, 7) == 7);
  for (std::size_t n = 1; n <= 500; ++n) CHECK(selection_count(0.2, n) == checks::ceil_fraction(1, 5, n));
}

TEST_CASE("n = 200 at 0.2 selects 40") {
  std::vector<ItemId> items(200);
  std::vector<double> scores(200);
  for (std::size_t k = 0; k < 200; ++k) {
    items[k] = static_cast<ItemId>(1000 + k);
    scores[k] = static_cast<double>((k * 37) % 200);
  }
  const auto d = select_candidates(request_of(items), scores, 0.2);
  CHECK(d.selected.size() == 40);
  CHECK(d.rejected.size() == 160);
  CHECK(d.fraction_used == 0.2);
  CHECK(d.request_id == 9);
}

TEST_CASE("fraction 1 keeps everything in score order") {
  const auto d = select_candidates(request_of({5, 6, 7}), std::vector<double>{0.1, 0.9, 0.5}, 1.0);
  CHECK(d.selected == std::vector<ItemId>{6, 7, 5});
  CHECK(d.rejected.empty());
}

TEST_CASE("equal scores break ties by ascending item id") {
  const auto d = select_candidates(request_of({9, 3, 7, 1, 5}), std::vector<double>(5, 0.5), 0.4);
  CHECK(d.selected == std::vector<ItemId>{1, 3});
}

TEST_CASE("invalid arguments") {
  const auto r = request_of({1, 2});
  CHECK_THROWS_AS(select_candidates(r, std::vector<double>{0.1, 0.2}, 0.0), ValidationError);
  CHECK_THROWS_AS(select_candidates(r, std::vector<double>{0.1, 0.2}, 1.01), ValidationError);
  CHECK_THROWS_AS(select_candidates(r, std::vector<double>{0.1}, 0.5), ValidationError);
}

TEST_CASE("decision JSON") {
  const auto d = select_candidates(request_of({4, 2}), std::vector<double>{0.3, 0.7}, 0.5);
  CHECK(Json(d).dump() == R"({"fraction":0.5,"request_id":9,"selected":[2]})");
}

TEST_CASE("verifier property suite") {
  const auto r = checks::verifier_suite(123);
  INFO(r.detail);
  CHECK(r.ok);
}

TEST_CASE("untrained verifier scores 0.5 and is deterministic") {
  FeatureLayout layout;
  VerticalModel m(layout.dim(), 0.05);
  EnrichedFeature e;
  e.vector.assign(8, 0.0);
  e.user_agg.vector.assign(8, 0.0);
  const auto x = assemble_features(layout, e, 1, 2);
  CHECK(verifier_score(m, x) == 0.5);
  CHECK(verifier_score(m, x) == verifier_score(m, assemble_features(layout, e, 1, 2)));
}

TEST_CASE("trained verifier ranks the high-affinity pair first") {
  WorldConfig c;
  c.n_users = 1;
  c.n_items = 2;
  c.d_lat = 2;
  c.drift_rate = 0.0;
  c.label_noise = 0.0;
  const World w(c, {UserProfile{0, {2.0, 0.0}, 0.0}},
                {ItemProfile{0, {2.0, 0.0}, 1.0}, ItemProfile{1, {-2.0, 0.0}, 1.0}});  // affinity +4 and -4
  const Teacher t(w, CompressionMap::random(2, 2, 8));
  FeatureLayout layout;
  layout.d_emb = 2;
  auto features = [&](ItemId item) {
    EnrichedFeature e;
    e.vector = t.compute_interaction_embedding(0, item, 0.0).vector;
    e.source = FeatureSource::exact;
    e.user_agg.vector.assign(2, 0.0);
    return assemble_features(layout, e, 0, item);
  };
  VerticalModel m(layout.dim(), 0.05);
  for (int step = 0; step < 10000; ++step) {
    const ItemId item = static_cast<ItemId>(step % 2);
    m.sgd_update(features(item), w.true_label(0, item, static_cast<double>(step)));
  }
  CHECK(verifier_score(m, features(0)) > verifier_score(m, features(1)));
}
