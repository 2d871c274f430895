#pragma once

#include <array>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "specache/common.hpp"
#include "specache/embed_cache.hpp"
#include "specache/enrichment.hpp"
#include "specache/json_util.hpp"
#include "specache/precompute.hpp"
#include "specache/teacher.hpp"
#include "specache/verifier.hpp"
#include "specache/vertical_model.hpp"
#include "specache/world.hpp"

namespace specache {

struct CacheConfig {
  double ttl_hours = 6.0;
  std::size_t capacity = 0;  // 0 = unbounded
  double compact_every_hours = 1.0;

  Duration ttl() const { return ttl_hours * kHour; }
  void validate() const;
};

void to_json(Json& j, const CacheConfig& c);
CacheConfig cache_config_from_json(const Json& j, const std::string& path);

struct VerifierConfig {
  double fraction = 0.2;
  /// Also drop cached entries for pairs the verifier rejects.
  bool evict_rejected = false;

  void validate() const;
};

void to_json(Json& j, const VerifierConfig& c);
VerifierConfig verifier_config_from_json(const Json& j, const std::string& path);

/// Simulated serving-path costs. Charged per request from the request shape
/// and the enabled features only: every enrichment read is issued as one
/// fan-out whether or not it finds anything, so the charge does not depend
/// on cache contents or on teacher cost.
struct ServingCostModel {
  Duration request_overhead = 0.002;
  Duration per_candidate_lookup = 20e-6;
  Duration per_candidate_predict = 5e-6;
  Duration similarity_fanout = 0.0005;
  Duration aggregate_scan = 0.0003;
};

struct ServingConfig {
  double learning_rate = 0.05;
  std::size_t label_slate_n = 5;
  std::size_t hash_buckets = 64;
  ServingCostModel cost;

  void validate() const;
};

void to_json(Json& j, const ServingConfig& c);
ServingConfig serving_config_from_json(const Json& j, const std::string& path);

struct PipelineConfig {
  /// false = baseline vertical model: no cache, no precompute, zero
  /// placeholders everywhere.
  bool use_embeddings = true;
  std::size_t d_emb = 8;
  CacheConfig cache;
  VerifierConfig verifier;
  WorkerConfig precompute;
  EnrichmentConfig enrichment;
  ServingConfig serving;
  /// Keep per-candidate predictions and sources in each ServingRecord.
  bool keep_candidate_detail = false;
};

struct CandidateOutcome {
  ItemId item_id = 0;
  double prediction = 0.0;
  FeatureSource source = FeatureSource::absent;
  bool agg_present = false;

  bool operator==(const CandidateOutcome&) const = default;
};

struct LabeledImpression {
  ItemId item_id = 0;
  double prediction = 0.0;
  int label = 0;
  FeatureSource source = FeatureSource::absent;
  bool agg_present = false;

  bool operator==(const LabeledImpression&) const = default;
};

struct ServingRecord {
  std::uint64_t request_id = 0;
  UserId user_id = 0;
  SimTime timestamp = 0.0;
  /// Descending prediction, ties by ascending item_id.
  std::vector<ItemId> ranked;
  std::vector<LabeledImpression> labeled;
  /// Per lookup, indexed by FeatureSource.
  std::array<std::size_t, 3> source_counts{};
  std::size_t agg_present_count = 0;
  /// Lookups with a user-item signal or an aggregate.
  std::size_t any_signal_count = 0;
  Duration serving_latency_sim = 0.0;
  /// Contributing neighbors of each similarity_imputed lookup.
  std::vector<std::uint32_t> imputed_contributors;
  /// Filled only with PipelineConfig::keep_candidate_detail, in request order.
  std::vector<CandidateOutcome> candidates;

  bool operator==(const ServingRecord&) const = default;
};

/// One JSON line: request, latency, source counts, labeled impressions.
void to_json(Json& j, const ServingRecord& r);

/// Serving path plus the background precompute loop it feeds.
///
/// step() is the deterministic driver: it runs every refresh cycle due
/// before the request, serves the request, then lets the verifier speculate
/// on its candidates. handle_request() is the serving path alone and may be
/// called from several threads; model updates are committed one request at a
/// time and predictions read the latest committed snapshot.
class Pipeline {
 public:
  Pipeline(const World& world, const Teacher& teacher, PipelineConfig config);

  ServingRecord step(const RankingRequest& request);

  /// Runs every cycle whose boundary is <= t.
  void advance_to(SimTime t);

  ServingRecord handle_request(const RankingRequest& request);

  /// Verifier decision over this request's candidates, then speculation.
  VerifierDecision speculate(const RankingRequest& request, std::span<const double> scores);

  /// Features for a pair as the serving path would see them, without
  /// touching cache stats or the miss queue.
  FeatureVector peek_features(UserId user, ItemId item, SimTime now) const;

  std::shared_ptr<const VerticalModel> model() const;
  const EmbedCache& cache() const { return cache_; }
  EmbedCache& cache() { return cache_; }
  const PrecomputeQueue& queue() const { return queue_; }
  PrecomputeQueue& queue() { return queue_; }
  const NeighborTable& neighbor_table() const { return neighbors_; }
  const PipelineConfig& config() const { return config_; }
  const FeatureLayout& layout() const { return layout_; }

  void on_cycle(std::function<void(const CycleReport&)> sink) { cycle_sink_ = std::move(sink); }
  void on_decision(std::function<void(const VerifierDecision&)> sink) { decision_sink_ = std::move(sink); }

  /// Totals over every cycle run so far.
  const CycleReport& cycle_totals() const { return cycle_totals_; }

 private:
  Duration serving_latency(std::size_t n_candidates) const;
  /// Serving path; `predictions` receives the scores in candidate order.
  ServingRecord serve(const RankingRequest& request, std::vector<double>& predictions);

  const World& world_;
  const Teacher& teacher_;
  PipelineConfig config_;
  FeatureLayout layout_;
  EmbedCache cache_;
  PrecomputeQueue queue_;
  NeighborTable neighbors_;

  mutable std::mutex model_mu_;
  std::shared_ptr<const VerticalModel> model_;

  std::size_t cycles_run_ = 0;
  SimTime last_compaction_ = 0.0;
  CycleReport cycle_totals_;
  std::function<void(const CycleReport&)> cycle_sink_;
  std::function<void(const VerifierDecision&)> decision_sink_;
};

}  // namespace specache
