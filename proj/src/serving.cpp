#include "specache/serving.hpp"

#include <algorithm>
#include <numeric>

namespace specache {

void CacheConfig::validate() const {
  if (!(ttl_hours > 0.0)) throw ValidationError("ttl_hours must be positive");
  if (!(compact_every_hours > 0.0)) throw ValidationError("compact_every_hours must be positive");
}

void to_json(Json& j, const CacheConfig& c) {
  j = Json{{"ttl_hours", c.ttl_hours}, {"capacity", c.capacity}, {"compact_every_hours", c.compact_every_hours}};
}

CacheConfig cache_config_from_json(const Json& j, const std::string& path) {
  CacheConfig c;
  StrictObject o(j, path);
  o.read("ttl_hours", c.ttl_hours);
  o.read("capacity", c.capacity);
  o.read("compact_every_hours", c.compact_every_hours);
  o.finish();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(path, e.what());
  }
  return c;
}

void VerifierConfig::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("fraction must lie in (0, 1]");
}

void to_json(Json& j, const VerifierConfig& c) {
  j = Json{{"fraction", c.fraction}, {"evict_rejected", c.evict_rejected}};
}

VerifierConfig verifier_config_from_json(const Json& j, const std::string& path) {
  VerifierConfig c;
  StrictObject o(j, path);
  o.read("fraction", c.fraction);
  o.read("evict_rejected", c.evict_rejected);
  o.finish();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(path, e.what());
  }
  return c;
}

void ServingConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ValidationError("learning_rate must be >= 0");
  if (label_slate_n < 1) throw ValidationError("label_slate_n must be >= 1");
  if (hash_buckets < 1) throw ValidationError("hash_buckets must be >= 1");
}

void to_json(Json& j, const ServingConfig& c) {
  j = Json{{"learning_rate", c.learning_rate},
           {"label_slate_n", c.label_slate_n},
           {"hash_buckets", c.hash_buckets},
           {"cost",
            {{"request_overhead", c.cost.request_overhead},
             {"per_candidate_lookup", c.cost.per_candidate_lookup},
             {"per_candidate_predict", c.cost.per_candidate_predict},
             {"similarity_fanout", c.cost.similarity_fanout},
             {"aggregate_scan", c.cost.aggregate_scan}}}};
}

ServingConfig serving_config_from_json(const Json& j, const std::string& path) {
  ServingConfig c;
  StrictObject o(j, path);
  o.read("learning_rate", c.learning_rate);
  o.read("label_slate_n", c.label_slate_n);
  o.read("hash_buckets", c.hash_buckets);
  o.nested("cost", [&](const Json& sub, const std::string& sub_path) {
    StrictObject cost(sub, sub_path);
    cost.read("request_overhead", c.cost.request_overhead);
    cost.read("per_candidate_lookup", c.cost.per_candidate_lookup);
    cost.read("per_candidate_predict", c.cost.per_candidate_predict);
    cost.read("similarity_fanout", c.cost.similarity_fanout);
    cost.read("aggregate_scan", c.cost.aggregate_scan);
    cost.finish();
  });
  o.finish();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(path, e.what());
  }
  return c;
}

void to_json(Json& j, const ServingRecord& r) {
  Json labeled = Json::array();
  for (const auto& l : r.labeled)
    labeled.push_back(Json{{"item_id", l.item_id},
                           {"prediction", l.prediction},
                           {"label", l.label},
                           {"source", to_string(l.source)},
                           {"agg_present", l.agg_present}});
  j = Json{{"request_id", r.request_id},
           {"user_id", r.user_id},
           {"timestamp", r.timestamp},
           {"serving_latency_sim", r.serving_latency_sim},
           {"source_counts",
            {{"exact", r.source_counts[0]}, {"similarity_imputed", r.source_counts[1]}, {"absent", r.source_counts[2]}}},
           {"agg_present", r.agg_present_count},
           {"any_signal", r.any_signal_count},
           {"labeled", std::move(labeled)}};
  if (!r.candidates.empty()) {
    Json cands = Json::array();
    for (const auto& c : r.candidates)
      cands.push_back(Json{{"item_id", c.item_id}, {"prediction", c.prediction}, {"source", to_string(c.source)}});
    j["candidates"] = std::move(cands);
  }
}

namespace {

FeatureLayout make_layout(const PipelineConfig& c) {
  FeatureLayout layout;
  layout.hash_buckets = c.serving.hash_buckets;
  layout.d_emb = c.d_emb;
  return layout;
}

EnrichedFeature placeholder(std::size_t d_emb) {
  EnrichedFeature f;
  f.vector.assign(d_emb, 0.0);
  f.user_agg.vector.assign(d_emb, 0.0);
  return f;
}

}  // namespace

Pipeline::Pipeline(const World& world, const Teacher& teacher, PipelineConfig config)
    : world_(world),
      teacher_(teacher),
      config_(std::move(config)),
      layout_(make_layout(config_)),
      cache_(config_.cache.capacity),
      queue_(config_.precompute) {
  config_.cache.validate();
  config_.verifier.validate();
  config_.enrichment.validate();
  config_.serving.validate();
  if (teacher_.d_emb() != config_.d_emb) throw ValidationError("teacher embedding width differs from pipeline d_emb");
  if (config_.use_embeddings && config_.enrichment.enable_similarity && world_.users().size() >= 2)
    neighbors_ = build_neighbor_table(teacher_, config_.enrichment.k_neighbors);
  model_ = std::make_shared<const VerticalModel>(layout_.dim(), config_.serving.learning_rate);
}

std::shared_ptr<const VerticalModel> Pipeline::model() const {
  std::lock_guard lock(model_mu_);
  return model_;
}

void Pipeline::advance_to(SimTime t) {
  if (!config_.use_embeddings) return;
  const Duration period = config_.precompute.cycle_period;
  const Duration compact_every = config_.cache.compact_every_hours * kHour;
  const Duration retention = std::max(config_.cache.ttl(), config_.enrichment.agg_window);
  while (static_cast<double>(cycles_run_ + 1) * period <= t) {
    const SimTime boundary = static_cast<double>(++cycles_run_) * period;
    CycleReport r = run_cycle(queue_, cache_, teacher_, boundary);
    cycle_totals_.tasks_processed += r.tasks_processed;
    cycle_totals_.embeddings_written += r.embeddings_written;
    cycle_totals_.failures += r.failures;
    cycle_totals_.simulated_worker_time += r.simulated_worker_time;
    cycle_totals_.queue_remaining = r.queue_remaining;
    cycle_totals_.cycle_start = boundary;
    if (cycle_sink_) cycle_sink_(r);
    if (boundary - last_compaction_ >= compact_every) {
      cache_.compact(boundary, retention);
      last_compaction_ = boundary;
    }
  }
}

Duration Pipeline::serving_latency(std::size_t n_candidates) const {
  const ServingCostModel& c = config_.serving.cost;
  Duration latency = c.request_overhead + static_cast<double>(n_candidates) * c.per_candidate_predict;
  if (config_.use_embeddings) {
    latency += static_cast<double>(n_candidates) * c.per_candidate_lookup;
    if (config_.enrichment.enable_similarity) latency += c.similarity_fanout;
    if (config_.enrichment.enable_agg) latency += c.aggregate_scan;
  }
  return latency;
}

FeatureVector Pipeline::peek_features(UserId user, ItemId item, SimTime now) const {
  EnrichedFeature f = placeholder(config_.d_emb);
  if (config_.use_embeddings) {
    const Duration ttl = config_.cache.ttl();
    if (auto hit = cache_.peek(CacheKey{user, item}, now, ttl)) {
      f.vector = hit->embedding.vector;
      f.source = FeatureSource::exact;
    } else if (config_.enrichment.enable_similarity) {
      if (auto imputed = similarity_imputed_embedding(cache_, neighbors_, user, item, now, ttl, config_.enrichment.strategy)) {
        f.vector = std::move(imputed->vector);
        f.source = FeatureSource::similarity_imputed;
      }
    }
    if (config_.enrichment.enable_agg) {
      if (auto agg = aggregated_user_embedding(cache_, user, item, now, config_.enrichment.agg_window)) {
        f.user_agg.vector = std::move(*agg);
        f.user_agg.present = true;
      }
    }
  }
  return assemble_features(layout_, f, user, item);
}

ServingRecord Pipeline::handle_request(const RankingRequest& request) {
  std::vector<double> scores;
  return serve(request, scores);
}

ServingRecord Pipeline::serve(const RankingRequest& request, std::vector<double>& predictions) {
  const std::shared_ptr<const VerticalModel> snapshot = model();
  const SimTime now = request.timestamp;
  const Duration ttl = config_.cache.ttl();
  const std::size_t n = request.candidates.size();

  std::optional<UserAggregate> aggregate;
  if (config_.use_embeddings && config_.enrichment.enable_agg)
    aggregate.emplace(cache_, request.user_id, now, config_.enrichment.agg_window);

  ServingRecord record;
  record.request_id = request.request_id;
  record.user_id = request.user_id;
  record.timestamp = now;

  std::vector<FeatureVector> features;
  predictions.assign(n, 0.0);
  std::vector<bool> agg_present(n);
  features.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const ItemId item = request.candidates[k];
    EnrichedFeature f = config_.use_embeddings
                            ? enrich(cache_, neighbors_, &queue_, request.user_id, item, now, ttl, config_.d_emb,
                                     config_.enrichment, aggregate ? &*aggregate : nullptr)
                            : placeholder(config_.d_emb);
    agg_present[k] = f.user_agg.present;
    ++record.source_counts[static_cast<std::size_t>(f.source)];
    if (f.user_agg.present) ++record.agg_present_count;
    if (f.user_agg.present || f.source != FeatureSource::absent) ++record.any_signal_count;
    if (f.source == FeatureSource::similarity_imputed)
      record.imputed_contributors.push_back(static_cast<std::uint32_t>(f.contributors));
    features.push_back(assemble_features(layout_, f, request.user_id, item));
    predictions[k] = snapshot->predict(features.back());
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (predictions[a] != predictions[b]) return predictions[a] > predictions[b];
    return request.candidates[a] < request.candidates[b];
  });
  record.ranked.reserve(n);
  for (std::size_t k : order) record.ranked.push_back(request.candidates[k]);

  const std::size_t slate = std::min(config_.serving.label_slate_n, n);
  for (std::size_t r = 0; r < slate; ++r) {
    const std::size_t k = order[r];
    const ItemId item = request.candidates[k];
    record.labeled.push_back(LabeledImpression{item, predictions[k], world_.true_label(request.user_id, item, now),
                                               features[k].source, agg_present[k]});
  }

  // Single-writer commit: apply this request's impressions to the latest
  // committed model.
  {
    std::lock_guard lock(model_mu_);
    auto next = std::make_shared<VerticalModel>(*model_);
    for (std::size_t r = 0; r < slate; ++r) next->sgd_update(features[order[r]], record.labeled[r].label);
    model_ = std::move(next);
  }

  if (config_.keep_candidate_detail) {
    record.candidates.reserve(n);
    for (std::size_t k = 0; k < n; ++k)
      record.candidates.push_back({request.candidates[k], predictions[k], features[k].source, agg_present[k]});
  }
  record.serving_latency_sim = serving_latency(n);
  return record;
}

VerifierDecision Pipeline::speculate(const RankingRequest& request, std::span<const double> scores) {
  VerifierDecision decision = select_candidates(request, scores, config_.verifier.fraction);
  if (decision_sink_) decision_sink_(decision);
  if (!config_.use_embeddings) return decision;
  queue_.speculate(request, decision, cache_, config_.cache.ttl(), request.timestamp);
  if (config_.verifier.evict_rejected)
    for (ItemId item : decision.rejected) cache_.erase(CacheKey{request.user_id, item});
  return decision;
}

ServingRecord Pipeline::step(const RankingRequest& request) {
  advance_to(request.timestamp);
  std::vector<double> scores;
  ServingRecord record = serve(request, scores);
  speculate(request, scores);
  return record;
}

}  // namespace specache
