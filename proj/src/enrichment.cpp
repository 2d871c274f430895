#include "specache/enrichment.hpp"

#include <algorithm>
#include <numeric>

namespace specache {

namespace {
const std::vector<Neighbor> kNoNeighbors;
}

const std::vector<Neighbor>& NeighborTable::neighbors(UserId user) const {
  return user < rows_.size() ? rows_[user] : kNoNeighbors;
}

NeighborTable build_neighbor_table(const std::vector<Vector>& user_embeddings, std::size_t k) {
  const std::size_t n = user_embeddings.size();
  if (k < 1) throw ValidationError("k must be >= 1");
  if (n < 2) throw ValidationError("neighbor table needs at least two users");

  std::vector<Vector> unit(n);
  for (std::size_t u = 0; u < n; ++u) {
    const double len = norm(user_embeddings[u]);
    unit[u] = user_embeddings[u];
    if (len > 0.0)
      for (auto& x : unit[u]) x /= len;
    else
      std::fill(unit[u].begin(), unit[u].end(), 0.0);
  }

  const std::size_t keep = std::min(k, n - 1);
  auto ranks_before = [](const Neighbor& a, const Neighbor& b) {
    return a.similarity != b.similarity ? a.similarity > b.similarity : a.user_id < b.user_id;
  };
  std::vector<std::vector<Neighbor>> rows(n);
  std::vector<Neighbor> scratch;
  scratch.reserve(n - 1);
  for (std::size_t u = 0; u < n; ++u) {
    scratch.clear();
    for (std::size_t v = 0; v < n; ++v)
      if (v != u) scratch.push_back({static_cast<UserId>(v), std::clamp(dot(unit[u], unit[v]), -1.0, 1.0)});
    std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(keep), scratch.end(), ranks_before);
    rows[u].assign(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  return NeighborTable(std::move(rows));
}

NeighborTable build_neighbor_table(const Teacher& teacher, std::size_t k) {
  std::vector<Vector> embeddings;
  embeddings.reserve(teacher.world().users().size());
  for (const auto& u : teacher.world().users()) embeddings.push_back(teacher.compute_user_embedding(u.user_id));
  return build_neighbor_table(embeddings, k);
}

void to_json(Json& j, const NeighborTable& table) {
  j = Json::array();
  for (std::size_t u = 0; u < table.user_count(); ++u) {
    Json row = Json::array();
    for (const auto& nb : table.neighbors(static_cast<UserId>(u))) row.push_back(Json::array({nb.user_id, nb.similarity}));
    j.push_back(Json{{"user", u}, {"neighbors", std::move(row)}});
  }
}

const char* to_string(NeighborStrategy s) {
  return s == NeighborStrategy::weighted_average ? "weighted_average" : "nearest_single";
}

NeighborStrategy neighbor_strategy_from_string(const std::string& s) {
  if (s == "weighted_average") return NeighborStrategy::weighted_average;
  if (s == "nearest_single") return NeighborStrategy::nearest_single;
  throw ValidationError("unknown neighbor strategy '" + s + "'");
}

void EnrichmentConfig::validate() const {
  if (k_neighbors < 1) throw ValidationError("k_neighbors must be >= 1");
  if (!(agg_window > 0.0)) throw ValidationError("agg_window must be positive");
}

void to_json(Json& j, const EnrichmentConfig& c) {
  j = Json{{"k_neighbors", c.k_neighbors},
           {"strategy", to_string(c.strategy)},
           {"enable_agg", c.enable_agg},
           {"enable_similarity", c.enable_similarity},
           {"agg_window_hours", c.agg_window / kHour}};
}

EnrichmentConfig enrichment_config_from_json(const Json& j, const std::string& path) {
  EnrichmentConfig c;
  StrictObject o(j, path);
  std::string strategy = to_string(c.strategy);
  double window_hours = c.agg_window / kHour;
  o.read("k_neighbors", c.k_neighbors);
  o.read("strategy", strategy);
  o.read("enable_agg", c.enable_agg);
  o.read("enable_similarity", c.enable_similarity);
  o.read("agg_window_hours", window_hours);
  o.finish();
  try {
    c.strategy = neighbor_strategy_from_string(strategy);
    c.agg_window = window_hours * kHour;
    c.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(path, e.what());
  }
  return c;
}

std::optional<Vector> aggregated_user_embedding(const EmbedCache& cache, UserId user, ItemId exclude_item, SimTime now,
                                                Duration window) {
  const auto entries = cache.scan_user(user, now, window);
  Vector mean;
  std::size_t count = 0;
  for (const auto& e : entries) {
    if (e.item_id == exclude_item) continue;
    if (mean.empty()) mean.assign(e.embedding.vector.size(), 0.0);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += e.embedding.vector[k];
    ++count;
  }
  if (count == 0) return std::nullopt;
  for (auto& x : mean) x /= static_cast<double>(count);
  return mean;
}

UserAggregate::UserAggregate(const EmbedCache& cache, UserId user, SimTime now, Duration window)
    : entries_(cache.scan_user(user, now, window)) {
  for (const auto& e : entries_) {
    if (sum_.empty()) sum_.assign(e.embedding.vector.size(), 0.0);
    for (std::size_t k = 0; k < sum_.size(); ++k) sum_[k] += e.embedding.vector[k];
  }
}

std::optional<Vector> UserAggregate::excluding(ItemId item) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), item,
                             [](const ScanEntry& e, ItemId id) { return e.item_id < id; });
  const bool excluded = it != entries_.end() && it->item_id == item;
  const std::size_t count = entries_.size() - (excluded ? 1 : 0);
  if (count == 0) return std::nullopt;
  Vector mean = sum_;
  if (excluded)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] -= it->embedding.vector[k];
  for (auto& x : mean) x /= static_cast<double>(count);
  return mean;
}

std::optional<ImputedEmbedding> similarity_imputed_embedding(const EmbedCache& cache, const NeighborTable& table,
                                                             UserId user, ItemId item, SimTime now, Duration ttl,
                                                             NeighborStrategy strategy) {
  ImputedEmbedding out;
  std::vector<std::pair<double, Vector>> found;
  for (const auto& nb : table.neighbors(user)) {
    auto entry = cache.peek(CacheKey{nb.user_id, item}, now, ttl);
    if (!entry) continue;
    if (strategy == NeighborStrategy::nearest_single) {
      out.vector = std::move(entry->embedding.vector);
      out.contributors.push_back(nb.user_id);
      return out;
    }
    found.emplace_back(nb.similarity, std::move(entry->embedding.vector));
    out.contributors.push_back(nb.user_id);
  }
  if (found.empty()) return std::nullopt;

  double total = 0.0;
  for (const auto& [sim, v] : found) total += std::max(sim, 0.0);
  if (total <= 0.0) {
    out.vector = std::move(found.front().second);
    out.contributors.resize(1);
    return out;
  }
  out.vector.assign(found.front().second.size(), 0.0);
  for (const auto& [sim, v] : found) {
    const double w = std::max(sim, 0.0) / total;
    for (std::size_t k = 0; k < v.size(); ++k) out.vector[k] += w * v[k];
  }
  return out;
}

const char* to_string(FeatureSource s) {
  switch (s) {
    case FeatureSource::exact:
      return "exact";
    case FeatureSource::similarity_imputed:
      return "similarity_imputed";
    case FeatureSource::absent:
      break;
  }
  return "absent";
}

EnrichedFeature enrich(EmbedCache& cache, const NeighborTable& table, PrecomputeQueue* misses, UserId user,
                       ItemId item, SimTime now, Duration ttl, std::size_t d_emb, const EnrichmentConfig& config,
                       const UserAggregate* aggregate) {
  EnrichedFeature f;
  const CacheKey key{user, item};
  if (auto hit = cache.get(key, now, ttl)) {
    f.vector = std::move(hit->vector);
    f.source = FeatureSource::exact;
  } else {
    if (config.enable_similarity) {
      if (auto imputed = similarity_imputed_embedding(cache, table, user, item, now, ttl, config.strategy)) {
        f.vector = std::move(imputed->vector);
        f.source = FeatureSource::similarity_imputed;
        f.contributors = imputed->contributors.size();
      }
    }
    if (misses) misses->requeue_miss(key, now);
  }
  if (f.source == FeatureSource::absent) f.vector.assign(d_emb, 0.0);

  if (config.enable_agg) {
    auto agg = aggregate ? aggregate->excluding(item)
                         : aggregated_user_embedding(cache, user, item, now, config.agg_window);
    if (agg) {
      f.user_agg.vector = std::move(*agg);
      f.user_agg.present = true;
    }
  }
  if (!f.user_agg.present) f.user_agg.vector.assign(d_emb, 0.0);
  return f;
}

}  // namespace specache
