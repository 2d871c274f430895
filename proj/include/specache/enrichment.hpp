#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "specache/common.hpp"
#include "specache/embed_cache.hpp"
#include "specache/json_util.hpp"
#include "specache/precompute.hpp"
#include "specache/teacher.hpp"

namespace specache {

struct Neighbor {
  UserId user_id = 0;
  double similarity = 0.0;

  bool operator==(const Neighbor&) const = default;
};

/// Per-user k nearest users by cosine similarity of teacher user embeddings.
///
/// Rows are sorted by descending similarity, ties by ascending user_id, and
/// never contain the row's own user. Immutable once built.
class NeighborTable {
 public:
  NeighborTable() = default;
  explicit NeighborTable(std::vector<std::vector<Neighbor>> rows) : rows_(std::move(rows)) {}

  const std::vector<Neighbor>& neighbors(UserId user) const;
  std::size_t user_count() const { return rows_.size(); }
  const std::vector<std::vector<Neighbor>>& rows() const { return rows_; }

 private:
  std::vector<std::vector<Neighbor>> rows_;
};

/// Exact brute-force KNN over the given user embeddings (row index = user id).
/// A zero-norm embedding has similarity 0 to every other user.
NeighborTable build_neighbor_table(const std::vector<Vector>& user_embeddings, std::size_t k);

/// Same, embedding every user of the teacher's world first.
NeighborTable build_neighbor_table(const Teacher& teacher, std::size_t k);

/// [{"user": u, "neighbors": [[v, sim], ...]}, ...]
void to_json(Json& j, const NeighborTable& table);

enum class NeighborStrategy : std::uint8_t { weighted_average, nearest_single };

const char* to_string(NeighborStrategy s);
NeighborStrategy neighbor_strategy_from_string(const std::string& s);

struct EnrichmentConfig {
  std::size_t k_neighbors = 100;
  NeighborStrategy strategy = NeighborStrategy::nearest_single;
  bool enable_agg = true;
  bool enable_similarity = true;
  Duration agg_window = 24 * kHour;

  void validate() const;
};

void to_json(Json& j, const EnrichmentConfig& c);
EnrichmentConfig enrichment_config_from_json(const Json& j, const std::string& path);

/// Mean of the user's entries aged <= window, excluding `exclude_item`.
/// nullopt when nothing remains after the exclusion.
std::optional<Vector> aggregated_user_embedding(const EmbedCache& cache, UserId user, ItemId exclude_item, SimTime now,
                                                Duration window = 24 * kHour);

/// One scan of a user's window, reused for every candidate of a request.
///
/// excluding(item) equals aggregated_user_embedding(..., item, ...) up to
/// floating-point rounding: it subtracts the excluded entry from a running
/// sum instead of re-summing.
class UserAggregate {
 public:
  UserAggregate(const EmbedCache& cache, UserId user, SimTime now, Duration window);

  std::optional<Vector> excluding(ItemId item) const;
  std::size_t entry_count() const { return entries_.size(); }

 private:
  std::vector<ScanEntry> entries_;  // ascending item_id
  Vector sum_;
};

struct ImputedEmbedding {
  Vector vector;
  /// Neighbors whose entries were used, in rank order.
  std::vector<UserId> contributors;
};

/// Fills a missing (user, item) embedding from similar users' fresh entries
/// for the same item.
///
/// nearest_single takes the highest-ranked neighbor with a fresh entry.
/// weighted_average weights every such neighbor by max(sim, 0) / sum of
/// max(sim, 0), falling back to nearest_single when all weights are zero.
std::optional<ImputedEmbedding> similarity_imputed_embedding(const EmbedCache& cache, const NeighborTable& table,
                                                             UserId user, ItemId item, SimTime now, Duration ttl,
                                                             NeighborStrategy strategy);

enum class FeatureSource : std::uint8_t { exact, similarity_imputed, absent };

const char* to_string(FeatureSource s);

struct UserAggFeature {
  Vector vector;
  bool present = false;
};

/// Embedding inputs for one (user, item) lookup. Absent slots are zeros.
struct EnrichedFeature {
  Vector vector;
  FeatureSource source = FeatureSource::absent;
  /// Neighbors behind a similarity_imputed vector.
  std::size_t contributors = 0;
  UserAggFeature user_agg;
};

/// Exact hit, else similarity imputation (when enabled), else zeros. The
/// aggregated user embedding is filled independently. Any non-exact outcome
/// is handed to `misses` for the next refresh cycle when a queue is given.
///
/// `aggregate`, if provided, must be the UserAggregate of this user at `now`.
EnrichedFeature enrich(EmbedCache& cache, const NeighborTable& table, PrecomputeQueue* misses, UserId user,
                       ItemId item, SimTime now, Duration ttl, std::size_t d_emb, const EnrichmentConfig& config,
                       const UserAggregate* aggregate = nullptr);

}  // namespace specache
