#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specache/common.hpp"
#include "specache/embed_cache.hpp"
#include "specache/enrichment.hpp"
#include "specache/json_util.hpp"
#include "specache/serving.hpp"
#include "specache/teacher.hpp"
#include "specache/world.hpp"

namespace specache {

/// Coverage, loss and cache metrics for one run.
///
/// The headline coverages are over labeled impressions (the training data);
/// the lookup_* variants count every candidate lookup.
struct ExperimentReport {
  std::size_t requests = 0;
  std::size_t labeled = 0;
  double coverage_exact = 0.0;
  double coverage_effective = 0.0;
  double coverage_any_signal = 0.0;
  double lookup_coverage_exact = 0.0;
  double lookup_coverage_effective = 0.0;
  double lookup_coverage_any_signal = 0.0;
  double bce = 0.0;
  std::optional<double> baseline_bce;
  /// (baseline - treatment) / baseline * 100; positive is an improvement.
  std::optional<double> relative_bce_reduction_pct;
  std::array<std::size_t, 3> labeled_source_counts{};
  std::array<std::size_t, 3> lookup_source_counts{};
  double mean_serving_latency_sim = 0.0;
  /// Imputed lookups by number of contributing neighbors.
  std::map<std::size_t, std::size_t> imputed_contributors;
  std::optional<CacheStats> cache;
  std::string config_digest;
};

void to_json(OrderedJson& j, const ExperimentReport& r);

double relative_bce_reduction(double baseline_bce, double treatment_bce);

/// Throws ValidationError if `records` is empty or holds no labeled
/// impressions.
ExperimentReport compute_report(std::span<const ServingRecord> records, const std::optional<CacheStats>& cache_stats,
                                std::optional<double> baseline_bce = std::nullopt, std::string config_digest = {});

// ---------------------------------------------------------------------------
// Offline coverage studies.
//
// Embeddings come straight from the teacher for every candidate (full
// coverage) and are then hidden per (user, item) by a seeded mask, so the
// only thing that varies between arms is how many pairs carry a signal and
// where it came from. Masks are nested: a pair present at level a is present
// at every level above a.
// ---------------------------------------------------------------------------

struct OracleStudyOptions {
  std::size_t n_requests = 20000;
  double warmup_fraction = 0.2;
  std::size_t d_emb = 8;
  std::size_t k_neighbors = 100;
  NeighborStrategy strategy = NeighborStrategy::nearest_single;
  ServingConfig serving;
};

/// Pairs with mask value u < exact_level get their own embedding; pairs with
/// exact_level <= u < imputed_level get a neighbor-imputed one.
struct OracleArm {
  double exact_level = 0.0;
  double imputed_level = 0.0;
};

struct OracleArmResult {
  double bce = 0.0;
  double coverage = 0.0;
  std::size_t labeled = 0;
};

/// Mask value of a pair under `seed`, uniform in [0, 1).
double coverage_mask_value(std::uint64_t seed, UserId user, ItemId item);

/// Trains a fresh vertical model online over `trace` and scores it with
/// progressive BCE over the labeled impressions after warmup. `neighbors` is
/// required when the arm imputes.
OracleArmResult run_oracle_arm(const World& world, const Teacher& teacher, std::span<const RankingRequest> trace,
                               const NeighborTable* neighbors, const OracleArm& arm, const OracleStudyOptions& options);

struct SweepRow {
  std::uint64_t seed = 0;
  double level = 0.0;
  double bce = 0.0;
  double coverage = 0.0;
  std::size_t labeled = 0;
};

struct SweepResult {
  std::vector<double> levels;
  std::vector<SweepRow> rows;
  /// Seed-averaged BCE, one per level.
  std::vector<double> mean_bce;
};

/// Throws ValidationError unless levels are sorted and inside [0, 1].
SweepResult coverage_sweep(const WorldConfig& world_config, const std::vector<double>& levels,
                           const std::vector<std::uint64_t>& seeds, const OracleStudyOptions& options);

struct SweepTrend {
  bool strictly_better_at_full = false;
  std::size_t adjacent_violations = 0;
  double worst_violation_rel = 0.0;
  bool within_tolerance = false;
};

/// Checks mean BCE against: last level strictly below first, and at most
/// `max_violations` adjacent increases, each at most `rel_tolerance`.
SweepTrend sweep_trend(const std::vector<double>& mean_bce, double rel_tolerance = 0.001,
                       std::size_t max_violations = 1);

void write_sweep_csv(std::ostream& out, const SweepResult& sweep);

struct QualityStudy {
  double coverage = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> bce_exact;
  std::vector<double> bce_imputed;
  double mean_bce_exact = 0.0;
  double mean_bce_imputed = 0.0;
};

/// Exact embeddings at coverage c against half-exact, half-imputed
/// embeddings reaching the same c, on identical traces.
QualityStudy imputation_quality_study(const WorldConfig& world_config, double coverage,
                                      const std::vector<std::uint64_t>& seeds, const OracleStudyOptions& options);

void to_json(OrderedJson& j, const SweepResult& s);
void to_json(OrderedJson& j, const QualityStudy& q);

}  // namespace specache
