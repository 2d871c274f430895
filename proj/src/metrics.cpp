#include "specache/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include "specache/vertical_model.hpp"

namespace specache {

namespace {

constexpr std::uint64_t kMaskTag = 0x3A5C;

OrderedJson source_counts_json(const std::array<std::size_t, 3>& c) {
  OrderedJson j;
  j["exact"] = c[0];
  j["similarity_imputed"] = c[1];
  j["absent"] = c[2];
  return j;
}

double fraction(std::size_t num, std::size_t den) {
  return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

}  // namespace

double relative_bce_reduction(double baseline_bce, double treatment_bce) {
  if (!(baseline_bce > 0.0)) throw ValidationError("baseline bce must be positive");
  return (baseline_bce - treatment_bce) / baseline_bce * 100.0;
}

void to_json(OrderedJson& j, const ExperimentReport& r) {
  j = OrderedJson::object();
  j["requests"] = r.requests;
  j["labeled"] = r.labeled;
  j["coverage_exact"] = r.coverage_exact;
  j["coverage_effective"] = r.coverage_effective;
  j["coverage_any_signal"] = r.coverage_any_signal;
  j["lookup_coverage_exact"] = r.lookup_coverage_exact;
  j["lookup_coverage_effective"] = r.lookup_coverage_effective;
  j["lookup_coverage_any_signal"] = r.lookup_coverage_any_signal;
  j["bce"] = r.bce;
  j["baseline_bce"] = r.baseline_bce ? OrderedJson(*r.baseline_bce) : OrderedJson(nullptr);
  j["relative_bce_reduction_pct"] =
      r.relative_bce_reduction_pct ? OrderedJson(*r.relative_bce_reduction_pct) : OrderedJson(nullptr);
  j["labeled_source_counts"] = source_counts_json(r.labeled_source_counts);
  j["lookup_source_counts"] = source_counts_json(r.lookup_source_counts);
  j["mean_serving_latency_sim"] = r.mean_serving_latency_sim;
  OrderedJson contributors = OrderedJson::object();
  for (const auto& [count, lookups] : r.imputed_contributors) contributors[std::to_string(count)] = lookups;
  j["imputed_contributors"] = std::move(contributors);
  if (r.cache) {
    Json stats = *r.cache;
    j["cache"] = OrderedJson::parse(stats.dump());
  } else {
    j["cache"] = nullptr;
  }
  j["config_digest"] = r.config_digest;
}

ExperimentReport compute_report(std::span<const ServingRecord> records, const std::optional<CacheStats>& cache_stats,
                                std::optional<double> baseline_bce, std::string config_digest) {
  if (records.empty()) throw ValidationError("compute_report: no serving records");
  ExperimentReport r;
  r.requests = records.size();
  r.cache = cache_stats;
  r.config_digest = std::move(config_digest);

  std::size_t any_labeled = 0;
  std::size_t lookups = 0;
  std::size_t any_lookup = 0;
  double loss = 0.0;
  double latency = 0.0;
  for (const auto& rec : records) {
    latency += rec.serving_latency_sim;
    for (std::size_t s = 0; s < 3; ++s) {
      r.lookup_source_counts[s] += rec.source_counts[s];
      lookups += rec.source_counts[s];
    }
    any_lookup += rec.any_signal_count;
    for (std::uint32_t c : rec.imputed_contributors) ++r.imputed_contributors[c];
    for (const auto& l : rec.labeled) {
      ++r.labeled;
      ++r.labeled_source_counts[static_cast<std::size_t>(l.source)];
      if (l.source != FeatureSource::absent || l.agg_present) ++any_labeled;
      loss += bce(l.prediction, l.label);
    }
  }
  if (r.labeled == 0) throw ValidationError("compute_report: no labeled impressions");

  r.coverage_exact = fraction(r.labeled_source_counts[0], r.labeled);
  r.coverage_effective = fraction(r.labeled_source_counts[0] + r.labeled_source_counts[1], r.labeled);
  r.coverage_any_signal = fraction(any_labeled, r.labeled);
  r.lookup_coverage_exact = fraction(r.lookup_source_counts[0], lookups);
  r.lookup_coverage_effective = fraction(r.lookup_source_counts[0] + r.lookup_source_counts[1], lookups);
  r.lookup_coverage_any_signal = fraction(any_lookup, lookups);
  r.bce = loss / static_cast<double>(r.labeled);
  r.mean_serving_latency_sim = latency / static_cast<double>(records.size());
  if (baseline_bce) {
    r.baseline_bce = baseline_bce;
    r.relative_bce_reduction_pct = relative_bce_reduction(*baseline_bce, r.bce);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Oracle studies
// ---------------------------------------------------------------------------

double coverage_mask_value(std::uint64_t seed, UserId user, ItemId item) {
  return unit_from_bits(hash_coords(seed, kMaskTag, user, item));
}

OracleArmResult run_oracle_arm(const World& world, const Teacher& teacher, std::span<const RankingRequest> trace,
                               const NeighborTable* neighbors, const OracleArm& arm, const OracleStudyOptions& options) {
  if (arm.imputed_level > arm.exact_level && neighbors == nullptr)
    throw ValidationError("imputing arm needs a neighbor table");
  FeatureLayout layout;
  layout.hash_buckets = options.serving.hash_buckets;
  layout.d_emb = options.d_emb;
  VerticalModel model(layout.dim(), options.serving.learning_rate);
  const std::uint64_t seed = world.config().seed;
  const auto warmup = static_cast<std::size_t>(options.warmup_fraction * static_cast<double>(trace.size()));

  OracleArmResult result;
  std::size_t covered = 0;
  double loss = 0.0;
  std::vector<FeatureVector> features;
  std::vector<double> predictions;
  std::vector<std::size_t> order;
  for (std::size_t r = 0; r < trace.size(); ++r) {
    const RankingRequest& req = trace[r];
    const std::size_t n = req.candidates.size();
    features.clear();
    predictions.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const ItemId item = req.candidates[k];
      EnrichedFeature f;
      f.user_agg.vector.assign(options.d_emb, 0.0);
      const double u = coverage_mask_value(seed, req.user_id, item);
      if (u < arm.exact_level) {
        f.vector = teacher.compute_interaction_embedding(req.user_id, item, req.timestamp).vector;
        f.source = FeatureSource::exact;
      } else if (u < arm.imputed_level) {
        const auto& row = neighbors->neighbors(req.user_id);
        if (options.strategy == NeighborStrategy::nearest_single || row.size() == 1) {
          f.vector = teacher.compute_interaction_embedding(row.front().user_id, item, req.timestamp).vector;
        } else {
          double total = 0.0;
          for (const auto& nb : row) total += std::max(nb.similarity, 0.0);
          f.vector.assign(options.d_emb, 0.0);
          if (total <= 0.0) {
            f.vector = teacher.compute_interaction_embedding(row.front().user_id, item, req.timestamp).vector;
          } else {
            for (const auto& nb : row) {
              const double w = std::max(nb.similarity, 0.0) / total;
              if (w == 0.0) continue;
              const Vector v = teacher.compute_interaction_embedding(nb.user_id, item, req.timestamp).vector;
              for (std::size_t d = 0; d < v.size(); ++d) f.vector[d] += w * v[d];
            }
          }
        }
        f.source = FeatureSource::similarity_imputed;
      } else {
        f.vector.assign(options.d_emb, 0.0);
      }
      features.push_back(assemble_features(layout, f, req.user_id, item));
      predictions[k] = model.predict(features.back());
    }

    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (predictions[a] != predictions[b]) return predictions[a] > predictions[b];
      return req.candidates[a] < req.candidates[b];
    });
    const std::size_t slate = std::min(options.serving.label_slate_n, n);
    std::vector<int> labels(slate);
    for (std::size_t s = 0; s < slate; ++s) {
      const std::size_t k = order[s];
      labels[s] = world.true_label(req.user_id, req.candidates[k], req.timestamp);
      if (r >= warmup) {
        ++result.labeled;
        loss += bce(predictions[k], labels[s]);
        if (features[k].source != FeatureSource::absent) ++covered;
      }
    }
    for (std::size_t s = 0; s < slate; ++s) model.sgd_update(features[order[s]], labels[s]);
  }
  if (result.labeled > 0) {
    result.bce = loss / static_cast<double>(result.labeled);
    result.coverage = static_cast<double>(covered) / static_cast<double>(result.labeled);
  }
  return result;
}

SweepResult coverage_sweep(const WorldConfig& world_config, const std::vector<double>& levels,
                           const std::vector<std::uint64_t>& seeds, const OracleStudyOptions& options) {
  if (levels.empty()) throw ValidationError("coverage_sweep: no levels");
  if (seeds.empty()) throw ValidationError("coverage_sweep: no seeds");
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (!(levels[k] >= 0.0 && levels[k] <= 1.0)) throw ValidationError("coverage levels must lie in [0, 1]");
    if (k > 0 && levels[k] < levels[k - 1]) throw ValidationError("coverage levels must be sorted");
  }
  SweepResult out;
  out.levels = levels;
  out.mean_bce.assign(levels.size(), 0.0);
  for (std::uint64_t seed : seeds) {
    WorldConfig wc = world_config;
    wc.seed = seed;
    const World world = World::generate(wc);
    const Teacher teacher = Teacher::for_world(world, options.d_emb);
    const auto trace = generate_trace(world, options.n_requests);
    for (std::size_t k = 0; k < levels.size(); ++k) {
      const OracleArmResult res = run_oracle_arm(world, teacher, trace, nullptr, {levels[k], levels[k]}, options);
      out.rows.push_back({seed, levels[k], res.bce, res.coverage, res.labeled});
      out.mean_bce[k] += res.bce / static_cast<double>(seeds.size());
    }
  }
  return out;
}

SweepTrend sweep_trend(const std::vector<double>& mean_bce, double rel_tolerance, std::size_t max_violations) {
  SweepTrend t;
  if (mean_bce.size() < 2) return t;
  t.strictly_better_at_full = mean_bce.back() < mean_bce.front();
  bool all_small = true;
  for (std::size_t k = 1; k < mean_bce.size(); ++k) {
    if (mean_bce[k] > mean_bce[k - 1]) {
      ++t.adjacent_violations;
      const double rel = (mean_bce[k] - mean_bce[k - 1]) / mean_bce[k - 1];
      t.worst_violation_rel = std::max(t.worst_violation_rel, rel);
      if (rel > rel_tolerance) all_small = false;
    }
  }
  t.within_tolerance = all_small && t.adjacent_violations <= max_violations;
  return t;
}

void write_sweep_csv(std::ostream& out, const SweepResult& sweep) {
  out << "seed,level,bce,coverage,labeled\n";
  out.precision(17);
  for (const auto& r : sweep.rows) out << r.seed << ',' << r.level << ',' << r.bce << ',' << r.coverage << ',' << r.labeled << '\n';
}

QualityStudy imputation_quality_study(const WorldConfig& world_config, double coverage,
                                      const std::vector<std::uint64_t>& seeds, const OracleStudyOptions& options) {
  if (!(coverage > 0.0 && coverage <= 1.0)) throw ValidationError("quality study coverage must lie in (0, 1]");
  QualityStudy q;
  q.coverage = coverage;
  q.seeds = seeds;
  for (std::uint64_t seed : seeds) {
    WorldConfig wc = world_config;
    wc.seed = seed;
    const World world = World::generate(wc);
    const Teacher teacher = Teacher::for_world(world, options.d_emb);
    const NeighborTable table = build_neighbor_table(teacher, options.k_neighbors);
    const auto trace = generate_trace(world, options.n_requests);
    const double exact = run_oracle_arm(world, teacher, trace, nullptr, {coverage, coverage}, options).bce;
    const double imputed = run_oracle_arm(world, teacher, trace, &table, {coverage / 2.0, coverage}, options).bce;
    q.bce_exact.push_back(exact);
    q.bce_imputed.push_back(imputed);
    q.mean_bce_exact += exact / static_cast<double>(seeds.size());
    q.mean_bce_imputed += imputed / static_cast<double>(seeds.size());
  }
  return q;
}

void to_json(OrderedJson& j, const SweepResult& s) {
  j = OrderedJson::object();
  j["levels"] = s.levels;
  j["mean_bce"] = s.mean_bce;
  OrderedJson rows = OrderedJson::array();
  for (const auto& r : s.rows) {
    OrderedJson row;
    row["seed"] = r.seed;
    row["level"] = r.level;
    row["bce"] = r.bce;
    row["coverage"] = r.coverage;
    row["labeled"] = r.labeled;
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
}

void to_json(OrderedJson& j, const QualityStudy& q) {
  j = OrderedJson::object();
  j["coverage"] = q.coverage;
  j["seeds"] = q.seeds;
  j["bce_exact"] = q.bce_exact;
  j["bce_imputed"] = q.bce_imputed;
  j["mean_bce_exact"] = q.mean_bce_exact;
  j["mean_bce_imputed"] = q.mean_bce_imputed;
}

}  // namespace specache
