#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "specache/json_util.hpp"
#include "specache/metrics.hpp"
#include "specache/serving.hpp"
#include "specache/world.hpp"

namespace specache {

struct RunConfig {
  std::size_t n_requests = 50000;
  /// Each seed replaces world.seed for one paired run.
  std::vector<std::uint64_t> seeds{1};
  bool deterministic_mode = true;
  double warmup_fraction = 0.2;
  bool write_records = true;
};

struct SweepConfig {
  std::vector<double> levels{0.0, 0.2, 0.5, 0.6, 1.0};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t n_requests = 20000;
  /// Coverage at which exact and imputed embeddings are compared.
  double quality_coverage = 0.5;
};

/// Everything one experiment needs. Loaded from JSON with a strict schema:
/// unknown keys anywhere are rejected; omitted keys take the defaults here.
struct ExperimentConfig {
  WorldConfig world;
  std::size_t d_emb = 8;
  CacheConfig cache;
  VerifierConfig verifier;
  WorkerConfig precompute;
  EnrichmentConfig enrichment;
  ServingConfig serving;
  RunConfig run;
  SweepConfig sweep;
  std::string output_dir = "out";

  void validate() const;
};

void to_json(OrderedJson& j, const ExperimentConfig& c);

/// Parses and validates a config document. Syntax errors and schema errors
/// are reported as ConfigError whose message carries the line number.
ExperimentConfig parse_experiment_config(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Hex FNV-1a of the effective config as canonical JSON.
std::string config_digest(const ExperimentConfig& config);

PipelineConfig make_pipeline_config(const ExperimentConfig& config, bool use_embeddings);

/// One pipeline driven over a trace in deterministic order.
struct ArmRun {
  std::string name;
  std::vector<ServingRecord> records;  // after warmup
  std::vector<Duration> latencies;     // every request, in order
  ExperimentReport report;
  QueueStats queue;
  CycleReport cycles;
};

struct ArmSinks {
  std::ostream* cycles = nullptr;
  std::ostream* decisions = nullptr;
};

ArmRun run_arm(const std::string& name, const World& world, const Teacher& teacher,
               const std::vector<RankingRequest>& trace, const PipelineConfig& pipeline, double warmup_fraction,
               std::optional<double> baseline_bce = std::nullopt, const std::string& digest = {},
               const ArmSinks& sinks = {});

/// Paired baseline/treatment runs on one trace per seed. When `out_dir` is
/// set, writes report.json, report.csv, records.jsonl, cycles.jsonl and
/// decisions.jsonl there. Returns the report document.
OrderedJson run_simulate(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir);

/// Coverage sweep plus the exact-vs-imputed quality study. Writes sweep.csv
/// and sweep.json when `out_dir` is set.
OrderedJson run_sweep(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir);

/// Enrichment ablation {none, +agg, +similarity, +both} against the baseline
/// on one trace per seed. Writes ablation.json and ablation.csv.
OrderedJson run_ablate(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir);

/// "0,0.2,0.5" -> {0, 0.2, 0.5}. Throws ValidationError on bad tokens.
std::vector<double> parse_levels(std::string_view text);

}  // namespace specache
