#include "specache/experiment.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace specache {

namespace {

constexpr const char* kTrendNote =
    "Absolute loss deltas of a production model are not reproducible here; compare orderings and trends only.";

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Best-effort source line for a JSON pointer: follow the quoted key names in
// document order.
std::size_t line_of_pointer(std::string_view text, const std::string& pointer) {
  std::size_t pos = 0;
  std::size_t start = 1;
  while (start <= pointer.size()) {
    std::size_t end = pointer.find('/', start);
    if (end == std::string::npos) end = pointer.size();
    const std::string token = pointer.substr(start, end - start);
    start = end + 1;
    if (token.empty() || std::all_of(token.begin(), token.end(), ::isdigit)) continue;
    const std::size_t found = text.find("\"" + token + "\"", pos);
    if (found == std::string_view::npos) break;
    pos = found;
  }
  return line_of_offset(text, pos);
}

template <typename T>
OrderedJson ordered(const T& value) {
  Json j = value;
  return OrderedJson::parse(j.dump());
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  world.validate();
  if (d_emb < 1) throw ValidationError("teacher.d_emb must be >= 1");
  if (d_emb > 3 * static_cast<std::size_t>(world.d_lat))
    throw ValidationError("teacher.d_emb cannot exceed 3 * world.d_lat");
  cache.validate();
  verifier.validate();
  precompute.validate();
  enrichment.validate();
  serving.validate();
  if (run.n_requests < 1) throw ValidationError("run.n_requests must be >= 1");
  if (run.seeds.empty()) throw ValidationError("run.seeds must not be empty");
  if (!(run.warmup_fraction >= 0.0 && run.warmup_fraction < 1.0))
    throw ValidationError("run.warmup_fraction must lie in [0, 1)");
  if (sweep.seeds.empty()) throw ValidationError("sweep.seeds must not be empty");
  if (sweep.n_requests < 1) throw ValidationError("sweep.n_requests must be >= 1");
  if (!(sweep.quality_coverage > 0.0 && sweep.quality_coverage <= 1.0))
    throw ValidationError("sweep.quality_coverage must lie in (0, 1]");
  for (std::size_t k = 0; k < sweep.levels.size(); ++k) {
    if (!(sweep.levels[k] >= 0.0 && sweep.levels[k] <= 1.0)) throw ValidationError("sweep.levels must lie in [0, 1]");
    if (k > 0 && sweep.levels[k] < sweep.levels[k - 1]) throw ValidationError("sweep.levels must be sorted");
  }
}

void to_json(OrderedJson& j, const ExperimentConfig& c) {
  j = OrderedJson::object();
  j["world"] = ordered(c.world);
  j["teacher"] = OrderedJson{{"d_emb", c.d_emb}};
  j["cache"] = ordered(c.cache);
  j["verifier"] = ordered(c.verifier);
  j["precompute"] = ordered(c.precompute);
  j["enrichment"] = ordered(c.enrichment);
  j["serving"] = ordered(c.serving);
  OrderedJson run;
  run["n_requests"] = c.run.n_requests;
  run["seeds"] = c.run.seeds;
  run["deterministic_mode"] = c.run.deterministic_mode;
  run["warmup_fraction"] = c.run.warmup_fraction;
  run["write_records"] = c.run.write_records;
  j["run"] = std::move(run);
  OrderedJson sweep;
  sweep["levels"] = c.sweep.levels;
  sweep["seeds"] = c.sweep.seeds;
  sweep["n_requests"] = c.sweep.n_requests;
  sweep["quality_coverage"] = c.sweep.quality_coverage;
  j["sweep"] = std::move(sweep);
  j["output_dir"] = c.output_dir;
}

ExperimentConfig parse_experiment_config(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("/", "line " + std::to_string(line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1)) +
                               ": syntax error: " + e.what());
  }

  ExperimentConfig c;
  try {
    StrictObject o(doc, "");
    o.nested("world", [&](const Json& j, const std::string& p) { c.world = world_config_from_json(j, p); });
    o.nested("teacher", [&](const Json& j, const std::string& p) {
      StrictObject t(j, p);
      t.read("d_emb", c.d_emb);
      t.finish();
    });
    o.nested("cache", [&](const Json& j, const std::string& p) { c.cache = cache_config_from_json(j, p); });
    o.nested("verifier", [&](const Json& j, const std::string& p) { c.verifier = verifier_config_from_json(j, p); });
    o.nested("precompute", [&](const Json& j, const std::string& p) { c.precompute = worker_config_from_json(j, p); });
    o.nested("enrichment", [&](const Json& j, const std::string& p) { c.enrichment = enrichment_config_from_json(j, p); });
    o.nested("serving", [&](const Json& j, const std::string& p) { c.serving = serving_config_from_json(j, p); });
    o.nested("run", [&](const Json& j, const std::string& p) {
      StrictObject r(j, p);
      r.read("n_requests", c.run.n_requests);
      r.read("seeds", c.run.seeds);
      r.read("deterministic_mode", c.run.deterministic_mode);
      r.read("warmup_fraction", c.run.warmup_fraction);
      r.read("write_records", c.run.write_records);
      r.finish();
    });
    o.nested("sweep", [&](const Json& j, const std::string& p) {
      StrictObject s(j, p);
      s.read("levels", c.sweep.levels);
      s.read("seeds", c.sweep.seeds);
      s.read("n_requests", c.sweep.n_requests);
      s.read("quality_coverage", c.sweep.quality_coverage);
      s.finish();
    });
    o.read("output_dir", c.output_dir);
    o.finish();
  } catch (const ConfigError& e) {
    std::string message = e.what();
    const std::string prefix = e.path() + ": ";
    if (message.starts_with(prefix)) message.erase(0, prefix.size());
    throw ConfigError(e.path(), "line " + std::to_string(line_of_pointer(text, e.path())) + ": " + message);
  }

  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ConfigError("/", e.what());
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("/", "cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

std::string config_digest(const ExperimentConfig& config) {
  OrderedJson j = config;
  j.erase("output_dir");
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return hex;
}

PipelineConfig make_pipeline_config(const ExperimentConfig& config, bool use_embeddings) {
  PipelineConfig p;
  p.use_embeddings = use_embeddings;
  p.d_emb = config.d_emb;
  p.cache = config.cache;
  p.verifier = config.verifier;
  p.precompute = config.precompute;
  p.precompute.parallel = !config.run.deterministic_mode && config.precompute.parallel;
  p.enrichment = config.enrichment;
  p.serving = config.serving;
  return p;
}

ArmRun run_arm(const std::string& name, const World& world, const Teacher& teacher,
               const std::vector<RankingRequest>& trace, const PipelineConfig& pipeline_config, double warmup_fraction,
               std::optional<double> baseline_bce, const std::string& digest, const ArmSinks& sinks) {
  Pipeline pipeline(world, teacher, pipeline_config);
  if (sinks.cycles)
    pipeline.on_cycle([&](const CycleReport& r) { *sinks.cycles << Json(r).dump() << '\n'; });
  if (sinks.decisions)
    pipeline.on_decision([&](const VerifierDecision& d) { *sinks.decisions << Json(d).dump() << '\n'; });

  ArmRun run;
  run.name = name;
  const auto warmup = static_cast<std::size_t>(warmup_fraction * static_cast<double>(trace.size()));
  run.latencies.reserve(trace.size());
  run.records.reserve(trace.size() - std::min(warmup, trace.size()));
  for (std::size_t k = 0; k < trace.size(); ++k) {
    ServingRecord rec = pipeline.step(trace[k]);
    run.latencies.push_back(rec.serving_latency_sim);
    if (k >= warmup) run.records.push_back(std::move(rec));
  }
  std::optional<CacheStats> stats;
  if (pipeline_config.use_embeddings) stats = pipeline.cache().stats();
  run.report = compute_report(run.records, stats, baseline_bce, digest);
  run.queue = pipeline.queue().stats();
  run.cycles = pipeline.cycle_totals();
  return run;
}

namespace {

OrderedJson arm_json(const ArmRun& arm) {
  OrderedJson j = arm.report;
  j["queue"] = ordered(arm.queue);
  j["cycles"] = ordered(arm.cycles);
  return j;
}

void write_records(std::ostream& out, const ArmRun& arm, std::uint64_t seed) {
  for (const auto& r : arm.records) {
    Json j = r;
    j["seed"] = seed;
    j["arm"] = arm.name;
    out << j.dump() << '\n';
  }
}

const char* kReportCsvHeader =
    "seed,arm,coverage_exact,coverage_effective,coverage_any_signal,bce,relative_bce_reduction_pct,hit_rate\n";

void write_report_row(std::ostream& out, std::uint64_t seed, const ArmRun& arm) {
  const ExperimentReport& r = arm.report;
  out << seed << ',' << arm.name << ',' << format_double(r.coverage_exact) << ','
      << format_double(r.coverage_effective) << ',' << format_double(r.coverage_any_signal) << ','
      << format_double(r.bce) << ',' << (r.relative_bce_reduction_pct ? format_double(*r.relative_bce_reduction_pct) : "")
      << ',' << (r.cache ? format_double(r.cache->hit_rate()) : "") << '\n';
}

struct Outputs {
  std::optional<std::ofstream> records, cycles, decisions;
};

}  // namespace

OrderedJson run_simulate(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir) {
  config.validate();
  const std::string digest = config_digest(config);
  Outputs files;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    if (config.run.write_records) files.records = open_out(*out_dir / "records.jsonl");
    files.cycles = open_out(*out_dir / "cycles.jsonl");
    files.decisions = open_out(*out_dir / "decisions.jsonl");
  }

  OrderedJson doc;
  doc["command"] = "simulate";
  doc["note"] = kTrendNote;
  doc["config_digest"] = digest;
  doc["config"] = config;
  OrderedJson runs = OrderedJson::array();
  std::ostringstream csv;
  csv << kReportCsvHeader;
  for (std::uint64_t seed : config.run.seeds) {
    WorldConfig wc = config.world;
    wc.seed = seed;
    const World world = World::generate(wc);
    const Teacher teacher = Teacher::for_world(world, config.d_emb);
    const auto trace = generate_trace(world, config.run.n_requests);

    const ArmRun baseline = run_arm("baseline", world, teacher, trace, make_pipeline_config(config, false),
                                    config.run.warmup_fraction, std::nullopt, digest);
    ArmSinks sinks;
    if (files.cycles) sinks.cycles = &*files.cycles;
    if (files.decisions) sinks.decisions = &*files.decisions;
    const ArmRun treatment = run_arm("treatment", world, teacher, trace, make_pipeline_config(config, true),
                                     config.run.warmup_fraction, baseline.report.bce, digest, sinks);
    if (files.records) {
      write_records(*files.records, baseline, seed);
      write_records(*files.records, treatment, seed);
    }
    write_report_row(csv, seed, baseline);
    write_report_row(csv, seed, treatment);

    const LocalityStats locality = measure_locality(trace, config.world.revisit_window_hours * kHour);
    OrderedJson run;
    run["seed"] = seed;
    run["locality"] = {{"requests", locality.requests},
                       {"requests_with_history", locality.requests_with_history},
                       {"mean_overlap", locality.mean_overlap},
                       {"mean_overlap_all", locality.mean_overlap_all}};
    run["baseline"] = arm_json(baseline);
    run["treatment"] = arm_json(treatment);
    runs.push_back(std::move(run));
  }
  doc["runs"] = std::move(runs);

  if (out_dir) {
    write_text(*out_dir / "report.json", doc.dump(2) + "\n");
    write_text(*out_dir / "report.csv", csv.str());
  }
  return doc;
}

OrderedJson run_sweep(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir) {
  config.validate();
  OracleStudyOptions options;
  options.n_requests = config.sweep.n_requests;
  options.warmup_fraction = config.run.warmup_fraction;
  options.d_emb = config.d_emb;
  options.k_neighbors = config.enrichment.k_neighbors;
  options.strategy = config.enrichment.strategy;
  options.serving = config.serving;

  const SweepResult sweep = coverage_sweep(config.world, config.sweep.levels, config.sweep.seeds, options);
  const SweepTrend trend = sweep_trend(sweep.mean_bce);
  const QualityStudy quality =
      imputation_quality_study(config.world, config.sweep.quality_coverage, config.sweep.seeds, options);

  OrderedJson doc;
  doc["command"] = "sweep";
  doc["note"] = kTrendNote;
  doc["config_digest"] = config_digest(config);
  doc["config"] = config;
  doc["sweep"] = sweep;
  OrderedJson t;
  t["strictly_better_at_full"] = trend.strictly_better_at_full;
  t["adjacent_violations"] = trend.adjacent_violations;
  t["worst_violation_rel"] = trend.worst_violation_rel;
  t["within_tolerance"] = trend.within_tolerance;
  doc["trend"] = std::move(t);
  doc["quality"] = quality;

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    auto csv = open_out(*out_dir / "sweep.csv");
    write_sweep_csv(csv, sweep);
    write_text(*out_dir / "sweep.json", doc.dump(2) + "\n");
  }
  return doc;
}

OrderedJson run_ablate(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir) {
  config.validate();
  const std::string digest = config_digest(config);
  struct Arm {
    const char* name;
    bool agg;
    bool similarity;
  };
  constexpr Arm kArms[] = {{"none", false, false}, {"+agg", true, false}, {"+similarity", false, true}, {"+both", true, true}};

  OrderedJson doc;
  doc["command"] = "ablate";
  doc["note"] = kTrendNote;
  doc["config_digest"] = digest;
  doc["config"] = config;
  OrderedJson runs = OrderedJson::array();
  std::ostringstream csv;
  csv << kReportCsvHeader;
  for (std::uint64_t seed : config.run.seeds) {
    WorldConfig wc = config.world;
    wc.seed = seed;
    const World world = World::generate(wc);
    const Teacher teacher = Teacher::for_world(world, config.d_emb);
    const auto trace = generate_trace(world, config.run.n_requests);
    const ArmRun baseline = run_arm("baseline", world, teacher, trace, make_pipeline_config(config, false),
                                    config.run.warmup_fraction, std::nullopt, digest);
    write_report_row(csv, seed, baseline);
    OrderedJson run;
    run["seed"] = seed;
    run["baseline"] = arm_json(baseline);
    OrderedJson arms = OrderedJson::object();
    for (const Arm& a : kArms) {
      PipelineConfig p = make_pipeline_config(config, true);
      p.enrichment.enable_agg = a.agg;
      p.enrichment.enable_similarity = a.similarity;
      const ArmRun arm = run_arm(a.name, world, teacher, trace, p, config.run.warmup_fraction, baseline.report.bce, digest);
      write_report_row(csv, seed, arm);
      arms[a.name] = arm_json(arm);
    }
    run["arms"] = std::move(arms);
    runs.push_back(std::move(run));
  }
  doc["runs"] = std::move(runs);

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    write_text(*out_dir / "ablation.json", doc.dump(2) + "\n");
    write_text(*out_dir / "ablation.csv", csv.str());
  }
  return doc;
}

std::vector<double> parse_levels(std::string_view text) {
  std::vector<double> levels;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    std::string token(text.substr(start, end - start));
    token.erase(0, token.find_first_not_of(' '));
    token.erase(token.find_last_not_of(' ') + 1);
    if (token.empty()) throw ValidationError("empty coverage level in '" + std::string(text) + "'");
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size()) throw ValidationError("bad coverage level '" + token + "'");
    levels.push_back(v);
    start = end + 1;
  }
  return levels;
}

}  // namespace specache
