// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "../support/checks.hpp"
#include "specache/experiment.hpp"

using namespace specache;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << id << " (" << name << "): " << detail << std::endl;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << std::fixed << v;
  return s.str();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void locality(const ExperimentConfig& config) {
  const auto t0 = Clock::now();
  const World world = World::generate(config.world);
  const std::size_t n = std::max<std::size_t>(config.run.n_requests, 10000);
  const auto trace = generate_trace(world, n);
  const LocalityStats s = measure_locality(trace, config.world.revisit_window_hours * kHour);
  const double secs = seconds_since(t0);
  const bool ok = s.requests >= 10000 && s.mean_overlap >= 0.55 && s.mean_overlap <= 0.65 && secs <= 60.0;
  report(1, "locality calibration", ok,
         "mean 6h overlap " + fmt(s.mean_overlap) + " over " + std::to_string(s.requests_with_history) + " of " +
             std::to_string(s.requests) + " requests with history, " + fmt(secs, 1) + "s");
}

void end_to_end(ExperimentConfig config) {
  config.run.seeds = {config.world.seed};
  config.run.n_requests = std::max<std::size_t>(config.run.n_requests, 50000);
  const auto t0 = Clock::now();
  const OrderedJson doc = run_simulate(config, std::nullopt);
  const double secs = seconds_since(t0);
  const auto& t = doc["runs"][0]["treatment"];
  const double exact = t["coverage_exact"];
  const double effective = t["coverage_effective"];
  const double any = t["coverage_any_signal"];
  const std::string tail = " (" + std::to_string(config.run.n_requests) + " requests, seed " +
                           std::to_string(config.world.seed) + ", " + fmt(secs, 1) + "s)";
  report(2, "exact coverage band", exact >= 0.35 && exact <= 0.55 && secs <= 300.0,
         "coverage_exact " + fmt(exact) + tail);
  report(3, "aggregated-embedding lift", config.enrichment.enable_agg && any >= 0.85,
         "coverage_any_signal " + fmt(any));
  const bool sim_ok = config.enrichment.enable_similarity && config.enrichment.k_neighbors == 100 &&
                      effective - exact >= 0.20 && effective >= 0.60 && effective <= 0.80;
  report(4, "similarity lift", sim_ok,
         "coverage_effective " + fmt(effective) + ", lift " + fmt(effective - exact) + ", k " +
             std::to_string(config.enrichment.k_neighbors));
}

OracleStudyOptions study_options(const ExperimentConfig& c) {
  OracleStudyOptions o;
  o.n_requests = c.sweep.n_requests;
  o.warmup_fraction = c.run.warmup_fraction;
  o.d_emb = c.d_emb;
  o.k_neighbors = c.enrichment.k_neighbors;
  o.strategy = c.enrichment.strategy;
  o.serving = c.serving;
  return o;
}

void sweep(const ExperimentConfig& config) {
  const std::vector<double> levels{0.0, 0.2, 0.5, 0.6, 1.0};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto t0 = Clock::now();
  const SweepResult s = coverage_sweep(config.world, levels, seeds, study_options(config));
  const SweepTrend trend = sweep_trend(s.mean_bce, 0.001, 1);
  std::string bces;
  for (double b : s.mean_bce) bces += (bces.empty() ? "" : " ") + fmt(b, 5);
  report(5, "coverage to loss trend", trend.strictly_better_at_full && trend.within_tolerance,
         "mean BCE [" + bces + "], violations " + std::to_string(trend.adjacent_violations) + ", worst rise " +
             fmt(trend.worst_violation_rel * 100, 3) + "%, " + fmt(seconds_since(t0), 1) + "s");
}

void quality(const ExperimentConfig& config) {
  const auto t0 = Clock::now();
  const QualityStudy q = imputation_quality_study(config.world, 0.5, {1, 2, 3}, study_options(config));
  report(6, "enrichment quality ordering", q.mean_bce_exact <= q.mean_bce_imputed,
         "BCE exact " + fmt(q.mean_bce_exact, 5) + " vs imputed " + fmt(q.mean_bce_imputed, 5) + " at c = 0.5, " +
             fmt(seconds_since(t0), 1) + "s");
}

void verifier() {
  const auto r = checks::verifier_suite(20240601);
  report(7, "verifier exactness", r.ok,
         std::to_string(r.checked) + " checks" + (r.ok ? std::string() : ": " + r.detail));
}

void ttl() {
  std::size_t ops = 0;
  checks::Result all;
  const std::pair<std::uint64_t, std::size_t> runs[] = {{1, 0}, {2, 500}};
  for (auto [seed, capacity] : runs) {
    const auto r = checks::ttl_soundness(seed, 600000, capacity);
    ops += 600000;
    all.checked += r.checked;
    if (!r.ok) all.fail(r.detail);
  }
  report(8, "TTL soundness", all.ok,
         std::to_string(ops) + " ops, " + std::to_string(all.checked) + " checks" +
             (all.ok ? std::string() : ": " + all.detail));
}

void decoupling(const ExperimentConfig& config) {
  WorldConfig wc = config.world;
  const World world = World::generate(wc);
  const Teacher teacher = Teacher::for_world(world, config.d_emb);
  const auto trace = generate_trace(world, 3000);
  std::vector<std::vector<Duration>> latencies;
  std::vector<std::size_t> written;
  for (double cost : {0.0, 0.05, 5.0}) {
    ExperimentConfig c = config;
    c.precompute.per_embedding_cost = cost;
    c.run.deterministic_mode = true;
    const ArmRun arm = run_arm("treatment", world, teacher, trace, make_pipeline_config(c, true), 0.0);
    latencies.push_back(arm.latencies);
    written.push_back(arm.cycles.embeddings_written);
  }
  const bool same = latencies[0] == latencies[1] && latencies[1] == latencies[2];
  report(9, "decoupling", same,
         std::string(same ? "identical" : "different") + " latency sequences over " + std::to_string(trace.size()) +
             " requests; embeddings written " + std::to_string(written[0]) + " / " + std::to_string(written[1]) +
             " / " + std::to_string(written[2]));
}

void gradient() {
  double worst = 0.0;
  const auto r = checks::gradient_check(7, 100, 1e-6, &worst);
  std::ostringstream w;
  w << worst;
  report(10, "gradient check", r.ok, std::to_string(r.checked) + " pairs, worst relative error " + w.str());
}

void determinism(const std::string& cli, const std::filesystem::path& config_path) {
  const auto work = std::filesystem::temp_directory_path() / "specache_acceptance_determinism";
  std::filesystem::remove_all(work);
  std::filesystem::create_directories(work);
  ExperimentConfig c = load_experiment_config(config_path);
  c.run.n_requests = 5000;
  c.run.deterministic_mode = true;
  {
    std::ofstream out(work / "config.json");
    out << OrderedJson(c).dump(2) << '\n';
  }
  bool ok = true;
  std::string detail;
  for (const char* run : {"a", "b"}) {
    const std::string cmd = "\"" + cli + "\" simulate --config \"" + (work / "config.json").string() + "\" --out \"" +
                            (work / run).string() + "\" > \"" + (work / (std::string(run) + ".log")).string() + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) {
      ok = false;
      detail = "cli run " + std::string(run) + " failed";
    }
  }
  if (ok) {
    const std::string a = slurp(work / "a" / "report.json");
    const std::string b = slurp(work / "b" / "report.json");
    ok = !a.empty() && a == b;
    detail = std::to_string(a.size()) + "-byte report.json, " + (ok ? "identical" : "different") +
             " across two CLI runs (" + std::to_string(c.run.n_requests) + " requests)";
  }
  report(11, "determinism", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"specache acceptance checks"};
  std::string cli;
  std::string config_path;
  app.add_option("--cli", cli, "path to the specache binary")->required();
  app.add_option("--config", config_path, "shipped default config")->required();
  CLI11_PARSE(app, argc, argv);

  ExperimentConfig config;
  try {
    config = load_experiment_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "cannot load " << config_path << ": " << e.what() << '\n';
    return 2;
  }

  locality(config);
  end_to_end(config);
  sweep(config);
  quality(config);
  verifier();
  ttl();
  decoupling(config);
  gradient();
  determinism(cli, config_path);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures;
}
