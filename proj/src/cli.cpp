#include "p2im/cli.hpp"

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "p2im/config.hpp"
#include "p2im/dataset.hpp"
#include "p2im/errors.hpp"
#include "p2im/hash.hpp"
#include "p2im/log.hpp"
#include "p2im/pipeline.hpp"
#include "p2im/subprocess.hpp"

namespace p2im {

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

std::string pct(const std::optional<double>& f) {
  if (!f)
    return "n/a";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", *f * 100.0);
  return buf;
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ManifestError("cannot open manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct Overrides {
  std::string run_dir;
  std::string manifest;
  int workers = 0;
  std::optional<std::uint64_t> seed;
};

RunConfig load_config(const std::string& path, const Overrides& o) {
  RunConfig c = load_run_config(path);
  if (!o.run_dir.empty())
    c.run_dir = o.run_dir;
  if (!o.manifest.empty())
    c.manifest_path = o.manifest;
  if (o.workers > 0)
    c.worker_count = static_cast<std::size_t>(o.workers);
  if (o.seed)
    c.seed = *o.seed;
  if (c.manifest_path.empty())
    throw ConfigError("no manifest_path configured");
  c.validate();
  return c;
}

// --- reduce -----------------------------------------------------------------------

int cmd_reduce(const RunConfig& config, const std::string& sample_id, const std::string& predictor_name,
               std::ostream& out, std::ostream& err) {
  auto samples = load_manifest(config.manifest_path);
  auto it = std::find_if(samples.begin(), samples.end(), [&](const Sample& s) { return s.id == sample_id; });
  if (it == samples.end()) {
    err << "p2im: unknown sample id '" << sample_id << "'\n";
    return kExitUsage;
  }
  const PredictorHandle& handle =
      predictor_name.empty() ? config.predictors.front() : config.predictor(predictor_name);
  OracleConfig oracle = config.oracle_config();
  auto predictor = make_predictor(handle);
  ReduceOptions options;
  options.profile = config.tokenizer;
  options.budget_factor = config.budget_factor;
  ReductionResult r = reduce_sample(*it, oracle, *predictor,
                                    std::make_shared<VerdictCache>(config.cache_capacity), options);

  auto dir = config.run_dir / "reduce";
  std::filesystem::create_directories(dir);
  const std::string json = r.to_json().dump(2) + "\n";
  write_file_atomic(dir / (sample_id + ".result.json"), json);
  out << json;
  if (r.oracle_failure) {
    err << "p2im: oracle failure: " << *r.oracle_failure << '\n';
    return kExitOracleFailure;
  }
  std::string program = render(r.minimal) + "\n";
  write_file_atomic(dir / (sample_id + ".min.c"), program);
  out << "--- 1-minimal (" << r.minimal_len << " of " << r.original_len << " tokens) ---\n" << program;
  return kExitOk;
}

// --- evaluate ---------------------------------------------------------------------

int cmd_evaluate(const RunConfig& config, bool resume, bool deterministic, long abort_after,
                 std::ostream& out) {
  const std::string manifest_bytes = read_bytes(config.manifest_path);
  auto samples = parse_manifest(manifest_bytes);
  if (samples.empty())
    throw ConfigError("manifest " + config.manifest_path.string() + " holds no samples");

  std::error_code ec;
  std::filesystem::create_directories(config.run_dir, ec);
  if (ec || !std::filesystem::is_directory(config.run_dir))
    throw ConfigError("cannot create run directory " + config.run_dir.string());
  // Probe writability up front so a bad run_dir fails before any work.
  {
    auto probe = config.run_dir / ".write-probe";
    std::ofstream f(probe);
    if (!f)
      throw ConfigError("run directory " + config.run_dir.string() + " is not writable");
    f.close();
    std::filesystem::remove(probe, ec);
  }

  set_spawn_limit(std::max<std::size_t>(config.worker_count, 1) * 2);
  OracleConfig oracle = config.oracle_config();
  EvaluationOptions options;
  options.reduce.profile = config.tokenizer;
  options.reduce.budget_factor = config.budget_factor;
  options.worker_count = config.worker_count;
  options.resume = resume;
  options.deterministic = deterministic;
  options.seed = config.seed;
  options.corpus_fingerprint = sha256_hex(manifest_bytes);
  options.stop = &g_stop;

  std::vector<std::filesystem::path> dirs;
  out << "predictor            Accuracy     F1 Recall    SAR  Reduced  AvgRed  Failures\n";
  for (const auto& handle : config.predictors) {
    auto dir = config.run_dir / handle.name;
    if (abort_after > 0) {
      auto results_path = dir / kResultsFile;
      options.on_record = [abort_after, results_path](std::size_t written) {
        if (static_cast<long>(written) < abort_after)
          return;
        // Simulate dying in the middle of a write.
        std::ofstream torn(results_path, std::ios::app);
        torn << "{\"sample_id\":\"torn";
        torn.flush();
        std::_Exit(137);
      };
    }
    SignalReport rep = run_evaluation(samples, handle, oracle, dir, options);
    char row[160];
    std::snprintf(row, sizeof row, "%-20s %8s %6s %6s %6s %8s %7s %9lld\n", handle.name.c_str(),
                  pct(rep.classification.accuracy).c_str(), pct(rep.classification.f1).c_str(),
                  pct(rep.classification.recall).c_str(), pct(rep.sar).c_str(),
                  pct(rep.reduction.pct_samples_reduced).c_str(),
                  pct(rep.reduction.avg_reduction_pct).c_str(),
                  static_cast<long long>(rep.oracle_failures));
    out << row;
    dirs.push_back(dir);
  }
  if (dirs.size() >= 2) {
    OverlapSummary summary = overlap_runs(dirs);
    write_file_atomic(config.run_dir / kOverlapFile, summary.to_json().dump(2) + "\n");
    out << "TP overlap: " << (summary.tp_overlap_pct ? std::to_string(*summary.tp_overlap_pct) : "n/a")
        << "%  TP' overlap: "
        << (summary.tp_prime_overlap_pct ? std::to_string(*summary.tp_prime_overlap_pct) : "n/a")
        << "%\n";
  }
  return kExitOk;
}

// --- overlap ----------------------------------------------------------------------

int cmd_overlap(const std::vector<std::string>& dirs, std::ostream& out) {
  std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
  OverlapSummary s = overlap_runs(paths);
  auto show = [](const std::optional<double>& v) {
    if (!v)
      return std::string("n/a");
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.1f%%", *v);
    return std::string(buf);
  };
  out << "TP overlap:  " << show(s.tp_overlap_pct) << "\n";
  out << "TP' overlap: " << show(s.tp_prime_overlap_pct) << "\n";
  return kExitOk;
}

// --- gen-fixture ------------------------------------------------------------------

int cmd_gen_fixture(const SyntheticSpec& spec, const std::string& out_path, std::ostream& out) {
  auto samples = generate_synthetic(spec);
  write_manifest(out_path, samples);
  std::size_t lines = 0;
  for (const auto& s : samples)
    lines += static_cast<std::size_t>(line_count(s.code));
  out << "wrote " << samples.size() << " samples (" << spec.vulnerable_count << " vulnerable, "
      << spec.clean_count << " clean, " << lines << " lines) to " << out_path << "\n";
  return kExitOk;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prediction-preserving input minimization and signal-aware recall"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  std::string config_path;
  Overrides overrides;
  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run configuration (JSON)")->required();
    cmd->add_option("--run-dir", overrides.run_dir, "Override run_dir");
    cmd->add_option("--manifest", overrides.manifest, "Override manifest_path");
    cmd->add_option("--workers", overrides.workers, "Override worker_count");
    cmd->add_option("--seed", overrides.seed, "Override seed");
  };

  auto* reduce = app.add_subcommand("reduce", "Reduce one sample to a 1-minimal");
  add_overrides(reduce);
  std::string sample_id, predictor_name;
  reduce->add_option("--sample", sample_id, "Sample id")->required();
  reduce->add_option("--predictor", predictor_name, "Predictor name (default: first configured)");

  auto* evaluate = app.add_subcommand("evaluate", "Classify, reduce every TP, report Recall and SAR");
  add_overrides(evaluate);
  bool resume = false, deterministic = false;
  long abort_after = 0;
  evaluate->add_flag("--resume", resume, "Reuse results already in the run directory");
  evaluate->add_flag("--deterministic", deterministic, "Omit timestamps and wall times");
  evaluate->add_option("--abort-after", abort_after)->group("");

  auto* overlap_cmd = app.add_subcommand("overlap", "TP and TP' overlap across completed runs");
  std::vector<std::string> run_dirs;
  overlap_cmd->add_option("run_dirs", run_dirs, "Run directories")->required()->expected(2, -1);

  auto* gen = app.add_subcommand("gen-fixture", "Write a synthetic manifest");
  SyntheticSpec spec;
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output manifest path")->required();
  gen->add_option("--seed", spec.seed, "Generator seed")->required();
  gen->add_option("--vulnerable", spec.vulnerable_count, "Vulnerable samples");
  gen->add_option("--clean", spec.clean_count, "Clean samples");
  gen->add_option("--buggy-pattern", spec.buggy_pattern, "Statement planted on the bug line");
  gen->add_option("--decoy", spec.decoy_token, "Identifier planted in every vulnerable sample");
  gen->add_option("--min-filler", spec.min_filler, "Minimum filler statements per block");
  gen->add_option("--max-filler", spec.max_filler, "Maximum filler statements per block");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }
  if (verbose)
    log::set_level(log::Level::info);

  try {
    if (*reduce)
      return cmd_reduce(load_config(config_path, overrides), sample_id, predictor_name, out, err);
    if (*evaluate) {
      g_stop = false;
      auto old_int = std::signal(SIGINT, on_signal);
      auto old_term = std::signal(SIGTERM, on_signal);
      int rc = cmd_evaluate(load_config(config_path, overrides), resume, deterministic, abort_after, out);
      std::signal(SIGINT, old_int);
      std::signal(SIGTERM, old_term);
      return rc;
    }
    if (*overlap_cmd)
      return cmd_overlap(run_dirs, out);
    if (*gen)
      return cmd_gen_fixture(spec, gen_out, out);
  } catch (const Interrupted& e) {
    err << "p2im: " << e.what() << '\n';
    return kExitInterrupted;
  } catch (const NondeterminismError& e) {
    err << "p2im: predictor is not deterministic: " << e.what() << '\n';
    return kExitOracleFailure;
  } catch (const OracleInfrastructureError& e) {
    err << "p2im: oracle infrastructure failure: " << describe(e) << '\n';
    return kExitOracleFailure;
  } catch (const std::exception& e) {
    err << "p2im: " << describe(e) << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

} // namespace p2im
