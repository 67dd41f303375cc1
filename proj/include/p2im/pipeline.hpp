#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "p2im/dataset.hpp"
#include "p2im/metrics.hpp"
#include "p2im/oracle.hpp"
#include "p2im/predictor.hpp"
#include "p2im/token.hpp"

namespace p2im {

enum class SignalClass { tp_prime, fn_prime };

std::string_view to_string(SignalClass c);

struct ReductionResult {
  std::string sample_id;
  std::size_t original_len = 0;
  std::size_t minimal_len = 0;
  bool reduced = false;
  bool buggy_line_present = false;
  std::optional<SignalClass> classification; // empty iff oracle_failure is set
  std::size_t oracle_calls = 0;
  std::size_t cache_hits = 0;
  double wall_time = 0.0;
  std::optional<std::string> oracle_failure;

  /// The 1-minimal itself; kept in memory only, not part of the results file.
  std::vector<Token> minimal;

  nlohmann::ordered_json to_json() const;
  static ReductionResult from_json(const nlohmann::json& j);
};

struct ConfusionPartition {
  std::set<std::string> tp, fn, fp, tn;
};

/// Asks the predictor about every sample's original code.
/// Throws OracleInfrastructureError naming the sample when the predictor fails.
ConfusionPartition classify(const std::vector<Sample>& samples, Predictor& predictor);

struct ReduceOptions {
  TokenizerProfile profile;
  /// Per-sample oracle call cap is budget_factor * |S|^2.
  double budget_factor = 10.0;
};

/// Reduces one true positive to a 1-minimal and judges whether any of its bug
/// lines survived. Oracle infrastructure failures land in `oracle_failure`;
/// a NondeterminismError is rethrown because it invalidates the whole run.
ReductionResult reduce_sample(const Sample& sample, const OracleConfig& config,
                              Predictor& predictor, std::shared_ptr<VerdictCache> cache,
                              const ReduceOptions& options = {});

struct SignalReport {
  nlohmann::ordered_json predictor;
  std::string corpus_fingerprint;
  std::size_t samples = 0;
  ConfusionCounts confusion;
  std::int64_t tp_prime = 0;
  std::int64_t fn_prime = 0;
  std::int64_t oracle_failures = 0;
  ClassificationMetrics classification;
  Fraction sar;
  Fraction sar_lower_bound; // oracle failures counted as FN'
  ReductionStats reduction;
  std::string vuln_match_mode;
  std::string validator;
  std::uint64_t seed = 0;
  std::optional<std::string> started_at;
  std::optional<std::string> finished_at;

  nlohmann::ordered_json to_json() const;
  static SignalReport from_json(const nlohmann::json& j);
};

SignalReport aggregate(const ConfusionPartition& partition,
                       const std::vector<ReductionResult>& results);

struct EvaluationOptions {
  ReduceOptions reduce;
  std::size_t worker_count = 1;
  bool resume = false;
  bool deterministic = false;
  std::uint64_t seed = 0;
  std::string corpus_fingerprint;
  /// Checked between samples; when set the run stops and throws Interrupted.
  const std::atomic<bool>* stop = nullptr;
  /// Called by the writer after each record is durably appended.
  std::function<void(std::size_t records_written)> on_record;
};

class Interrupted : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kResultsFile = "results.jsonl";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kRunMetaFile = "run.json";
inline constexpr const char* kOverlapFile = "overlap.json";

/// Classifies, reduces every TP and aggregates. Results stream to
/// run_dir/results.jsonl as they complete; with `resume` the samples already
/// recorded there are reused. Writes run_dir/report.json.
SignalReport run_evaluation(const std::vector<Sample>& samples, const PredictorHandle& predictor,
                            const OracleConfig& config, const std::filesystem::path& run_dir,
                            const EvaluationOptions& options);

/// Reads results.jsonl, dropping records that do not parse (a torn final
/// write). When `repair` is set the file is rewritten without them.
std::vector<ReductionResult> load_results(const std::filesystem::path& path, bool repair = false);

SignalReport load_report(const std::filesystem::path& run_dir);

struct OverlapSummary {
  std::vector<std::string> run_dirs;
  std::optional<double> tp_overlap_pct;
  std::optional<double> tp_prime_overlap_pct;

  nlohmann::ordered_json to_json() const;
};

/// TP and TP' overlap across completed runs. Throws ConfigError when the runs
/// were made over different corpora.
OverlapSummary overlap_runs(const std::vector<std::filesystem::path>& run_dirs);

/// Writes `contents` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

} // namespace p2im
