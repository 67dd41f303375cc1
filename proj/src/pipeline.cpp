#include "p2im/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cerrno>
#include <cstring>
#include <ctime>
#include <fcntl.h>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unistd.h>
#include <unordered_map>

#include "p2im/ddmin.hpp"
#include "p2im/errors.hpp"
#include "p2im/log.hpp"

namespace p2im {

std::string_view to_string(SignalClass c) { return c == SignalClass::tp_prime ? "TP_PRIME" : "FN_PRIME"; }

namespace {

nlohmann::ordered_json fraction_json(const std::optional<double>& f) {
  return f ? nlohmann::ordered_json(*f) : nlohmann::ordered_json(nullptr);
}

std::optional<double> fraction_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null())
    return std::nullopt;
  return j.at(key).get<double>();
}

std::string utc_now() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Returns the message of a NondeterminismError anywhere in the nested chain.
std::optional<std::string> find_nondeterminism(const std::exception& e) {
  if (dynamic_cast<const NondeterminismError*>(&e) != nullptr)
    return std::string(e.what());
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    return find_nondeterminism(inner);
  } catch (...) {
  }
  return std::nullopt;
}

class ResultsWriter {
public:
  explicit ResultsWriter(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0)
      throw ConfigError("cannot open " + path.string() + ": " + std::strerror(errno));
  }
  ~ResultsWriter() {
    if (fd_ >= 0)
      ::close(fd_);
  }
  ResultsWriter(const ResultsWriter&) = delete;
  ResultsWriter& operator=(const ResultsWriter&) = delete;

  std::size_t append(const ReductionResult& r) {
    std::string line = r.to_json().dump() + "\n";
    std::lock_guard lock(mutex_);
    std::size_t done = 0;
    while (done < line.size()) {
      ssize_t n = ::write(fd_, line.data() + done, line.size() - done);
      if (n < 0) {
        if (errno == EINTR)
          continue;
        throw std::runtime_error(std::string("writing results: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
    return ++written_;
  }

private:
  int fd_ = -1;
  std::mutex mutex_;
  std::size_t written_ = 0;
};

} // namespace

// --- ReductionResult -------------------------------------------------------------

nlohmann::ordered_json ReductionResult::to_json() const {
  nlohmann::ordered_json j;
  j["sample_id"] = sample_id;
  j["original_len"] = original_len;
  j["minimal_len"] = minimal_len;
  j["reduced"] = reduced;
  j["buggy_line_present"] = buggy_line_present;
  j["classification"] = classification ? nlohmann::ordered_json(to_string(*classification))
                                       : nlohmann::ordered_json(nullptr);
  j["oracle_calls"] = oracle_calls;
  j["cache_hits"] = cache_hits;
  j["wall_time"] = wall_time;
  j["oracle_failure"] = oracle_failure ? nlohmann::ordered_json(*oracle_failure)
                                       : nlohmann::ordered_json(nullptr);
  return j;
}

ReductionResult ReductionResult::from_json(const nlohmann::json& j) {
  ReductionResult r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.original_len = j.at("original_len").get<std::size_t>();
  r.minimal_len = j.at("minimal_len").get<std::size_t>();
  r.reduced = j.at("reduced").get<bool>();
  r.buggy_line_present = j.at("buggy_line_present").get<bool>();
  const auto& c = j.at("classification");
  if (!c.is_null()) {
    auto text = c.get<std::string>();
    if (text == "TP_PRIME")
      r.classification = SignalClass::tp_prime;
    else if (text == "FN_PRIME")
      r.classification = SignalClass::fn_prime;
    else
      throw std::invalid_argument("unknown classification '" + text + "'");
  }
  r.oracle_calls = j.at("oracle_calls").get<std::size_t>();
  r.cache_hits = j.at("cache_hits").get<std::size_t>();
  r.wall_time = j.at("wall_time").get<double>();
  if (!j.at("oracle_failure").is_null())
    r.oracle_failure = j.at("oracle_failure").get<std::string>();
  if (r.classification.has_value() == r.oracle_failure.has_value())
    throw std::invalid_argument("exactly one of classification and oracle_failure must be set");
  return r;
}

// --- classification --------------------------------------------------------------

ConfusionPartition classify(const std::vector<Sample>& samples, Predictor& predictor) {
  ConfusionPartition part;
  if (samples.empty())
    return part;
  std::vector<std::string> programs;
  programs.reserve(samples.size());
  for (const auto& s : samples)
    programs.push_back(s.code);
  std::vector<Prediction> predictions;
  try {
    predictions = predictor.predict_batch(programs);
  } catch (const BatchFailure& e) {
    if (auto msg = find_nondeterminism(e))
      throw NondeterminismError(*msg);
    std::string id = e.index() < samples.size() ? samples[e.index()].id : "?";
    std::throw_with_nested(OracleInfrastructureError("classification failed on sample '" + id + "'"));
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool said_vulnerable = predictions[i].label == Label::vulnerable;
    const auto& id = samples[i].id;
    if (samples[i].label == Label::vulnerable)
      (said_vulnerable ? part.tp : part.fn).insert(id);
    else
      (said_vulnerable ? part.fp : part.tn).insert(id);
  }
  return part;
}

// --- single-sample reduction --------------------------------------------------------

ReductionResult reduce_sample(const Sample& sample, const OracleConfig& config,
                              Predictor& predictor, std::shared_ptr<VerdictCache> cache,
                              const ReduceOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  ReductionResult r;
  r.sample_id = sample.id;
  auto finish = [&]() -> ReductionResult {
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return std::move(r);
  };

  TokenSequence seq;
  try {
    seq = tokenize(sample.code, options.profile, sample.id);
  } catch (const TokenizeError& e) {
    r.oracle_failure = std::string("tokenize: ") + e.what();
    return finish();
  }
  r.original_len = r.minimal_len = seq.size();

  PredictionOracle oracle(config, predictor, std::move(cache));
  TestOracle<Token> test = [&](std::span<const Token> candidate) {
    return oracle.evaluate(candidate, sample).pass;
  };
  const double n = static_cast<double>(seq.size());
  DdOptions dd;
  dd.max_oracle_calls = std::max<std::size_t>(1, static_cast<std::size_t>(options.budget_factor * n * n));

  try {
    auto result = ddmin(test, seq, dd);
    r.oracle_calls = result.trace.oracle_calls;
    r.minimal = std::move(result.sequence);
  } catch (const PreconditionError&) {
    r.oracle_calls = 1;
    try {
      auto verdict = oracle.evaluate(seq.tokens, sample);
      r.oracle_failure = "original program fails the oracle (" + std::string(to_string(verdict.reason)) + ")";
    } catch (const OracleInfrastructureError& e) {
      r.oracle_failure = describe(e);
    }
  } catch (const BudgetExceeded& e) {
    r.oracle_calls = *dd.max_oracle_calls;
    r.oracle_failure = std::string("budget: ") + e.what();
  } catch (const CandidateFailure& e) {
    if (auto msg = find_nondeterminism(e))
      throw NondeterminismError(*msg);
    r.oracle_calls = oracle.calls();
    r.oracle_failure = describe(e);
  }
  r.cache_hits = oracle.cache_hits();
  if (r.oracle_failure)
    return finish();

  r.minimal_len = r.minimal.size();
  r.reduced = r.minimal_len < r.original_len;
  const auto survivors = surviving_lines(r.minimal);
  r.buggy_line_present = std::any_of(sample.bug_lines.begin(), sample.bug_lines.end(),
                                     [&](int line) { return survivors.contains(line); });
  // An unreduced sample keeps its bug lines by identity.
  r.classification = (r.buggy_line_present || !r.reduced) ? SignalClass::tp_prime : SignalClass::fn_prime;
  return finish();
}

// --- reports -----------------------------------------------------------------------

nlohmann::ordered_json SignalReport::to_json() const {
  nlohmann::ordered_json j;
  j["predictor"] = predictor;
  j["corpus_fingerprint"] = corpus_fingerprint;
  j["samples"] = samples;
  j["counts"] = {{"tp", confusion.tp},       {"fn", confusion.fn},
                 {"fp", confusion.fp},       {"tn", confusion.tn},
                 {"tp_prime", tp_prime},     {"fn_prime", fn_prime},
                 {"oracle_failures", oracle_failures}};
  j["accuracy"] = fraction_json(classification.accuracy);
  j["precision"] = fraction_json(classification.precision);
  j["recall"] = fraction_json(classification.recall);
  j["f1"] = fraction_json(classification.f1);
  j["sar"] = fraction_json(sar);
  j["sar_lower_bound"] = fraction_json(sar_lower_bound);
  j["pct_samples_reduced"] = fraction_json(reduction.pct_samples_reduced);
  j["avg_reduction_pct"] = fraction_json(reduction.avg_reduction_pct);
  j["avg_reduction_pct_incl_unreduced"] = fraction_json(reduction.avg_reduction_pct_incl_unreduced);
  j["vuln_match_mode"] = vuln_match_mode;
  j["validator"] = validator;
  j["seed"] = seed;
  j["started_at"] = started_at ? nlohmann::ordered_json(*started_at) : nlohmann::ordered_json(nullptr);
  j["finished_at"] = finished_at ? nlohmann::ordered_json(*finished_at) : nlohmann::ordered_json(nullptr);
  j["note"] = "one deterministic 1-minimal per sample; bug survival is judged per line, so sar is "
              "an upper bound on signal awareness";
  return j;
}

SignalReport SignalReport::from_json(const nlohmann::json& j) {
  SignalReport r;
  r.predictor = j.at("predictor");
  r.corpus_fingerprint = j.at("corpus_fingerprint").get<std::string>();
  r.samples = j.at("samples").get<std::size_t>();
  const auto& c = j.at("counts");
  r.confusion = {c.at("tp").get<std::int64_t>(), c.at("fn").get<std::int64_t>(),
                 c.at("fp").get<std::int64_t>(), c.at("tn").get<std::int64_t>()};
  r.tp_prime = c.at("tp_prime").get<std::int64_t>();
  r.fn_prime = c.at("fn_prime").get<std::int64_t>();
  r.oracle_failures = c.at("oracle_failures").get<std::int64_t>();
  r.classification = {fraction_from(j, "accuracy"), fraction_from(j, "precision"),
                      fraction_from(j, "recall"), fraction_from(j, "f1")};
  r.sar = fraction_from(j, "sar");
  r.sar_lower_bound = fraction_from(j, "sar_lower_bound");
  r.reduction = {fraction_from(j, "pct_samples_reduced"), fraction_from(j, "avg_reduction_pct"),
                 fraction_from(j, "avg_reduction_pct_incl_unreduced")};
  r.vuln_match_mode = j.at("vuln_match_mode").get<std::string>();
  r.validator = j.value("validator", std::string{});
  r.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("started_at") && !j["started_at"].is_null())
    r.started_at = j["started_at"].get<std::string>();
  if (j.contains("finished_at") && !j["finished_at"].is_null())
    r.finished_at = j["finished_at"].get<std::string>();
  return r;
}

SignalReport aggregate(const ConfusionPartition& partition, const std::vector<ReductionResult>& results) {
  SignalReport rep;
  rep.confusion = {static_cast<std::int64_t>(partition.tp.size()),
                   static_cast<std::int64_t>(partition.fn.size()),
                   static_cast<std::int64_t>(partition.fp.size()),
                   static_cast<std::int64_t>(partition.tn.size())};
  rep.samples = partition.tp.size() + partition.fn.size() + partition.fp.size() + partition.tn.size();
  std::vector<ReductionOutcome> outcomes;
  for (const auto& r : results) {
    if (r.oracle_failure) {
      ++rep.oracle_failures;
      continue;
    }
    if (r.classification == SignalClass::tp_prime)
      ++rep.tp_prime;
    else
      ++rep.fn_prime;
    outcomes.push_back({r.reduced, r.original_len, r.minimal_len});
  }
  if (rep.tp_prime + rep.fn_prime + rep.oracle_failures != rep.confusion.tp)
    throw std::logic_error("aggregate: results do not cover the true positives exactly");
  rep.classification = f1_accuracy_precision(rep.confusion);
  rep.sar = sar(rep.tp_prime, rep.fn_prime, rep.confusion.fn);
  rep.sar_lower_bound = sar(rep.tp_prime, rep.fn_prime + rep.oracle_failures, rep.confusion.fn);
  rep.reduction = reduction_stats(outcomes);
  return rep;
}

// --- files -------------------------------------------------------------------------

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw ConfigError("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out)
      throw ConfigError("error writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<ReductionResult> load_results(const std::filesystem::path& path, bool repair) {
  std::vector<ReductionResult> results;
  if (!std::filesystem::exists(path))
    return results;
  const std::string text = read_file(path);
  std::string kept;
  std::size_t dropped = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    const bool terminated = nl != std::string::npos;
    std::string line = text.substr(pos, terminated ? nl - pos : std::string::npos);
    pos = terminated ? nl + 1 : text.size();
    if (line.empty())
      continue;
    try {
      if (!terminated)
        throw std::invalid_argument("unterminated record");
      results.push_back(ReductionResult::from_json(nlohmann::json::parse(line)));
      kept += line;
      kept += '\n';
    } catch (const std::exception&) {
      ++dropped;
    }
  }
  if (dropped > 0) {
    log::warn("dropped " + std::to_string(dropped) + " unreadable record(s) from " + path.string());
    if (repair)
      write_file_atomic(path, kept);
  }
  return results;
}

SignalReport load_report(const std::filesystem::path& run_dir) {
  auto path = run_dir / kReportFile;
  try {
    return SignalReport::from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed report " + path.string() + ": " + e.what());
  }
}

// --- end-to-end run ----------------------------------------------------------------

SignalReport run_evaluation(const std::vector<Sample>& samples, const PredictorHandle& handle,
                            const OracleConfig& config, const std::filesystem::path& run_dir,
                            const EvaluationOptions& options) {
  std::error_code ec;
  std::filesystem::create_directories(run_dir, ec);
  if (ec || !std::filesystem::is_directory(run_dir))
    throw ConfigError("cannot create run directory " + run_dir.string());

  const auto started_at = utc_now();
  const auto results_path = run_dir / kResultsFile;
  const auto meta_path = run_dir / kRunMetaFile;

  nlohmann::ordered_json meta;
  meta["corpus_fingerprint"] = options.corpus_fingerprint;
  meta["predictor"] = handle.to_json();
  if (options.resume && std::filesystem::exists(meta_path)) {
    auto previous = nlohmann::json::parse(read_file(meta_path), nullptr, false);
    if (previous.is_discarded() || previous != nlohmann::json::parse(meta.dump()))
      throw ConfigError("cannot resume in " + run_dir.string() +
                        ": it was started with a different corpus or predictor");
  }
  write_file_atomic(meta_path, meta.dump(2) + "\n");

  std::vector<ReductionResult> previous;
  if (options.resume)
    previous = load_results(results_path, true);
  else
    std::filesystem::remove(results_path, ec);

  ConfusionPartition partition;
  {
    auto predictor = make_predictor(handle);
    partition = classify(samples, *predictor);
  }

  std::unordered_map<std::string, ReductionResult> done;
  for (auto& r : previous) {
    if (partition.tp.contains(r.sample_id))
      done.emplace(r.sample_id, std::move(r));
  }
  std::vector<const Sample*> todo;
  for (const auto& s : samples) {
    if (partition.tp.contains(s.id) && !done.contains(s.id))
      todo.push_back(&s);
  }
  log::info(std::to_string(partition.tp.size()) + " true positives, " + std::to_string(done.size()) +
            " already reduced, " + std::to_string(todo.size()) + " to go");

  ResultsWriter writer(results_path);
  std::mutex results_mutex;
  std::vector<ReductionResult> fresh;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;

  auto stopping = [&] { return abort.load() || (options.stop && options.stop->load()); };

  auto worker = [&] {
    try {
      auto predictor = make_predictor(handle);
      while (!stopping()) {
        std::size_t i = next.fetch_add(1);
        if (i >= todo.size())
          break;
        ReductionResult r = reduce_sample(*todo[i], config, *predictor,
                                          std::make_shared<VerdictCache>(config.cache_capacity),
                                          options.reduce);
        if (options.deterministic)
          r.wall_time = 0.0;
        if (r.oracle_failure) {
          log::warn("sample '" + r.sample_id + "': " + *r.oracle_failure);
          // The conversation may be broken; start a fresh one.
          predictor = make_predictor(handle);
        }
        std::size_t written = writer.append(r);
        {
          std::lock_guard lock(results_mutex);
          fresh.push_back(std::move(r));
        }
        if (options.on_record)
          options.on_record(written);
      }
    } catch (...) {
      std::lock_guard lock(results_mutex);
      if (!fatal)
        fatal = std::current_exception();
      abort = true;
    }
  };

  const std::size_t width = std::max<std::size_t>(1, std::min(options.worker_count, todo.size()));
  if (!todo.empty()) {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < width; ++w)
      pool.emplace_back(worker);
  }
  if (fatal)
    std::rethrow_exception(fatal);
  if (options.stop && options.stop->load())
    throw Interrupted("interrupted; rerun with --resume to continue");

  for (auto& r : fresh)
    done.insert_or_assign(r.sample_id, std::move(r));
  std::vector<ReductionResult> ordered;
  std::string compacted;
  for (const auto& s : samples) {
    auto it = done.find(s.id);
    if (it == done.end())
      continue;
    compacted += it->second.to_json().dump() + "\n";
    ordered.push_back(std::move(it->second));
  }
  write_file_atomic(results_path, compacted);

  SignalReport report = aggregate(partition, ordered);
  report.predictor = handle.to_json();
  report.corpus_fingerprint = options.corpus_fingerprint;
  report.vuln_match_mode = config.vuln_matcher->mode();
  report.validator = config.validator->describe();
  report.seed = options.seed;
  if (!options.deterministic) {
    report.started_at = started_at;
    report.finished_at = utc_now();
  }
  write_file_atomic(run_dir / kReportFile, report.to_json().dump(2) + "\n");
  return report;
}

// --- overlap ---------------------------------------------------------------------------

nlohmann::ordered_json OverlapSummary::to_json() const {
  nlohmann::ordered_json j;
  j["run_dirs"] = run_dirs;
  j["tp_overlap_pct"] = fraction_json(tp_overlap_pct);
  j["tp_prime_overlap_pct"] = fraction_json(tp_prime_overlap_pct);
  return j;
}

OverlapSummary overlap_runs(const std::vector<std::filesystem::path>& run_dirs) {
  if (run_dirs.size() < 2)
    throw ConfigError("overlap needs at least two run directories");
  OverlapSummary summary;
  std::vector<std::set<std::string>> tp_sets, tp_prime_sets;
  std::optional<std::string> fingerprint;
  for (const auto& dir : run_dirs) {
    SignalReport report = load_report(dir);
    if (fingerprint && *fingerprint != report.corpus_fingerprint)
      throw ConfigError("run " + dir.string() + " was made over a different corpus");
    fingerprint = report.corpus_fingerprint;
    std::set<std::string> tp, tp_prime;
    for (const auto& r : load_results(dir / kResultsFile)) {
      tp.insert(r.sample_id);
      if (r.classification == SignalClass::tp_prime)
        tp_prime.insert(r.sample_id);
    }
    if (static_cast<std::int64_t>(tp.size()) != report.confusion.tp)
      throw ConfigError("run " + dir.string() + " is incomplete: results do not cover every TP");
    tp_sets.push_back(std::move(tp));
    tp_prime_sets.push_back(std::move(tp_prime));
    summary.run_dirs.push_back(dir.string());
  }
  summary.tp_overlap_pct = overlap(tp_sets);
  summary.tp_prime_overlap_pct = overlap(tp_prime_sets);
  return summary;
}

} // namespace p2im
