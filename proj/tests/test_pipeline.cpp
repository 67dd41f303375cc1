#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "p2im/ddmin.hpp"
#include "p2im/errors.hpp"
#include "p2im/hash.hpp"
#include "p2im/pipeline.hpp"
#include "support.hpp"

using namespace p2im;
using namespace std::chrono_literals;
namespace t = p2im::testing;

namespace {

OracleConfig balanced_config() {
  return {std::make_shared<BalancedDelimiterValidator>(), std::make_shared<PassThroughMatcher>(), 1000};
}

PredictorHandle builtin(const std::string& name, PredictorKind kind, std::string pattern) {
  PredictorHandle h;
  h.name = name;
  h.kind = kind;
  h.patterns = {std::move(pattern)};
  h.replay_rate = 0;
  return h;
}

// Stand-in for a permissive compiler: anything that lexes is a program.
class LexesValidator : public ProgramValidator {
public:
  bool is_valid(std::string_view program) override {
    try {
      return !tokenize(program).empty();
    } catch (const TokenizeError&) {
      return false;
    }
  }
  std::string describe() const override { return "lexes"; }
};

OracleConfig lexing_config() {
  return {std::make_shared<LexesValidator>(), std::make_shared<PassThroughMatcher>(), 1000};
}

class AlwaysClean : public Predictor {
public:
  Prediction predict(std::string_view) override { return {Label::clean, std::nullopt}; }
};

// Figure 3 shape: the model keys on the loop header, never on line 11.
const std::string kFigure3 =
    "void bad()\n"
    "{\n"
    "    int i;\n"
    "    char source[100];\n"
    "    char data[50];\n"
    "    int n;\n"
    "    n = 100;\n"
    "    i = 0;\n"
    "    for (i = 0; i < n; i++)\n"
    "    {\n"
    "        data[i] = source[i];\n"
    "    }\n"
    "}\n";

// Figure 4 shape: the bug line keeps its arguments after `memcpy` is dropped.
const std::string kFigure4 =
    "void bad(char* src)\n"
    "{\n"
    "    char dest[10];\n"
    "    int len = 100;\n"
    "    memcpy(dest, src, len);\n"
    "}\n";

std::vector<Sample> corpus(int vulnerable, int clean, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.vulnerable_count = vulnerable;
  spec.clean_count = clean;
  spec.seed = seed;
  return generate_synthetic(spec);
}

EvaluationOptions deterministic_options(const std::vector<Sample>& samples) {
  EvaluationOptions o;
  o.deterministic = true;
  o.corpus_fingerprint = sha256_hex(serialize_manifest(samples));
  return o;
}

} // namespace

TEST(Classify, PatternPredictorOnOwnCorpus) {
  auto samples = corpus(10, 10, 4);
  PatternPredictor p({"buf[idx] = 1"});
  auto part = classify(samples, p);
  EXPECT_EQ(part.tp.size(), 10u);
  EXPECT_EQ(part.tn.size(), 10u);
  EXPECT_TRUE(part.fn.empty());
  EXPECT_TRUE(part.fp.empty());
}

TEST(Classify, AlwaysCleanAndEmpty) {
  auto samples = corpus(3, 3, 4);
  AlwaysClean p;
  auto part = classify(samples, p);
  EXPECT_TRUE(part.tp.empty());
  EXPECT_TRUE(part.fp.empty());
  EXPECT_EQ(part.fn.size(), 3u);
  auto none = classify({}, p);
  EXPECT_TRUE(none.tp.empty() && none.fn.empty() && none.fp.empty() && none.tn.empty());
}

TEST(Classify, PredictorFailureNamesSample) {
  auto samples = corpus(4, 4, 4);
  ChildProcessPredictor p(t::line_predictor_command({"--pattern", "X", "--crash-at", "3"}), 10s);
  try {
    classify(samples, p);
    FAIL() << "expected OracleInfrastructureError";
  } catch (const OracleInfrastructureError& e) {
    EXPECT_NE(std::string(e.what()).find(samples[2].id), std::string::npos) << e.what();
  }
}

TEST(ReduceSample, Figure3BugLineDropped) {
  Sample s{"fig3", kFigure3, Label::vulnerable, {11}};
  PatternPredictor p({"for ( i = 0 ; i < n ; i ++ )"});
  auto r = reduce_sample(s, lexing_config(), p, nullptr);
  ASSERT_FALSE(r.oracle_failure) << *r.oracle_failure;
  EXPECT_FALSE(r.buggy_line_present);
  EXPECT_EQ(r.classification, SignalClass::fn_prime);
  EXPECT_FALSE(surviving_lines(r.minimal).contains(11));
  EXPECT_EQ(render(r.minimal), "for ( i = 0 ; i < n ; i ++ )");
}

TEST(ReduceSample, Figure4BugLinePartlySurvives) {
  Sample s{"fig4", kFigure4, Label::vulnerable, {5}};
  PatternPredictor p({"( dest , src , len )"});
  auto r = reduce_sample(s, lexing_config(), p, nullptr);
  ASSERT_FALSE(r.oracle_failure);
  EXPECT_TRUE(r.buggy_line_present);
  EXPECT_EQ(r.classification, SignalClass::tp_prime);
  EXPECT_EQ(render(r.minimal), "( dest , src , len )");
}

TEST(ReduceSample, BalancedValidatorPinsDelimiterPairs) {
  // Removing one bracket of a pair unbalances the program, so a 1-minimal
  // keeps `[ ]` from line 11 and the line counts as present.
  Sample s{"fig3", kFigure3, Label::vulnerable, {11}};
  PatternPredictor p({"for ( i = 0 ; i < n ; i ++ )"});
  auto r = reduce_sample(s, balanced_config(), p, nullptr);
  ASSERT_FALSE(r.oracle_failure);
  EXPECT_TRUE(r.buggy_line_present);
  EXPECT_EQ(r.classification, SignalClass::tp_prime);
  std::vector<Token> line11;
  for (const auto& t : r.minimal)
    if (t.line == 11)
      line11.push_back(t);
  EXPECT_EQ(render(line11), "[ ]");
}

TEST(ReduceSample, SyntheticPatternKeepsBugLine) {
  auto samples = corpus(3, 0, 12);
  PatternPredictor p({"buf[idx] = 1"});
  for (const auto& s : samples) {
    auto r = reduce_sample(s, balanced_config(), p, std::make_shared<VerdictCache>(1000));
    ASSERT_FALSE(r.oracle_failure);
    EXPECT_TRUE(r.reduced);
    EXPECT_EQ(r.classification, SignalClass::tp_prime);
    EXPECT_NE(render(r.minimal).find("buf [ idx ] = 1"), std::string::npos);
    EXPECT_GT(r.oracle_calls, 0u);
  }
}

TEST(ReduceSample, TrimmedSampleMatchesBruteForce) {
  // The bug line plus a few neighbours, small enough to enumerate.
  Sample s{"trim", "v0 = 3;\nbuf[idx] = 1;\nint DECOY = idx;\n", Label::vulnerable, {2}};
  auto seq = tokenize(s.code).tokens;
  ASSERT_LE(seq.size(), 16u);
  PatternPredictor p({"buf[idx] = 1"});
  auto cfg = balanced_config();
  auto r = reduce_sample(s, cfg, p, nullptr);
  ASSERT_FALSE(r.oracle_failure);
  PredictionOracle oracle(cfg, p, nullptr);
  TestOracle<Token> test = [&](std::span<const Token> c) { return oracle.evaluate(c, s).pass; };
  auto minima = brute_force_minima(test, seq);
  ASSERT_EQ(minima.size(), 1u);
  EXPECT_EQ(r.minimal, minima[0]);
  EXPECT_EQ(r.classification, SignalClass::tp_prime);
}

TEST(ReduceSample, SpuriousDropsBugLine) {
  auto samples = corpus(3, 0, 12);
  PatternPredictor p({"DECOY"});
  for (const auto& s : samples) {
    auto r = reduce_sample(s, balanced_config(), p, nullptr);
    ASSERT_FALSE(r.oracle_failure);
    EXPECT_EQ(render(r.minimal), "DECOY");
    EXPECT_EQ(r.classification, SignalClass::fn_prime);
  }
}

TEST(ReduceSample, OriginalFailingOracleIsFailure) {
  Sample s{"x", "int main() { return 0; }\n", Label::vulnerable, {1}};
  PatternPredictor p({"nothing here"});
  auto r = reduce_sample(s, balanced_config(), p, nullptr);
  ASSERT_TRUE(r.oracle_failure);
  EXPECT_FALSE(r.classification);
  EXPECT_NE(r.oracle_failure->find("predicted_clean"), std::string::npos);
}

TEST(ReduceSample, TokenizeFailureIsFailure) {
  Sample s{"x", "int a = \"open;\n", Label::vulnerable, {1}};
  PatternPredictor p({"a"});
  auto r = reduce_sample(s, balanced_config(), p, nullptr);
  ASSERT_TRUE(r.oracle_failure);
  EXPECT_FALSE(r.classification);
}

TEST(ReduceSample, CrashMidReductionIsFailure) {
  auto s = corpus(1, 0, 5)[0];
  ChildProcessPredictor p(t::line_predictor_command({"--pattern", "buf[idx] = 1", "--crash-at", "7"}), 10s);
  auto r = reduce_sample(s, balanced_config(), p, nullptr);
  ASSERT_TRUE(r.oracle_failure);
  EXPECT_FALSE(r.classification);
  EXPECT_FALSE(r.buggy_line_present);
}

TEST(ReduceSample, ResultJsonKeys) {
  ReductionResult r;
  r.sample_id = "s";
  r.oracle_failure = "boom";
  auto j = r.to_json();
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it)
    keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"sample_id", "original_len", "minimal_len", "reduced",
                                            "buggy_line_present", "classification", "oracle_calls",
                                            "cache_hits", "wall_time", "oracle_failure"}));
  EXPECT_TRUE(j["classification"].is_null());
  auto back = ReductionResult::from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.oracle_failure, r.oracle_failure);
}

TEST(Aggregate, CountsAndSar) {
  ConfusionPartition part;
  part.tp = {"a", "b", "c", "d"};
  part.fn = {"e"};
  part.tn = {"f"};
  std::vector<ReductionResult> results(4);
  results[0].sample_id = "a";
  results[0].classification = SignalClass::tp_prime;
  results[0].reduced = true;
  results[0].original_len = 10;
  results[0].minimal_len = 5;
  results[1].sample_id = "b";
  results[1].classification = SignalClass::fn_prime;
  results[1].reduced = true;
  results[1].original_len = 10;
  results[1].minimal_len = 1;
  results[2].sample_id = "c";
  results[2].classification = SignalClass::tp_prime;
  results[2].original_len = results[2].minimal_len = 3;
  results[3].sample_id = "d";
  results[3].oracle_failure = "crash";
  auto rep = aggregate(part, results);
  EXPECT_EQ(rep.tp_prime, 2);
  EXPECT_EQ(rep.fn_prime, 1);
  EXPECT_EQ(rep.oracle_failures, 1);
  EXPECT_DOUBLE_EQ(*rep.classification.recall, 0.8);
  EXPECT_DOUBLE_EQ(*rep.sar, 2.0 / 4.0);
  EXPECT_DOUBLE_EQ(*rep.sar_lower_bound, 2.0 / 5.0);
  EXPECT_DOUBLE_EQ(*rep.reduction.pct_samples_reduced, 2.0 / 3.0);

  results.pop_back();
  EXPECT_THROW(aggregate(part, results), std::logic_error);
}

TEST(RunEvaluation, ZeroTruePositives) {
  t::ScratchDir dir;
  auto samples = corpus(0, 3, 2);
  auto h = builtin("pattern", PredictorKind::builtin_pattern, "buf[idx] = 1");
  auto rep = run_evaluation(samples, h, balanced_config(), dir.path(), deterministic_options(samples));
  EXPECT_EQ(rep.confusion.tp, 0);
  EXPECT_FALSE(rep.sar);
  EXPECT_FALSE(rep.reduction.pct_samples_reduced);
  auto j = nlohmann::json::parse(t::slurp(dir / kReportFile));
  EXPECT_TRUE(j["sar"].is_null());
  EXPECT_TRUE(j["recall"].is_null());
  EXPECT_EQ(t::slurp(dir / kResultsFile), "");
}

TEST(RunEvaluation, AllMissedGivesZeroSar) {
  t::ScratchDir dir;
  auto samples = corpus(3, 3, 2);
  auto h = builtin("never", PredictorKind::builtin_pattern, "no_such_token");
  auto rep = run_evaluation(samples, h, balanced_config(), dir.path(), deterministic_options(samples));
  EXPECT_EQ(rep.confusion.tp, 0);
  EXPECT_EQ(rep.confusion.fn, 3);
  EXPECT_EQ(rep.sar, 0.0);
  EXPECT_EQ(rep.sar, rep.classification.recall);
}

TEST(RunEvaluation, TwoPredictorsAndOverlap) {
  t::ScratchDir dir;
  auto samples = corpus(8, 8, 6);
  auto opts = deterministic_options(samples);
  auto pattern = run_evaluation(samples, builtin("pattern", PredictorKind::builtin_pattern, "buf[idx] = 1"),
                                balanced_config(), dir / "pattern", opts);
  auto spurious = run_evaluation(samples, builtin("spurious", PredictorKind::builtin_spurious, "DECOY"),
                                 balanced_config(), dir / "spurious", opts);
  EXPECT_EQ(pattern.sar, pattern.classification.recall);
  EXPECT_DOUBLE_EQ(*spurious.sar, 0.0);
  auto summary = overlap_runs({dir / "pattern", dir / "spurious"});
  EXPECT_DOUBLE_EQ(*summary.tp_overlap_pct, 100.0);
  EXPECT_DOUBLE_EQ(*summary.tp_prime_overlap_pct, 0.0);
  auto self = overlap_runs({dir / "pattern", dir / "pattern"});
  EXPECT_DOUBLE_EQ(*self.tp_overlap_pct, 100.0);
  EXPECT_DOUBLE_EQ(*self.tp_prime_overlap_pct, 100.0);
}

TEST(RunEvaluation, OverlapRejectsDifferentCorpora) {
  t::ScratchDir dir;
  auto a = corpus(3, 3, 1);
  auto b = corpus(3, 3, 2);
  auto h = builtin("pattern", PredictorKind::builtin_pattern, "buf[idx] = 1");
  run_evaluation(a, h, balanced_config(), dir / "a", deterministic_options(a));
  run_evaluation(b, h, balanced_config(), dir / "b", deterministic_options(b));
  EXPECT_THROW(overlap_runs({dir / "a", dir / "b"}), ConfigError);
}

TEST(RunEvaluation, WorkersAgreeWithSingleThread) {
  t::ScratchDir dir;
  auto samples = corpus(12, 4, 8);
  auto h = builtin("pattern", PredictorKind::builtin_pattern, "buf[idx] = 1");
  auto opts = deterministic_options(samples);
  run_evaluation(samples, h, balanced_config(), dir / "one", opts);
  opts.worker_count = 4;
  run_evaluation(samples, h, balanced_config(), dir / "four", opts);
  EXPECT_EQ(t::slurp(dir / "one" / kReportFile), t::slurp(dir / "four" / kReportFile));
  EXPECT_EQ(t::slurp(dir / "one" / kResultsFile), t::slurp(dir / "four" / kResultsFile));
}

TEST(RunEvaluation, ResumeSkipsRecordedAndDropsTornLine) {
  t::ScratchDir dir;
  auto samples = corpus(6, 2, 3);
  auto h = builtin("pattern", PredictorKind::builtin_pattern, "buf[idx] = 1");
  auto opts = deterministic_options(samples);
  run_evaluation(samples, h, balanced_config(), dir / "full", opts);
  const auto full_report = t::slurp(dir / "full" / kReportFile);
  const auto full_results = t::slurp(dir / "full" / kResultsFile);

  // Keep the first three records, then a torn fourth.
  std::filesystem::create_directories(dir / "part");
  std::string partial;
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    auto nl = full_results.find('\n', pos);
    partial += full_results.substr(pos, nl + 1 - pos);
    pos = nl + 1;
  }
  partial += full_results.substr(pos, 25);
  t::spit(dir / "part" / kResultsFile, partial);

  auto resumed_opts = opts;
  resumed_opts.resume = true;
  std::size_t fresh = 0;
  resumed_opts.on_record = [&](std::size_t) { ++fresh; };
  run_evaluation(samples, h, balanced_config(), dir / "part", resumed_opts);
  EXPECT_EQ(fresh, 3u);
  EXPECT_EQ(t::slurp(dir / "part" / kReportFile), full_report);
  EXPECT_EQ(t::slurp(dir / "part" / kResultsFile), full_results);
}

TEST(RunEvaluation, ResumeRefusesOtherCorpus) {
  t::ScratchDir dir;
  auto samples = corpus(2, 2, 3);
  auto h = builtin("pattern", PredictorKind::builtin_pattern, "buf[idx] = 1");
  auto opts = deterministic_options(samples);
  run_evaluation(samples, h, balanced_config(), dir.path(), opts);
  opts.resume = true;
  opts.corpus_fingerprint = "different";
  EXPECT_THROW(run_evaluation(samples, h, balanced_config(), dir.path(), opts), ConfigError);
}

TEST(RunEvaluation, LoadResultsRepair) {
  t::ScratchDir dir;
  ReductionResult r;
  r.sample_id = "a";
  r.classification = SignalClass::tp_prime;
  t::spit(dir / "r.jsonl", r.to_json().dump() + "\nnot json\n" + r.to_json().dump());
  EXPECT_EQ(load_results(dir / "r.jsonl").size(), 1u);
  load_results(dir / "r.jsonl", true);
  EXPECT_EQ(t::slurp(dir / "r.jsonl"), r.to_json().dump() + "\n");
}

TEST(RunEvaluation, StopFlagInterrupts) {
  t::ScratchDir dir;
  auto samples = corpus(4, 0, 3);
  auto h = builtin("pattern", PredictorKind::builtin_pattern, "buf[idx] = 1");
  auto opts = deterministic_options(samples);
  std::atomic<bool> stop{false};
  opts.stop = &stop;
  opts.on_record = [&](std::size_t n) {
    if (n == 1)
      stop = true;
  };
  EXPECT_THROW(run_evaluation(samples, h, balanced_config(), dir.path(), opts), Interrupted);
  EXPECT_EQ(load_results(dir / kResultsFile).size(), 1u);
}

TEST(RunEvaluation, NondeterministicPredictorAborts) {
  t::ScratchDir dir;
  auto samples = corpus(3, 0, 3);
  PredictorHandle h;
  h.name = "flipper";
  h.kind = PredictorKind::child_process;
  h.command = t::line_predictor_command({"--pattern", "buf[idx] = 1", "--flip-every", "5"});
  h.replay_rate = 0.2;
  EXPECT_THROW(run_evaluation(samples, h, balanced_config(), dir.path(), deterministic_options(samples)),
               NondeterminismError);
}
