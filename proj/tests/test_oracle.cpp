#include <string>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "p2im/errors.hpp"
#include "p2im/oracle.hpp"
#include "support.hpp"

using namespace p2im;
using namespace std::chrono_literals;
namespace t = p2im::testing;

namespace {

const std::string kFigure2 = "void foo(int a, int b) {int buf[10]; a + 3; buf[b] = 1;}";

Sample figure2_sample() {
  return {"fig2", kFigure2, Label::vulnerable, {1}};
}

std::vector<Token> drop(const std::vector<Token>& toks, std::size_t from, std::size_t count) {
  std::vector<Token> out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i < from || i >= from + count)
      out.push_back(toks[i]);
  }
  return out;
}

class CountingPredictor : public Predictor {
public:
  explicit CountingPredictor(Label label) : label_(label) {}
  Prediction predict(std::string_view) override {
    ++calls;
    return {label_, std::nullopt};
  }
  int calls = 0;

private:
  Label label_;
};

class ThrowingPredictor : public Predictor {
public:
  Prediction predict(std::string_view) override { throw OracleInfrastructureError("model server down"); }
};

std::string gcc_validator() { return "gcc -fsyntax-only -x c {file}"; }

bool have_gcc() { return run_shell("gcc --version >/dev/null 2>&1", 10s) == 0; }

} // namespace

TEST(Validator, Balanced) {
  BalancedDelimiterValidator v;
  EXPECT_TRUE(valid_prog("int main() { return 0; }", v));
  EXPECT_FALSE(valid_prog("int main() {", v));
  EXPECT_FALSE(valid_prog("", v));
  EXPECT_FALSE(valid_prog("  \n\t", v));
  EXPECT_FALSE(valid_prog("f(]", v));
  EXPECT_FALSE(valid_prog("s = \"open", v));
}

TEST(Validator, CommandWithCompiler) {
  if (!have_gcc())
    GTEST_SKIP() << "gcc not available";
  auto v = make_validator(gcc_validator(), 10s);
  EXPECT_TRUE(valid_prog("int main() { return 0; }", *v));
  EXPECT_FALSE(valid_prog("int main() {", *v));
  EXPECT_FALSE(valid_prog("", *v));
}

TEST(Validator, CommandNeedsPlaceholder) {
  EXPECT_THROW(make_validator("gcc -fsyntax-only", 1s), ConfigError);
}

TEST(Validator, MissingCommandIsInfrastructureError) {
  auto v = make_validator("/nonexistent/checker {file}", 5s);
  EXPECT_THROW(v->is_valid("int x;"), OracleInfrastructureError);
}

TEST(Validator, TimeoutIsInfrastructureError) {
  auto v = make_validator("sleep 20; true {file}", 300ms);
  EXPECT_THROW(v->is_valid("int x;"), OracleInfrastructureError);
}

TEST(Matcher, PassThroughAcceptsAnything) {
  PassThroughMatcher m;
  auto s = figure2_sample();
  EXPECT_TRUE(vuln_match("anything at all", s, m));
  EXPECT_EQ(m.mode(), "pass_through");
}

TEST(Matcher, ExternalScript) {
  std::string cmd = shell_quote(t::python()) + " " +
                    shell_quote(t::fixture("vuln_matcher.py").string()) +
                    " {original_file} {reduced_file} {bug_lines_csv}";
  auto m = make_matcher(cmd, 10s);
  EXPECT_EQ(m->mode(), "external");
  Sample original{"s", "void f(int i) {\n  int a[4];\n  a[i % 4] = 0;\n  a[i] = 1;\n}\n",
                  Label::vulnerable, {4}};
  // The same out-of-bounds write as the original.
  EXPECT_TRUE(vuln_match("a [ i ] = 1 ;", original, *m));
  // No finding at all.
  EXPECT_TRUE(vuln_match("a [ i % 4 ] = 0 ;", original, *m));
  // A write the original did not have.
  EXPECT_FALSE(vuln_match("a [ i + 9 ] = 1 ;", original, *m));
}

TEST(Matcher, NeedsPlaceholders) { EXPECT_THROW(make_matcher("diff {original_file}", 1s), ConfigError); }

TEST(Matcher, CrashIsInfrastructureError) {
  auto m = make_matcher("/nonexistent/matcher {original_file} {reduced_file}", 5s);
  auto s = figure2_sample();
  EXPECT_THROW(vuln_match("x", s, *m), OracleInfrastructureError);
}

TEST(Oracle, EmptyCandidateIsInvalid) {
  OracleConfig cfg{std::make_shared<BalancedDelimiterValidator>(), std::make_shared<PassThroughMatcher>()};
  PatternPredictor pred({"buf[b] = 1"});
  PredictionOracle oracle(cfg, pred, nullptr);
  auto v = oracle.evaluate(std::vector<Token>{}, figure2_sample());
  EXPECT_FALSE(v.pass);
  EXPECT_EQ(v.reason, VerdictReason::invalid_program);
}

TEST(Oracle, Figure2Candidates) {
  OracleConfig cfg{std::make_shared<BalancedDelimiterValidator>(), std::make_shared<PassThroughMatcher>()};
  PatternPredictor pred({"buf[b] = 1"});
  PredictionOracle oracle(cfg, pred, std::make_shared<VerdictCache>(100));
  auto toks = tokenize(kFigure2).tokens;
  ASSERT_EQ(toks.size(), 28u);

  auto full = oracle.evaluate(toks, figure2_sample());
  EXPECT_TRUE(full.pass);

  // `a + 3 ;` removed: still valid, still predicted vulnerable.
  auto without_stmt = drop(toks, 16, 4);
  EXPECT_EQ(render(without_stmt), "void foo ( int a , int b ) { int buf [ 10 ] ; buf [ b ] = 1 ; }");
  EXPECT_EQ(oracle.evaluate(without_stmt, figure2_sample()), (OracleVerdict{true, VerdictReason::pass, render(without_stmt).size()}));

  // First half only: unbalanced.
  std::vector<Token> half(toks.begin(), toks.begin() + 14);
  EXPECT_EQ(oracle.evaluate(half, figure2_sample()).reason, VerdictReason::invalid_program);

  // Valid but the keyed statement is gone.
  auto no_bug = drop(toks, 20, 7);
  EXPECT_EQ(oracle.evaluate(no_bug, figure2_sample()).reason, VerdictReason::predicted_clean);
}

TEST(Oracle, ChecksRunInOrder) {
  auto s = figure2_sample();
  auto toks = tokenize(kFigure2).tokens;
  CountingPredictor pred(Label::vulnerable);
  std::string reject_all = shell_quote(t::python()) + " -c 'import sys; sys.exit(1)' {original_file} {reduced_file}";
  OracleConfig cfg{std::make_shared<BalancedDelimiterValidator>(), make_matcher(reject_all, 10s)};
  PredictionOracle oracle(cfg, pred, nullptr);

  std::vector<Token> unbalanced(toks.begin(), toks.begin() + 3);
  EXPECT_EQ(oracle.evaluate(unbalanced, s).reason, VerdictReason::invalid_program);
  EXPECT_EQ(oracle.evaluate(toks, s).reason, VerdictReason::vuln_mismatch);
  EXPECT_EQ(pred.calls, 0);
}

TEST(Oracle, PredictorFailurePropagates) {
  OracleConfig cfg{std::make_shared<BalancedDelimiterValidator>(), std::make_shared<PassThroughMatcher>()};
  ThrowingPredictor pred;
  auto cache = std::make_shared<VerdictCache>(10);
  PredictionOracle oracle(cfg, pred, cache);
  auto toks = tokenize(kFigure2).tokens;
  EXPECT_THROW(oracle.evaluate(toks, figure2_sample()), OracleInfrastructureError);
  EXPECT_EQ(cache->size(), 0u);
}

TEST(Oracle, CacheHitsAndKeys) {
  OracleConfig cfg{std::make_shared<BalancedDelimiterValidator>(), std::make_shared<PassThroughMatcher>()};
  CountingPredictor pred(Label::vulnerable);
  auto cache = std::make_shared<VerdictCache>(100);
  PredictionOracle oracle(cfg, pred, cache);
  auto toks = tokenize(kFigure2).tokens;
  auto s = figure2_sample();
  auto first = oracle.evaluate(toks, s);
  auto second = oracle.evaluate(toks, s);
  EXPECT_EQ(first, second);
  EXPECT_EQ(oracle.cache_hits(), 1u);
  EXPECT_EQ(pred.calls, 1);

  Sample other = s;
  other.id = "other";
  oracle.evaluate(toks, other);
  EXPECT_EQ(pred.calls, 2);
  EXPECT_NE(candidate_fingerprint("fig2", "x"), candidate_fingerprint("other", "x"));
  // Field boundaries are part of the key.
  EXPECT_NE(candidate_fingerprint("ab", "c"), candidate_fingerprint("a", "bc"));
}

TEST(Oracle, ZeroCapacityCacheAlwaysMisses) {
  OracleConfig cfg{std::make_shared<BalancedDelimiterValidator>(), std::make_shared<PassThroughMatcher>()};
  CountingPredictor pred(Label::vulnerable);
  PredictionOracle oracle(cfg, pred, std::make_shared<VerdictCache>(0));
  auto toks = tokenize(kFigure2).tokens;
  for (int i = 0; i < 3; ++i)
    oracle.evaluate(toks, figure2_sample());
  EXPECT_EQ(oracle.cache_hits(), 0u);
  EXPECT_EQ(pred.calls, 3);
}

TEST(VerdictCache, EvictsLeastRecentlyUsed) {
  VerdictCache cache(2);
  OracleVerdict yes{true, VerdictReason::pass, 1};
  cache.insert("a", yes);
  cache.insert("b", yes);
  ASSERT_TRUE(cache.lookup("a"));
  cache.insert("c", yes);
  EXPECT_TRUE(cache.lookup("a"));
  EXPECT_FALSE(cache.lookup("b"));
  EXPECT_TRUE(cache.lookup("c"));
  EXPECT_EQ(cache.size(), 2u);
}

TEST(VerdictCache, ConcurrentUse) {
  VerdictCache cache(64);
  std::vector<std::jthread> threads;
  for (int w = 0; w < 4; ++w) {
    threads.emplace_back([&cache, w] {
      for (int i = 0; i < 2000; ++i) {
        std::string key = std::to_string((i * 7 + w) % 100);
        if (!cache.lookup(key))
          cache.insert(key, {i % 2 == 0, VerdictReason::pass, 0});
      }
    });
  }
  threads.clear();
  EXPECT_LE(cache.size(), 64u);
}
