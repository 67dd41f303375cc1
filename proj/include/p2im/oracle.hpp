#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "p2im/dataset.hpp"
#include "p2im/predictor.hpp"
#include "p2im/token.hpp"

namespace p2im {

enum class VerdictReason { pass, invalid_program, vuln_mismatch, predicted_clean };

std::string_view to_string(VerdictReason reason);

struct OracleVerdict {
  bool pass = false;
  VerdictReason reason = VerdictReason::invalid_program;
  std::size_t rendered_len = 0;

  friend bool operator==(const OracleVerdict&, const OracleVerdict&) = default;
};

// --- validity -----------------------------------------------------------------

class ProgramValidator {
public:
  virtual ~ProgramValidator() = default;
  virtual bool is_valid(std::string_view program) = 0;
  virtual std::string describe() const = 0;
};

/// Runs a shell command template with `{file}` replaced by a temporary `.c`
/// file holding the program; exit status 0 means valid.
class CommandValidator : public ProgramValidator {
public:
  CommandValidator(std::string command_template, std::chrono::milliseconds timeout);
  bool is_valid(std::string_view program) override;
  std::string describe() const override { return template_; }

private:
  std::string template_;
  std::chrono::milliseconds timeout_;
};

/// In-process stand-in for a compiler: the program must lex, be non-empty and
/// have balanced (), [] and {}.
class BalancedDelimiterValidator : public ProgramValidator {
public:
  bool is_valid(std::string_view program) override;
  std::string describe() const override { return "builtin:balanced"; }
};

inline constexpr std::string_view kBalancedValidator = "builtin:balanced";

/// "builtin:balanced" or a command template containing `{file}`.
std::shared_ptr<ProgramValidator> make_validator(const std::string& spec,
                                                 std::chrono::milliseconds timeout);

/// False for blank programs without consulting the validator.
bool valid_prog(std::string_view program, ProgramValidator& validator);

// --- vulnerability match ---------------------------------------------------------

class VulnMatcher {
public:
  virtual ~VulnMatcher() = default;
  virtual bool matches(std::string_view reduced, const Sample& original) = 0;
  /// "pass_through" or "external".
  virtual std::string mode() const = 0;
};

/// Accepts everything; warns once per instance that the check is disabled.
class PassThroughMatcher : public VulnMatcher {
public:
  bool matches(std::string_view reduced, const Sample& original) override;
  std::string mode() const override { return "pass_through"; }

private:
  std::atomic<bool> warned_{false};
};

/// Template placeholders: {original_file} {reduced_file} {bug_lines_csv}.
/// Exit 0 means the reduced program has the same (or no) bug as the original.
class CommandMatcher : public VulnMatcher {
public:
  CommandMatcher(std::string command_template, std::chrono::milliseconds timeout);
  bool matches(std::string_view reduced, const Sample& original) override;
  std::string mode() const override { return "external"; }

private:
  std::string template_;
  std::chrono::milliseconds timeout_;
};

inline constexpr std::string_view kPassThroughMatcher = "pass_through";

std::shared_ptr<VulnMatcher> make_matcher(const std::string& spec, std::chrono::milliseconds timeout);

bool vuln_match(std::string_view program, const Sample& original, VulnMatcher& matcher);

// --- memoization -----------------------------------------------------------------

/// Hex SHA-256 over the sample id and the rendered candidate.
std::string candidate_fingerprint(std::string_view sample_id, std::string_view rendered);

/// Thread-safe LRU map from candidate fingerprint to verdict. Capacity 0
/// stores nothing.
class VerdictCache {
public:
  explicit VerdictCache(std::size_t capacity) : capacity_(capacity) {}

  std::optional<OracleVerdict> lookup(const std::string& key);
  void insert(const std::string& key, const OracleVerdict& verdict);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const;

private:
  using Entry = std::pair<std::string, OracleVerdict>;

  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::list<Entry> order_; // most recently used first
  std::unordered_map<std::string, std::list<Entry>::iterator> index_;
};

// --- the composed oracle ---------------------------------------------------------

struct OracleConfig {
  std::shared_ptr<ProgramValidator> validator;
  std::shared_ptr<VulnMatcher> vuln_matcher;
  std::size_t cache_capacity = 100'000;
};

/// Passes a candidate iff it renders to a valid program, matches the
/// original's vulnerability, and the predictor calls it vulnerable; checks
/// run in that order and stop at the first failure. Infrastructure failures
/// propagate as exceptions rather than verdicts.
class PredictionOracle {
public:
  PredictionOracle(const OracleConfig& config, Predictor& predictor,
                   std::shared_ptr<VerdictCache> cache);

  OracleVerdict evaluate(std::span<const Token> candidate, const Sample& original);

  std::size_t calls() const { return calls_; }
  std::size_t cache_hits() const { return cache_hits_; }

private:
  OracleVerdict evaluate_uncached(const std::string& program, const Sample& original);

  const OracleConfig& config_;
  Predictor& predictor_;
  std::shared_ptr<VerdictCache> cache_;
  std::size_t calls_ = 0;
  std::size_t cache_hits_ = 0;
};

} // namespace p2im
