#include "p2im/oracle.hpp"

#include <algorithm>
#include <cctype>

#include "p2im/errors.hpp"
#include "p2im/hash.hpp"
#include "p2im/log.hpp"
#include "p2im/subprocess.hpp"

namespace p2im {

std::string_view to_string(VerdictReason reason) {
  switch (reason) {
  case VerdictReason::pass: return "pass";
  case VerdictReason::invalid_program: return "invalid_program";
  case VerdictReason::vuln_mismatch: return "vuln_mismatch";
  case VerdictReason::predicted_clean: return "predicted_clean";
  }
  return "unknown";
}

namespace {

std::string substitute(std::string text, std::string_view placeholder, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(placeholder, pos)) != std::string::npos) {
    text.replace(pos, placeholder.size(), value);
    pos += value.size();
  }
  return text;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

} // namespace

// --- validity -------------------------------------------------------------------

CommandValidator::CommandValidator(std::string command_template, std::chrono::milliseconds timeout)
    : template_(std::move(command_template)), timeout_(timeout) {
  if (template_.find("{file}") == std::string::npos)
    throw ConfigError("validator command must contain a {file} placeholder: " + template_);
}

bool CommandValidator::is_valid(std::string_view program) {
  TempFile file(program, ".c");
  std::string command = substitute(template_, "{file}", shell_quote(file.path().string()));
  try {
    return run_shell(command, timeout_) == 0;
  } catch (const OracleInfrastructureError&) {
    std::throw_with_nested(OracleInfrastructureError("validator failed"));
  }
}

bool BalancedDelimiterValidator::is_valid(std::string_view program) {
  TokenSequence seq;
  try {
    seq = tokenize(program);
  } catch (const TokenizeError&) {
    return false;
  }
  if (seq.empty())
    return false;
  std::vector<char> open;
  for (const Token& tok : seq.tokens) {
    if (tok.kind != TokenKind::punctuation || tok.text.size() != 1)
      continue;
    char c = tok.text[0];
    if (c == '(' || c == '[' || c == '{') {
      open.push_back(c);
    } else if (c == ')' || c == ']' || c == '}') {
      char want = c == ')' ? '(' : c == ']' ? '[' : '{';
      if (open.empty() || open.back() != want)
        return false;
      open.pop_back();
    }
  }
  return open.empty();
}

std::shared_ptr<ProgramValidator> make_validator(const std::string& spec,
                                                 std::chrono::milliseconds timeout) {
  if (spec == kBalancedValidator)
    return std::make_shared<BalancedDelimiterValidator>();
  if (spec.starts_with("builtin:"))
    throw ConfigError("unknown builtin validator '" + spec + "'");
  return std::make_shared<CommandValidator>(spec, timeout);
}

bool valid_prog(std::string_view program, ProgramValidator& validator) {
  if (is_blank(program))
    return false;
  return validator.is_valid(program);
}

// --- vulnerability match -----------------------------------------------------------

bool PassThroughMatcher::matches(std::string_view, const Sample&) {
  if (!warned_.exchange(true))
    log::warn("vulnerability matching is pass_through: reduced programs are not checked for "
              "new bugs, so SAR is an upper bound");
  return true;
}

CommandMatcher::CommandMatcher(std::string command_template, std::chrono::milliseconds timeout)
    : template_(std::move(command_template)), timeout_(timeout) {
  for (std::string_view ph : {"{original_file}", "{reduced_file}"}) {
    if (template_.find(ph) == std::string::npos)
      throw ConfigError("matcher command must contain " + std::string(ph) + ": " + template_);
  }
}

bool CommandMatcher::matches(std::string_view reduced, const Sample& original) {
  TempFile original_file(original.code, ".c");
  TempFile reduced_file(reduced, ".c");
  std::string csv;
  for (int line : original.bug_lines) {
    if (!csv.empty())
      csv += ',';
    csv += std::to_string(line);
  }
  std::string command = substitute(template_, "{original_file}",
                                   shell_quote(original_file.path().string()));
  command = substitute(command, "{reduced_file}", shell_quote(reduced_file.path().string()));
  command = substitute(command, "{bug_lines_csv}", shell_quote(csv));
  try {
    return run_shell(command, timeout_) == 0;
  } catch (const OracleInfrastructureError&) {
    std::throw_with_nested(OracleInfrastructureError("vulnerability matcher failed"));
  }
}

std::shared_ptr<VulnMatcher> make_matcher(const std::string& spec, std::chrono::milliseconds timeout) {
  if (spec.empty() || spec == kPassThroughMatcher)
    return std::make_shared<PassThroughMatcher>();
  return std::make_shared<CommandMatcher>(spec, timeout);
}

bool vuln_match(std::string_view program, const Sample& original, VulnMatcher& matcher) {
  return matcher.matches(program, original);
}

// --- memoization -------------------------------------------------------------------

std::string candidate_fingerprint(std::string_view sample_id, std::string_view rendered) {
  FieldHasher h;
  h.add(sample_id).add(rendered);
  return h.hex_digest();
}

std::optional<OracleVerdict> VerdictCache::lookup(const std::string& key) {
  std::lock_guard lock(mutex_);
  auto it = index_.find(key);
  if (it == index_.end())
    return std::nullopt;
  order_.splice(order_.begin(), order_, it->second);
  return it->second->second;
}

void VerdictCache::insert(const std::string& key, const OracleVerdict& verdict) {
  if (capacity_ == 0)
    return;
  std::lock_guard lock(mutex_);
  if (auto it = index_.find(key); it != index_.end()) {
    it->second->second = verdict;
    order_.splice(order_.begin(), order_, it->second);
    return;
  }
  order_.emplace_front(key, verdict);
  index_.emplace(key, order_.begin());
  while (order_.size() > capacity_) {
    index_.erase(order_.back().first);
    order_.pop_back();
  }
}

std::size_t VerdictCache::size() const {
  std::lock_guard lock(mutex_);
  return order_.size();
}

// --- composed oracle -----------------------------------------------------------------

PredictionOracle::PredictionOracle(const OracleConfig& config, Predictor& predictor,
                                   std::shared_ptr<VerdictCache> cache)
    : config_(config), predictor_(predictor), cache_(std::move(cache)) {
  if (!config_.validator || !config_.vuln_matcher)
    throw ContractViolation("oracle config needs a validator and a vulnerability matcher");
}

OracleVerdict PredictionOracle::evaluate(std::span<const Token> candidate, const Sample& original) {
  ++calls_;
  std::string program = render(candidate);
  if (candidate.empty())
    return {false, VerdictReason::invalid_program, program.size()};
  std::string key;
  if (cache_ && cache_->capacity() > 0) {
    key = candidate_fingerprint(original.id, program);
    if (auto hit = cache_->lookup(key)) {
      ++cache_hits_;
      return *hit;
    }
  }
  OracleVerdict verdict = evaluate_uncached(program, original);
  if (!key.empty())
    cache_->insert(key, verdict);
  return verdict;
}

OracleVerdict PredictionOracle::evaluate_uncached(const std::string& program, const Sample& original) {
  const std::size_t len = program.size();
  if (!valid_prog(program, *config_.validator))
    return {false, VerdictReason::invalid_program, len};
  if (!vuln_match(program, original, *config_.vuln_matcher))
    return {false, VerdictReason::vuln_mismatch, len};
  if (predictor_.predict(program).label != Label::vulnerable)
    return {false, VerdictReason::predicted_clean, len};
  return {true, VerdictReason::pass, len};
}

} // namespace p2im
