#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace p2im {

/// A caller broke an operation's precondition (bad index, non-subsequence, negative count).
class ContractViolation : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class TokenizeError : public std::runtime_error {
public:
  TokenizeError(const std::string& what, int line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  int line() const noexcept { return line_; }

private:
  int line_;
};

/// A validator, matcher or predictor could not produce an answer (crash, timeout,
/// protocol violation). Never to be read as a negative verdict.
class OracleInfrastructureError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A batched prediction failed; `index` is the first program without an answer.
class BatchFailure : public OracleInfrastructureError {
public:
  BatchFailure(const std::string& what, std::size_t index)
      : OracleInfrastructureError(what), index_(index) {}

  std::size_t index() const noexcept { return index_; }

private:
  std::size_t index_;
};

/// Replaying a program to a predictor produced a different label.
class NondeterminismError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// ddmin was started on a sequence the oracle rejects.
class PreconditionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class BudgetExceeded : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Thrown (with the original exception nested) when the oracle raised on a
/// candidate. `candidate` holds positions into the sequence ddmin started from.
class CandidateFailure : public std::runtime_error {
public:
  CandidateFailure(const std::string& what, std::vector<std::size_t> candidate)
      : std::runtime_error(what), candidate_(std::move(candidate)) {}

  const std::vector<std::size_t>& candidate() const noexcept { return candidate_; }

private:
  std::vector<std::size_t> candidate_;
};

class ManifestError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Flattens an exception and everything nested inside it into "outer: inner: ...".
std::string describe(const std::exception& e);

} // namespace p2im
