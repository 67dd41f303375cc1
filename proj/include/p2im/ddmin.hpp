#pragma once

// Simplified delta debugging: reduces a sequence to a 1-minimal subsequence
// under a deterministic test oracle. Generic over the element type so the
// engine can be exercised on abstract sequences as well as token streams.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "p2im/errors.hpp"
#include "p2im/token.hpp"

namespace p2im {

template <typename T>
using TestOracle = std::function<bool(std::span<const T>)>;

struct DdTrace {
  std::size_t oracle_calls = 0;
  std::size_t cache_hits = 0; // filled in by callers that memoize
  std::size_t iterations = 0;
  std::vector<std::size_t> granularity_history;
};

template <typename T>
struct DdResult {
  std::vector<T> sequence;
  std::vector<std::size_t> kept; // positions in the input
  DdTrace trace;
};

struct DdOptions {
  /// Abort with BudgetExceeded once this many oracle calls were made.
  std::optional<std::size_t> max_oracle_calls;
};

/// Splits `seq` into `n` contiguous, non-empty segments; sizes differ by at
/// most one and the larger ones come first.
template <typename T>
std::vector<std::vector<T>> partition(std::span<const T> seq, std::size_t n) {
  if (n < 1 || n > seq.size())
    throw ContractViolation("partition: need 1 <= n <= |seq| (n=" + std::to_string(n) +
                            ", |seq|=" + std::to_string(seq.size()) + ")");
  std::vector<std::vector<T>> segments;
  segments.reserve(n);
  const std::size_t base = seq.size() / n;
  const std::size_t extra = seq.size() % n;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t len = base + (i < extra ? 1 : 0);
    segments.emplace_back(seq.begin() + offset, seq.begin() + offset + len);
    offset += len;
  }
  return segments;
}

template <typename T>
std::vector<std::vector<T>> partition(const std::vector<T>& seq, std::size_t n) {
  return partition(std::span<const T>(seq), n);
}

/// `seq` with segment `index` (1-based) of `segments` removed.
template <typename T>
std::vector<T> complement(const std::vector<std::vector<T>>& segments, std::size_t index) {
  if (index < 1 || index > segments.size())
    throw ContractViolation("complement: segment index " + std::to_string(index) +
                            " out of range 1.." + std::to_string(segments.size()));
  std::vector<T> out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i + 1 != index)
      out.insert(out.end(), segments[i].begin(), segments[i].end());
  }
  return out;
}

namespace detail {

template <typename T>
class OracleRunner {
public:
  OracleRunner(const TestOracle<T>& oracle, std::span<const T> input, DdTrace& trace,
               const DdOptions& options)
      : oracle_(oracle), input_(input), trace_(trace), options_(options) {}

  bool operator()(const std::vector<std::size_t>& positions) {
    if (options_.max_oracle_calls && trace_.oracle_calls >= *options_.max_oracle_calls)
      throw BudgetExceeded("oracle call budget of " + std::to_string(*options_.max_oracle_calls) +
                           " exhausted");
    ++trace_.oracle_calls;
    scratch_.clear();
    scratch_.reserve(positions.size());
    for (std::size_t p : positions)
      scratch_.push_back(input_[p]);
    try {
      return oracle_(std::span<const T>(scratch_));
    } catch (const std::exception& e) {
      std::throw_with_nested(CandidateFailure(
          "oracle failed on a candidate of " + std::to_string(positions.size()) + " elements",
          positions));
    }
  }

private:
  const TestOracle<T>& oracle_;
  std::span<const T> input_;
  DdTrace& trace_;
  const DdOptions& options_;
  std::vector<T> scratch_;
};

} // namespace detail

/// Reduces `input` to a 1-minimal subsequence that still passes `oracle`.
///
/// Subsets are tried before complements, each in ascending order, and the
/// first passing candidate wins. A passing subset resets the granularity to
/// 2; a passing complement lowers it by one (never below 2). When nothing
/// passes the granularity doubles, capped at the current size, and the loop
/// ends once every single-element complement has failed. The empty sequence
/// is never tested: the oracle is expected to reject it.
///
/// Throws PreconditionError if `oracle(input)` is false, CandidateFailure
/// (with the oracle's exception nested) if the oracle throws, and
/// BudgetExceeded when `options.max_oracle_calls` runs out.
template <typename T>
DdResult<T> ddmin(const TestOracle<T>& oracle, std::span<const T> input,
                  const DdOptions& options = {}) {
  DdResult<T> result;
  detail::OracleRunner<T> test(oracle, input, result.trace, options);

  std::vector<std::size_t> current(input.size());
  for (std::size_t i = 0; i < current.size(); ++i)
    current[i] = i;

  if (!test(current))
    throw PreconditionError("ddmin: oracle rejects the input sequence");

  std::size_t n = 2;
  while (current.size() > 1) {
    ++result.trace.iterations;
    result.trace.granularity_history.push_back(n);
    auto segments = partition(std::span<const std::size_t>(current), n);

    bool reduced = false;
    for (auto& segment : segments) {
      if (test(segment)) {
        current = std::move(segment);
        n = 2;
        reduced = true;
        break;
      }
    }
    // With two segments the complements are the subsets again.
    if (!reduced && n > 2) {
      for (std::size_t i = 1; i <= segments.size(); ++i) {
        auto candidate = complement(segments, i);
        if (test(candidate)) {
          current = std::move(candidate);
          n = n - 1 > 2 ? n - 1 : 2;
          reduced = true;
          break;
        }
      }
    }
    if (!reduced) {
      if (n >= current.size())
        break;
      n = std::min(2 * n, current.size());
    }
  }

  result.kept = current;
  result.sequence.reserve(current.size());
  for (std::size_t p : current)
    result.sequence.push_back(input[p]);
  return result;
}

template <typename T>
DdResult<T> ddmin(const TestOracle<T>& oracle, const std::vector<T>& input,
                  const DdOptions& options = {}) {
  return ddmin(oracle, std::span<const T>(input), options);
}

inline DdResult<Token> ddmin(const TestOracle<Token>& oracle, const TokenSequence& input,
                             const DdOptions& options = {}) {
  return ddmin(oracle, std::span<const Token>(input.tokens), options);
}

/// True iff removing any single element makes the oracle fail.
template <typename T>
bool verify_one_minimal(const TestOracle<T>& oracle, std::span<const T> seq) {
  if (!oracle(seq))
    throw PreconditionError("verify_one_minimal: oracle rejects the sequence");
  std::vector<T> candidate;
  for (std::size_t skip = 0; skip < seq.size(); ++skip) {
    candidate.clear();
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i != skip)
        candidate.push_back(seq[i]);
    }
    if (oracle(std::span<const T>(candidate)))
      return false;
  }
  return true;
}

template <typename T>
bool verify_one_minimal(const TestOracle<T>& oracle, const std::vector<T>& seq) {
  return verify_one_minimal(oracle, std::span<const T>(seq));
}

inline constexpr std::size_t kBruteForceCap = 16;

/// All minimum-size proper subsequences (the empty one included) that pass
/// the oracle. Empty when no proper subsequence passes. Exponential; refuses
/// inputs longer than `max_len`.
template <typename T>
std::vector<std::vector<T>> brute_force_minima(const TestOracle<T>& oracle, std::span<const T> seq,
                                               std::size_t max_len = kBruteForceCap) {
  if (seq.size() > max_len)
    throw ContractViolation("brute_force_minima: |seq|=" + std::to_string(seq.size()) +
                            " exceeds cap " + std::to_string(max_len));
  const std::uint64_t full = (std::uint64_t{1} << seq.size()) - 1;
  std::vector<T> candidate;
  for (std::size_t size = 0; size < seq.size(); ++size) {
    std::vector<std::vector<T>> found;
    for (std::uint64_t mask = 0; mask < full; ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != size)
        continue;
      candidate.clear();
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (mask & (std::uint64_t{1} << i))
          candidate.push_back(seq[i]);
      }
      if (oracle(std::span<const T>(candidate)))
        found.push_back(candidate);
    }
    if (!found.empty())
      return found;
  }
  return {};
}

template <typename T>
std::vector<std::vector<T>> brute_force_minima(const TestOracle<T>& oracle,
                                               const std::vector<T>& seq,
                                               std::size_t max_len = kBruteForceCap) {
  return brute_force_minima(oracle, std::span<const T>(seq), max_len);
}

} // namespace p2im
