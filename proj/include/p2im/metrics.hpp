#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace p2im {

/// Fractions in [0,1]; std::nullopt marks an undefined (zero-denominator) value.
using Fraction = std::optional<double>;

std::optional<double> recall(std::int64_t tp, std::int64_t fn);

/// Signal-aware recall: tp' / (tp' + fn' + fn).
std::optional<double> sar(std::int64_t tp_prime, std::int64_t fn_prime, std::int64_t fn);

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fn = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
};

struct ClassificationMetrics {
  Fraction accuracy;
  Fraction precision;
  Fraction recall;
  Fraction f1;
};

ClassificationMetrics f1_accuracy_precision(const ConfusionCounts& counts);

struct ReductionOutcome {
  bool reduced = false;
  std::size_t original_len = 0;
  std::size_t minimal_len = 0;
};

struct ReductionStats {
  Fraction pct_samples_reduced;
  Fraction avg_reduction_pct;                 // over reduced samples only
  Fraction avg_reduction_pct_incl_unreduced;  // unreduced samples count as 0
};

ReductionStats reduction_stats(const std::vector<ReductionOutcome>& results);

/// Generalized Jaccard overlap 100 * |intersection| / |union| over k >= 2
/// sets; undefined when the union is empty.
std::optional<double> overlap(const std::vector<std::set<std::string>>& sets);

} // namespace p2im
