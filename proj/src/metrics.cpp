#include "p2im/metrics.hpp"

#include <algorithm>

#include "p2im/errors.hpp"
#include "p2im/token.hpp"

namespace p2im {

namespace {

void require_non_negative(std::initializer_list<std::int64_t> counts) {
  for (auto c : counts) {
    if (c < 0)
      throw ContractViolation("metric counts must be non-negative");
  }
}

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0)
    return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

} // namespace

std::optional<double> recall(std::int64_t tp, std::int64_t fn) {
  require_non_negative({tp, fn});
  return ratio(tp, tp + fn);
}

std::optional<double> sar(std::int64_t tp_prime, std::int64_t fn_prime, std::int64_t fn) {
  require_non_negative({tp_prime, fn_prime, fn});
  return ratio(tp_prime, tp_prime + fn_prime + fn);
}

ClassificationMetrics f1_accuracy_precision(const ConfusionCounts& c) {
  require_non_negative({c.tp, c.fn, c.fp, c.tn});
  ClassificationMetrics m;
  m.accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn);
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  // 2PR/(P+R) == 2tp/(2tp+fp+fn), defined whenever any positive exists.
  m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return m;
}

ReductionStats reduction_stats(const std::vector<ReductionOutcome>& results) {
  ReductionStats s;
  if (results.empty())
    return s;
  std::size_t reduced = 0;
  double sum = 0.0;
  for (const auto& r : results) {
    if (!r.reduced)
      continue;
    ++reduced;
    sum += reduction_rate(r.original_len, r.minimal_len);
  }
  s.pct_samples_reduced = static_cast<double>(reduced) / static_cast<double>(results.size());
  s.avg_reduction_pct_incl_unreduced = sum / static_cast<double>(results.size());
  if (reduced > 0)
    s.avg_reduction_pct = sum / static_cast<double>(reduced);
  return s;
}

std::optional<double> overlap(const std::vector<std::set<std::string>>& sets) {
  if (sets.size() < 2)
    throw ContractViolation("overlap needs at least two sets");
  std::set<std::string> inter = sets.front();
  std::set<std::string> uni = sets.front();
  for (std::size_t i = 1; i < sets.size(); ++i) {
    std::set<std::string> next;
    std::set_intersection(inter.begin(), inter.end(), sets[i].begin(), sets[i].end(),
                          std::inserter(next, next.end()));
    inter = std::move(next);
    uni.insert(sets[i].begin(), sets[i].end());
  }
  if (uni.empty())
    return std::nullopt;
  return 100.0 * static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

} // namespace p2im
