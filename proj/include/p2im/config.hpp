#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "p2im/oracle.hpp"
#include "p2im/predictor.hpp"
#include "p2im/token.hpp"

namespace p2im {

struct Timeouts {
  std::chrono::milliseconds validator{10'000};
  std::chrono::milliseconds matcher{30'000};
  std::chrono::milliseconds predictor{30'000};
};

/// A run configuration file. Relative paths are resolved against the
/// directory holding the file.
struct RunConfig {
  std::filesystem::path manifest_path;
  std::vector<PredictorHandle> predictors;
  std::string validator = std::string(kBalancedValidator);
  std::string vuln_matcher = std::string(kPassThroughMatcher);
  std::size_t worker_count = 1;
  std::size_t cache_capacity = 100'000;
  Timeouts timeouts;
  double budget_factor = 10.0;
  std::uint64_t seed = 0;
  std::filesystem::path run_dir = "runs";
  TokenizerProfile tokenizer;

  /// Throws ConfigError when an invariant does not hold.
  void validate() const;

  OracleConfig oracle_config() const;
  const PredictorHandle& predictor(const std::string& name) const;
};

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

} // namespace p2im
