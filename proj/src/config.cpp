#include "p2im/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "p2im/errors.hpp"

namespace p2im {

namespace {

std::chrono::milliseconds seconds_field(const nlohmann::json& j, const char* key,
                                        std::chrono::milliseconds fallback) {
  if (!j.contains(key))
    return fallback;
  double s = j.at(key).get<double>();
  if (!(s > 0))
    throw ConfigError(std::string("timeouts.") + key + " must be positive");
  return std::chrono::milliseconds(static_cast<long long>(std::llround(s * 1000)));
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

} // namespace

void RunConfig::validate() const {
  if (worker_count < 1)
    throw ConfigError("worker_count must be at least 1");
  if (predictors.empty())
    throw ConfigError("at least one predictor must be configured");
  std::set<std::string> names;
  for (const auto& p : predictors) {
    p2im::validate(p);
    if (p.name.empty() || p.name.find('/') != std::string::npos || p.name == "." || p.name == "..")
      throw ConfigError("predictor name '" + p.name + "' is not usable as a directory name");
    if (!names.insert(p.name).second)
      throw ConfigError("duplicate predictor name '" + p.name + "'");
  }
  if (!(budget_factor > 0))
    throw ConfigError("budget_factor must be positive");
}

OracleConfig RunConfig::oracle_config() const {
  OracleConfig c;
  c.validator = make_validator(validator, timeouts.validator);
  c.vuln_matcher = make_matcher(vuln_matcher, timeouts.matcher);
  c.cache_capacity = cache_capacity;
  return c;
}

const PredictorHandle& RunConfig::predictor(const std::string& name) const {
  for (const auto& p : predictors) {
    if (p.name == name)
      return p;
  }
  throw ConfigError("no predictor named '" + name + "'");
}

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  try {
    if (!j.is_object())
      throw ConfigError("configuration must be a JSON object");
    if (j.contains("manifest_path"))
      c.manifest_path = resolve(base_dir, j.at("manifest_path").get<std::string>());
    if (j.contains("run_dir"))
      c.run_dir = resolve(base_dir, j.at("run_dir").get<std::string>());
    else
      c.run_dir = resolve(base_dir, "runs");
    c.validator = j.value("validator", c.validator);
    c.vuln_matcher = j.value("vuln_matcher", c.vuln_matcher);
    if (j.contains("worker_count")) {
      auto w = j.at("worker_count").get<std::int64_t>();
      if (w < 1)
        throw ConfigError("worker_count must be at least 1");
      c.worker_count = static_cast<std::size_t>(w);
    }
    if (j.contains("cache_capacity")) {
      auto cap = j.at("cache_capacity").get<std::int64_t>();
      if (cap < 0)
        throw ConfigError("cache_capacity must be non-negative");
      c.cache_capacity = static_cast<std::size_t>(cap);
    }
    c.budget_factor = j.value("budget_factor", c.budget_factor);
    c.seed = j.value("seed", c.seed);
    if (j.contains("timeouts")) {
      const auto& t = j.at("timeouts");
      c.timeouts.validator = seconds_field(t, "validator", c.timeouts.validator);
      c.timeouts.matcher = seconds_field(t, "matcher", c.timeouts.matcher);
      c.timeouts.predictor = seconds_field(t, "predictor", c.timeouts.predictor);
    }
    if (j.contains("tokenizer")) {
      const auto& t = j.at("tokenizer");
      c.tokenizer.strip_comments = t.value("strip_comments", true);
      c.tokenizer.preprocessor_atomic = t.value("preprocessor_atomic", true);
    }
    if (j.contains("predictors")) {
      for (const auto& p : j.at("predictors")) {
        nlohmann::json entry = p;
        if (!entry.contains("timeout_s"))
          entry["timeout_s"] = static_cast<double>(c.timeouts.predictor.count()) / 1000.0;
        c.predictors.push_back(PredictorHandle::from_json(entry));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("configuration: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open configuration " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("configuration " + path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

} // namespace p2im
