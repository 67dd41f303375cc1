#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "p2im/predictor.hpp"

namespace p2im {

struct Sample {
  std::string id;
  std::string code;
  Label label = Label::clean;
  std::set<int> bug_lines;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Number of lines in `code` (a trailing newline does not open a new line).
int line_count(const std::string& code);

/// Throws ManifestError naming the sample when an invariant is broken.
void validate(const Sample& sample);

/// One JSON object per line: {"id", "code", "label", "bug_lines"}.
std::vector<Sample> load_manifest(const std::filesystem::path& path);
std::vector<Sample> parse_manifest(const std::string& text);
std::string serialize_manifest(const std::vector<Sample>& samples);
void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples);

struct SyntheticSpec {
  int vulnerable_count = 10;
  int clean_count = 10;
  std::string buggy_pattern = "buf[idx] = 1";
  std::string decoy_token = "DECOY";
  int min_filler = 2;
  int max_filler = 6;
  std::uint64_t seed = 1;
};

/// Throws ContractViolation on an unusable spec.
void validate(const SyntheticSpec& spec);

/// Deterministic in `spec.seed`. Vulnerable samples carry the buggy pattern
/// on their single bug line and the decoy on another line; clean samples
/// carry neither. Every program is a complete, compilable C translation unit.
std::vector<Sample> generate_synthetic(const SyntheticSpec& spec);

} // namespace p2im
