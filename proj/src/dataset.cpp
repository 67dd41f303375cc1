#include "p2im/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "p2im/errors.hpp"
#include "p2im/token.hpp"

namespace p2im {

int line_count(const std::string& code) {
  if (code.empty())
    return 0;
  int n = static_cast<int>(std::count(code.begin(), code.end(), '\n'));
  return code.back() == '\n' ? n : n + 1;
}

void validate(const Sample& s) {
  const std::string who = "sample '" + s.id + "': ";
  if (s.id.empty())
    throw ManifestError("sample with empty id");
  if (s.label == Label::vulnerable && s.bug_lines.empty())
    throw ManifestError(who + "vulnerable samples need at least one bug line");
  if (s.label == Label::clean && !s.bug_lines.empty())
    throw ManifestError(who + "clean samples must not have bug lines");
  const int lines = line_count(s.code);
  for (int line : s.bug_lines) {
    if (line < 1 || line > lines)
      throw ManifestError(who + "bug line " + std::to_string(line) + " outside 1.." +
                          std::to_string(lines));
  }
}

std::vector<Sample> parse_manifest(const std::string& text) {
  std::vector<Sample> samples;
  std::unordered_set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }))
      continue;
    Sample s;
    try {
      auto j = nlohmann::json::parse(line);
      s.id = j.at("id").get<std::string>();
      s.code = j.at("code").get<std::string>();
      s.label = parse_label(j.at("label").get<std::string>());
      for (const auto& b : j.at("bug_lines")) {
        if (!b.is_number_integer())
          throw std::invalid_argument("bug_lines must hold integers");
        s.bug_lines.insert(b.get<int>());
      }
    } catch (const std::exception& e) {
      throw ManifestError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    validate(s);
    if (!seen.insert(s.id).second)
      throw ManifestError("manifest line " + std::to_string(line_no) + ": duplicate id '" + s.id + "'");
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<Sample> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ManifestError("cannot open manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str());
}

std::string serialize_manifest(const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["code"] = s.code;
    j["label"] = to_string(s.label);
    j["bug_lines"] = std::vector<int>(s.bug_lines.begin(), s.bug_lines.end());
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw ManifestError("cannot write manifest " + path.string());
  out << serialize_manifest(samples);
  if (!out)
    throw ManifestError("error writing manifest " + path.string());
}

// --- synthetic corpora -------------------------------------------------------------

void validate(const SyntheticSpec& spec) {
  if (spec.vulnerable_count < 0 || spec.clean_count < 0)
    throw ContractViolation("synthetic spec: counts must be non-negative");
  if (spec.vulnerable_count + spec.clean_count == 0)
    throw ContractViolation("synthetic spec: corpus would be empty");
  if (spec.min_filler < 0 || spec.max_filler < spec.min_filler)
    throw ContractViolation("synthetic spec: need 0 <= min_filler <= max_filler");
  auto pattern = tokenize(spec.buggy_pattern);
  if (pattern.empty())
    throw ContractViolation("synthetic spec: buggy pattern is empty");
  auto decoy = tokenize(spec.decoy_token);
  if (decoy.size() != 1 || decoy.tokens[0].kind != TokenKind::identifier)
    throw ContractViolation("synthetic spec: decoy must be a single identifier token");
  for (const auto& tok : pattern.tokens) {
    if (tok.text == spec.decoy_token)
      throw ContractViolation("synthetic spec: decoy occurs inside the buggy pattern");
  }
}

namespace {

class SampleWriter {
public:
  explicit SampleWriter(std::uint64_t seed) : rng_(seed) {}

  std::size_t pick(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }
  int number(int lo, int hi) { return lo + static_cast<int>(pick(static_cast<std::size_t>(hi - lo + 1))); }

  // Appends one filler statement (possibly several lines) to `lines`.
  void filler(std::vector<std::string>& lines, int& vars) {
    const std::string in = "    ";
    if (vars == 0 || pick(4) == 0) {
      lines.push_back(in + "int v" + std::to_string(vars) + " = " + std::to_string(number(0, 99)) + ";");
      ++vars;
      return;
    }
    std::string a = "v" + std::to_string(pick(static_cast<std::size_t>(vars)));
    std::string b = "v" + std::to_string(pick(static_cast<std::size_t>(vars)));
    switch (pick(5)) {
    case 0:
      lines.push_back(in + a + " = " + b + " + " + std::to_string(number(1, 9)) + ";");
      break;
    case 1:
      lines.push_back(in + a + " = " + a + " * " + std::to_string(number(2, 5)) + ";");
      break;
    case 2:
      lines.push_back(in + "if (" + a + " > " + std::to_string(number(10, 90)) + ") {");
      lines.push_back(in + in + a + " = " + std::to_string(number(0, 9)) + ";");
      lines.push_back(in + "}");
      break;
    case 3:
      lines.push_back(in + "for (int j = 0; j < " + std::to_string(number(2, 8)) + "; j++) {");
      lines.push_back(in + in + a + " += j;");
      lines.push_back(in + "}");
      break;
    default:
      lines.push_back(in + "while (" + a + " > " + std::to_string(number(50, 200)) + ") {");
      lines.push_back(in + in + a + "--;");
      lines.push_back(in + "}");
      break;
    }
  }

private:
  std::mt19937_64 rng_;
};

std::size_t count_occurrences(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1))
    ++n;
  return n;
}

} // namespace

std::vector<Sample> generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  SampleWriter w(spec.seed);
  const std::string pattern = " " + normalized_text(spec.buggy_pattern) + " ";
  const std::string decoy = " " + spec.decoy_token + " ";

  std::vector<Sample> out;
  const int total = spec.vulnerable_count + spec.clean_count;
  for (int k = 0; k < total; ++k) {
    const bool vulnerable = k < spec.vulnerable_count;
    const int index = vulnerable ? k : k - spec.vulnerable_count;
    const std::string in = "    ";

    Sample s;
    s.id = (vulnerable ? "vuln_" : "clean_") + std::to_string(index);
    s.label = vulnerable ? Label::vulnerable : Label::clean;

    std::vector<std::string> lines = {
        "#include <stdio.h>",
        "",
        "void process_" + std::to_string(k) + "(int idx)",
        "{",
        in + "int buf[10];",
    };
    int vars = 0;
    const int before = w.number(spec.min_filler, spec.max_filler);
    const int after = w.number(spec.min_filler, spec.max_filler);
    const bool decoy_first = w.pick(2) == 0;
    auto plant_decoy = [&] {
      if (vulnerable)
        lines.push_back(in + "int " + spec.decoy_token + " = idx;");
    };

    for (int i = 0; i < before; ++i)
      w.filler(lines, vars);
    if (decoy_first)
      plant_decoy();
    if (vulnerable) {
      lines.push_back(in + spec.buggy_pattern + ";");
      s.bug_lines.insert(static_cast<int>(lines.size()));
    } else {
      lines.push_back(in + "buf[idx % 10] = 1;");
    }
    if (!decoy_first)
      plant_decoy();
    for (int i = 0; i < after; ++i)
      w.filler(lines, vars);
    lines.push_back(in + "printf(\"%d\\n\", buf[0]);");
    lines.push_back("}");

    for (const auto& l : lines)
      s.code += l + "\n";

    const std::string norm = " " + normalized_text(s.code) + " ";
    const std::size_t want = vulnerable ? 1 : 0;
    if (count_occurrences(norm, pattern) != want || count_occurrences(norm, decoy) != want)
      throw ContractViolation("synthetic spec: buggy pattern or decoy collides with generated code");
    validate(s);
    out.push_back(std::move(s));
  }
  return out;
}

} // namespace p2im
